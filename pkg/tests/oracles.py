"""Independent reference implementations used only by the tests.

Nothing here imports the package's algorithms: graph oracles enumerate
Python sets edge by edge, the plasticity oracle recomputes every trace as an
explicit sum over all earlier spikes, and dynamics oracles use mpmath.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np

mpmath.mp.dps = 50


# --- graph ------------------------------------------------------------------

def in_sub(edges, v):
    """(pre, post, edge ids) of the indegree sub-graph, by enumeration."""
    v = set(v)
    eids = {i for i, (a, b) in enumerate(edges) if b in v}
    return {edges[i][0] for i in eids}, v, eids


def out_sub(edges, v):
    v = set(v)
    eids = {i for i, (a, b) in enumerate(edges) if a in v}
    return v, {edges[i][1] for i in eids}, eids


def meet(x, y):
    return tuple(a & b for a, b in zip(x, y))


def join(x, y):
    return tuple(a | b for a, b in zip(x, y))


def spiking(edges, sub, spikes):
    spikes = set(spikes)
    eids = {i for i in sub[2] if edges[i][0] in spikes}
    return spikes & sub[0], {edges[i][1] for i in eids}, eids


def split(edges, sub, owned):
    owned = set(owned)
    loc = {i for i in sub[2] if edges[i][0] in owned}
    rem = sub[2] - loc
    return ({edges[i][0] for i in loc}, owned, loc), ({edges[i][0] for i in rem}, owned, rem)


def random_graph(rng: np.random.Generator, max_v: int = 200, max_e: int = 2000):
    n = int(rng.integers(1, max_v + 1))
    m = int(rng.integers(0, max_e + 1))
    pre = rng.integers(0, n, size=m)
    post = rng.integers(0, n, size=m)
    return n, list(zip(pre.tolist(), post.tolist()))


def random_partition(rng: np.random.Generator, n: int, max_cells: int = 8):
    k = int(rng.integers(1, max_cells + 1))
    label = rng.integers(0, k, size=n)
    return [set(np.flatnonzero(label == c).tolist()) for c in range(k)]


# --- plasticity ----------------------------------------------------------------

def stdp_pair_sum(pre_times, post_times, w0, lam, alpha, mu, w_ref, tau_plus, tau_minus,
                  w_min=0.0):
    """Final weight with every trace evaluated as an explicit all-pairs sum.

    At a pre arrival ``t``: K_minus = sum over post spikes ``s < t`` of
    exp(-(t - s)/tau_minus).  At a post spike ``t``: K_plus = sum over pre
    arrivals ``s <= t`` of exp(-(t - s)/tau_plus).  Pre arrivals sort before
    post spikes at equal times.
    """
    pre = np.sort(np.asarray(pre_times, dtype=np.float64))
    post = np.sort(np.asarray(post_times, dtype=np.float64))
    events = sorted([(t, 0) for t in pre] + [(t, 1) for t in post])
    w = w0
    for t, kind in events:
        if kind == 0:
            past = post[post < t]
            k_minus = math.fsum(np.exp(-(t - past) / tau_minus))
            w = max(w_min, w - lam * alpha * w * k_minus)
        else:
            past = pre[pre <= t]
            k_plus = math.fsum(np.exp(-(t - past) / tau_plus))
            w = w + lam * w_ref ** (1.0 - mu) * w ** mu * k_plus
    return w


def poisson_train(rng: np.random.Generator, rate_per_ms: float, n: int, start: float = 0.0):
    return start + np.cumsum(rng.exponential(1.0 / rate_per_ms, size=n))


# --- dynamics ---------------------------------------------------------------------

def exp_mp(x) -> float:
    return float(mpmath.exp(mpmath.mpf(x)))


def decay_exact(u0, u_rest, tau, t) -> float:
    """u_rest + (u0 - u_rest) exp(-t/tau) in 50-digit arithmetic."""
    return float(mpmath.mpf(u_rest) + (mpmath.mpf(u0) - u_rest) * mpmath.exp(-mpmath.mpf(t) / tau))


def lif_period_exact(tau, R, I, theta, u_rest, t_ref) -> float:
    """Closed-form ISI of an LIF neuron reset to rest under constant current."""
    drive = mpmath.mpf(R) * I / 1000  # MOhm * pA -> mV
    gap = mpmath.mpf(theta) - u_rest
    return float(t_ref + tau * mpmath.log(drive / (drive - gap)))


def psc_response_mp(R, tau_m, tau_s, w, t) -> float:
    """Membrane deflection (mV) at ``t`` after a deposit of ``w`` pA at t = 0."""
    R, tau_m, tau_s, w, t = (mpmath.mpf(x) for x in (R, tau_m, tau_s, w, t))
    if tau_s == tau_m:
        return float(R * w / 1000 * t / tau_m * mpmath.exp(-t / tau_m))
    return float(R * w / 1000 * tau_s / (tau_m - tau_s)
                 * (mpmath.exp(-t / tau_m) - mpmath.exp(-t / tau_s)))
