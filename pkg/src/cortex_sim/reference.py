"""Single-process reference simulator.

A deliberately plain per-edge event loop with no partitioning, no threads
and no spike buffer.  Every spike is expanded into one pending event per
outgoing edge, keyed by its arrival step.  The distributed engine must
reproduce its spike trains and final weights bit for bit.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .dynamics import PopulationState, step_population


@dataclass
class ReferenceResult:
    spikes: np.ndarray         # (n, 2) int64 rows of (step, neuron id), sorted
    weights: np.ndarray        # final weight of every edge, by edge id
    syn_exc: np.ndarray
    syn_inh: np.ndarray
    u: np.ndarray


def run_reference(net, n_steps: int) -> ReferenceResult:
    g = net.graph
    n = g.n_vertices
    st = PopulationState(net.u_init.astype(np.float64).copy(), np.zeros(n), np.zeros(n),
                         np.zeros(n, dtype=np.int64), net.i_ext.astype(np.float64).copy())
    w = net.weights.astype(np.float64).copy()
    exc, plastic, delays = net.exc, net.plastic, net.delays
    stdp = net.stdp
    if stdp is not None:
        dep, pot, mu = stdp.depression_scale, stdp.potentiation_scale, stdp.mu
        tau_p, tau_m, w_min, dt = stdp.tau_plus, stdp.tau_minus, stdp.w_min, net.dt
    k_plus = np.zeros(g.n_edges)
    last_pre = np.zeros(g.n_edges, dtype=np.int64)
    k_minus = np.zeros(n)
    last_post = np.zeros(n, dtype=np.int64)

    out_order = np.argsort(g.pre, kind="stable")
    out_ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(g.pre, minlength=n), out=out_ptr[1:])
    in_plastic = defaultdict(list)
    for e in np.flatnonzero(plastic):
        in_plastic[int(g.post[e])].append(int(e))

    view = net.drive.columns_for(np.arange(n)) if net.drive is not None and net.drive.active else None
    pending: dict[int, list[tuple[int, int]]] = defaultdict(list)
    log = []
    for s in range(n_steps):
        if view is not None:
            st.syn_exc += view.row(s)
        for pre, e in sorted(pending.pop(s, ())):
            t = int(g.post[e])
            we = w[e]
            if plastic[e]:
                km = k_minus[t] * math.exp(-(float(s - last_post[t]) * dt) / tau_m)
                we = we - dep * we * km
                if not we > w_min:
                    we = w_min
                w[e] = we
                k_plus[e] = k_plus[e] * math.exp(-(float(s - last_pre[e]) * dt) / tau_p) + 1.0
                last_pre[e] = s
            if exc[e]:
                st.syn_exc[t] += we
            else:
                st.syn_inh[t] += we
        fired = np.flatnonzero(step_population(st, net.params))
        for i in fired:
            i = int(i)
            log.append((s, i))
            if stdp is not None:
                for e in in_plastic.get(i, ()):
                    kp = k_plus[e] * math.exp(-(float(s - last_pre[e]) * dt) / tau_p)
                    w[e] = w[e] + pot * w[e] ** mu * kp
                k_minus[i] = k_minus[i] * math.exp(-(float(s - last_post[i]) * dt) / tau_m) + 1.0
                last_post[i] = s
            for e in out_order[out_ptr[i]:out_ptr[i + 1]]:
                pending[s + int(delays[e])].append((i, int(e)))
    spikes = np.array(log, dtype=np.int64).reshape(-1, 2)
    return ReferenceResult(spikes, w, st.syn_exc, st.syn_inh, st.u)
