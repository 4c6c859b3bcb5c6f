"""Pair-based STDP: multiplicative depression, power-law potentiation.

Each plastic synapse carries its own presynaptic trace, updated at spike
delivery (emission + delay); each post-neuron carries a postsynaptic trace.
Both are owned by the thread that owns the post-neuron.

    depression   (pre event):  w <- max(w_min, w - lambda*alpha*w*K_minus)
    potentiation (post event): w <- w + lambda*w_ref**(1-mu)*w**mu*K_plus

Traces are read with the exponential decay since their last event.  All
exponentials go through :func:`math.exp` so that compiled kernels produce
identical bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


class TimeRegression(ValueError):
    pass


@dataclass(frozen=True)
class StdpParams:
    lam: float = 0.1
    alpha: float = 0.057
    mu: float = 0.4
    tau_plus: float = 15.0
    tau_minus: float = 15.0
    w_ref: float = 87.8
    w_min: float = 0.0
    delay_convention: str = "delivery"

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError(f"mu must lie in [0, 1], got {self.mu}")
        if not (self.tau_plus > 0 and self.tau_minus > 0):
            raise ValueError("trace time constants must be > 0")
        if self.w_min < 0:
            raise ValueError("w_min must be >= 0")
        if self.delay_convention != "delivery":
            raise ValueError("only the 'delivery' delay convention is implemented")

    @property
    def depression_scale(self) -> float:
        return self.lam * self.alpha

    @property
    def potentiation_scale(self) -> float:
        return self.lam * self.w_ref ** (1.0 - self.mu)

    def with_(self, **changes) -> "StdpParams":
        return replace(self, **changes)

    def as_array(self, dt: float) -> np.ndarray:
        """Packed constants for the compiled kernels."""
        return np.array([self.depression_scale, self.potentiation_scale, self.mu,
                         self.tau_plus, self.tau_minus, self.w_min, dt], dtype=np.float64)


@dataclass
class SpikeTrace:
    k: float = 0.0
    last_time: float = 0.0


@dataclass
class PlasticSynapseState:
    w: float
    last_pre_update: float = 0.0
    k_plus: float = 0.0


def trace_decay_read(tr: SpikeTrace, t_now: float, tau: float) -> float:
    if t_now < tr.last_time:
        raise TimeRegression(f"trace read at {t_now} before its last event {tr.last_time}")
    return tr.k * math.exp(-(t_now - tr.last_time) / tau)


def trace_bump(tr: SpikeTrace, t_now: float, tau: float) -> SpikeTrace:
    """Register an event at ``t_now``: decay, then add one."""
    tr.k = trace_decay_read(tr, t_now, tau) + 1.0
    tr.last_time = t_now
    return tr


def on_pre_spike(s: PlasticSynapseState, post_trace: SpikeTrace, p: StdpParams,
                 t: float) -> PlasticSynapseState:
    """Depression at a presynaptic arrival; also advances the synapse's pre trace."""
    if t < s.last_pre_update:
        raise TimeRegression(f"pre spike at {t} before last update {s.last_pre_update}")
    k_minus = trace_decay_read(post_trace, t, p.tau_minus)
    s.w = max(p.w_min, s.w - p.depression_scale * s.w * k_minus)
    s.k_plus = s.k_plus * math.exp(-(t - s.last_pre_update) / p.tau_plus) + 1.0
    s.last_pre_update = t
    return s


def on_post_spike(s: PlasticSynapseState, pre_trace: SpikeTrace, p: StdpParams,
                  t: float) -> PlasticSynapseState:
    """Potentiation at a postsynaptic spike using the presynaptic trace value."""
    if t < s.last_pre_update:
        raise TimeRegression(f"post spike at {t} before last pre update {s.last_pre_update}")
    k_plus = trace_decay_read(pre_trace, t, p.tau_plus)
    s.w = s.w + p.potentiation_scale * s.w ** p.mu * k_plus
    return s


def run_pair(pre_times, post_times, w0: float, p: StdpParams) -> float:
    """Event-driven evolution of one synapse over two spike trains.

    Pre events are arrival times.  On ties a pre arrival is processed before
    the post spike, matching the engine's deliver-then-update step order.
    """
    events = sorted([(t, 0) for t in pre_times] + [(t, 1) for t in post_times])
    syn = PlasticSynapseState(w=w0)
    post = SpikeTrace(0.0, events[0][0] if events else 0.0)
    started = False
    for t, kind in events:
        if kind == 0:
            if not started:
                syn.last_pre_update = t
                started = True
            on_pre_spike(syn, post, p, t)
        else:
            pre = SpikeTrace(syn.k_plus, syn.last_pre_update)
            if started:
                on_post_spike(syn, pre, p, t)
            trace_bump(post, t, p.tau_minus)
    return syn.w
