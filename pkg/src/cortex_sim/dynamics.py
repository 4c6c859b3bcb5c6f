"""Leaky integrate-and-fire neurons with exponential synaptic kernels.

Integration is exact for the linear sub-threshold system over one step of
width ``dt``::

    tau_m du/dt = -(u - u_rest) + R (I_syn + I_ext)
    dI_syn/dt   = -I_syn / tau_syn          (+ delta deposits)

Units: ms, mV, pA, MOhm, nS.  ``R * I`` in MOhm*pA is converted to mV by the
factor 1e-3.  In conductance mode the kernel holds a conductance ``g`` (nS)
and the current over a step is ``g * (E_syn - u)`` with ``u`` taken at the
start of the step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal

import numpy as np

SynapseMode = Literal["current_based", "conductance_based"]

MOHM_PA_TO_MV = 1e-3


@dataclass(frozen=True)
class NeuronParams:
    tau_m: float = 10.0
    u_rest: float = -65.0
    R: float = 40.0
    theta: float = -50.0
    u_reset: float = -65.0
    t_refractory: float = 2.0
    tau_syn_exc: float = 0.5
    tau_syn_inh: float = 0.5
    synapse_mode: SynapseMode = "current_based"
    E_syn_exc: float = 0.0
    E_syn_inh: float = -80.0

    def __post_init__(self):
        if not self.tau_m > 0:
            raise ValueError(f"tau_m must be > 0, got {self.tau_m}")
        if not self.theta > self.u_reset:
            raise ValueError(f"theta ({self.theta}) must exceed u_reset ({self.u_reset})")
        if self.t_refractory < 0:
            raise ValueError("t_refractory must be >= 0")
        if not (self.tau_syn_exc > 0 and self.tau_syn_inh > 0):
            raise ValueError("synaptic time constants must be > 0")
        if self.synapse_mode not in ("current_based", "conductance_based"):
            raise ValueError(f"unknown synapse_mode {self.synapse_mode!r}")

    def with_(self, **changes) -> "NeuronParams":
        return replace(self, **changes)


@dataclass
class NeuronState:
    u: float
    syn_exc: float = 0.0
    syn_inh: float = 0.0
    refractory_steps_left: int = 0
    i_ext: float = 0.0


@dataclass(frozen=True)
class Propagators:
    """Per-step coefficients for one ``(NeuronParams, dt)`` pair.

    ``membrane`` is exp(-dt/tau_m); ``syn_exc``/``syn_inh`` are the kernel
    decays; ``cross_exc``/``cross_inh`` map kernel state at step start into
    the membrane increment (mV per pA); ``drive`` maps a constant current.
    """

    dt: float
    membrane: float
    syn_exc: float
    syn_inh: float
    cross_exc: float
    cross_inh: float
    drive: float
    refractory_steps: int
    conductance: bool = field(default=False)


def _cross_term(R: float, tau_m: float, tau_s: float, dt: float) -> float:
    # (R/tau_m) * exp(-dt/tau_m) * (exp(a dt) - 1) / a,  a = 1/tau_m - 1/tau_s
    a = 1.0 / tau_m - 1.0 / tau_s
    if a == 0.0:
        ratio = dt
    else:
        ratio = math.expm1(a * dt) / a
    return MOHM_PA_TO_MV * R / tau_m * math.exp(-dt / tau_m) * ratio


def make_propagators(p: NeuronParams, dt: float) -> Propagators:
    if not dt > 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    return Propagators(
        dt=dt,
        membrane=math.exp(-dt / p.tau_m),
        syn_exc=math.exp(-dt / p.tau_syn_exc),
        syn_inh=math.exp(-dt / p.tau_syn_inh),
        cross_exc=_cross_term(p.R, p.tau_m, p.tau_syn_exc, dt),
        cross_inh=_cross_term(p.R, p.tau_m, p.tau_syn_inh, dt),
        drive=MOHM_PA_TO_MV * p.R * -math.expm1(-dt / p.tau_m),
        refractory_steps=int(round(p.t_refractory / dt)),
        conductance=p.synapse_mode == "conductance_based",
    )


def deposit(state: NeuronState, weight: float, polarity: str = "exc") -> NeuronState:
    """Add one synaptic event onto the excitatory or inhibitory kernel."""
    if polarity == "exc":
        state.syn_exc += weight
    elif polarity == "inh":
        state.syn_inh += weight
    else:
        raise ValueError(f"polarity must be 'exc' or 'inh', got {polarity!r}")
    return state


def step_neuron(state: NeuronState, p: NeuronParams, prop: Propagators) -> tuple[NeuronState, bool]:
    """Advance one neuron by one step; returns ``(state, spiked)``.

    The evaluation order here is mirrored exactly by :func:`step_population`
    and the compiled engine kernel so that all three agree bit for bit.
    """
    if state.refractory_steps_left > 0:
        state.refractory_steps_left -= 1
        state.syn_exc *= prop.syn_exc
        state.syn_inh *= prop.syn_inh
        state.u = p.u_reset
        return state, False
    if prop.conductance:
        i_e = state.syn_exc * (p.E_syn_exc - state.u)
        i_i = state.syn_inh * (p.E_syn_inh - state.u)
    else:
        i_e = state.syn_exc
        i_i = state.syn_inh
    v = state.u - p.u_rest
    v = prop.membrane * v + prop.cross_exc * i_e + prop.cross_inh * i_i + prop.drive * state.i_ext
    state.u = v + p.u_rest
    state.syn_exc *= prop.syn_exc
    state.syn_inh *= prop.syn_inh
    if state.u >= p.theta:
        state.u = p.u_reset
        state.refractory_steps_left = prop.refractory_steps
        return state, True
    return state, False


# --- vectorised population form ---------------------------------------------

PARAM_COLUMNS = (
    "membrane", "cross_exc", "cross_inh", "drive", "syn_exc", "syn_inh",
    "u_rest", "theta", "u_reset", "refractory_steps", "conductance",
    "E_syn_exc", "E_syn_inh",
)
N_PARAM_COLUMNS = len(PARAM_COLUMNS)


def param_row(p: NeuronParams, prop: Propagators) -> np.ndarray:
    """Flatten params and propagators into one float64 row (see PARAM_COLUMNS)."""
    return np.array([
        prop.membrane, prop.cross_exc, prop.cross_inh, prop.drive,
        prop.syn_exc, prop.syn_inh, p.u_rest, p.theta, p.u_reset,
        float(prop.refractory_steps), float(prop.conductance),
        p.E_syn_exc, p.E_syn_inh,
    ], dtype=np.float64)


@dataclass
class PopulationState:
    """Structure-of-arrays neuron state."""

    u: np.ndarray
    syn_exc: np.ndarray
    syn_inh: np.ndarray
    refractory: np.ndarray
    i_ext: np.ndarray

    @classmethod
    def resting(cls, params: np.ndarray, i_ext=None) -> "PopulationState":
        n = params.shape[0]
        u = params[:, PARAM_COLUMNS.index("u_rest")].copy()
        return cls(u, np.zeros(n), np.zeros(n), np.zeros(n, dtype=np.int64),
                   np.zeros(n) if i_ext is None else np.asarray(i_ext, dtype=np.float64).copy())

    def copy(self) -> "PopulationState":
        return PopulationState(self.u.copy(), self.syn_exc.copy(), self.syn_inh.copy(),
                               self.refractory.copy(), self.i_ext.copy())


def step_population(st: PopulationState, params: np.ndarray) -> np.ndarray:
    """Vectorised :func:`step_neuron` over rows of ``params``; returns spiked mask."""
    (P22, P21e, P21i, P20, P11e, P11i, u_rest, theta, u_reset,
     ref_steps, cond, E_e, E_i) = params.T
    refr = st.refractory > 0
    is_cond = cond != 0.0
    i_e = np.where(is_cond, st.syn_exc * (E_e - st.u), st.syn_exc)
    i_i = np.where(is_cond, st.syn_inh * (E_i - st.u), st.syn_inh)
    v = st.u - u_rest
    v = P22 * v + P21e * i_e + P21i * i_i + P20 * st.i_ext
    u_new = v + u_rest
    st.syn_exc *= P11e
    st.syn_inh *= P11i
    spiked = ~refr & (u_new >= theta)
    st.u = np.where(refr | spiked, u_reset, u_new)
    st.refractory = np.where(refr, st.refractory - 1,
                             np.where(spiked, ref_steps.astype(np.int64), st.refractory))
    return spiked


def lif_period(p: NeuronParams, i_ext: float) -> float:
    """Closed-form inter-spike interval (ms) under constant drive, or inf."""
    drive = MOHM_PA_TO_MV * p.R * i_ext
    gap = p.theta - p.u_rest
    start = p.u_reset - p.u_rest
    if drive <= gap:
        return math.inf
    return p.t_refractory + p.tau_m * math.log((drive - start) / (drive - gap))


def psp_peak_per_pA(p: NeuronParams, tau_syn: float | None = None) -> float:
    """Peak PSP amplitude (mV) caused by a 1 pA current-kernel deposit."""
    ts = p.tau_syn_exc if tau_syn is None else tau_syn
    tm = p.tau_m
    if ts == tm:
        t_peak = tm
        peak = t_peak / tm * math.exp(-t_peak / tm)
    else:
        t_peak = math.log(ts / tm) * ts * tm / (ts - tm)
        peak = ts / (ts - tm) * (math.exp(-t_peak / ts) - math.exp(-t_peak / tm))
    return MOHM_PA_TO_MV * p.R * peak
