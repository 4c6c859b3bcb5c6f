import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

import oracles
from cortex_sim.plasticity import (PlasticSynapseState, SpikeTrace, StdpParams, TimeRegression,
                                   on_post_spike, on_pre_spike, run_pair, trace_bump,
                                   trace_decay_read)


def test_trace_decay():
    tr = SpikeTrace(1.0, 0.0)
    assert trace_decay_read(tr, 15.0, 15.0) == pytest.approx(0.3678794412, abs=1e-10)
    assert trace_decay_read(tr, 15.0, 15.0) == pytest.approx(oracles.exp_mp(-1), rel=1e-15)
    assert trace_decay_read(SpikeTrace(0.7, 3.0), 3.0, 15.0) == 0.7
    assert trace_decay_read(SpikeTrace(0.0, 0.0), 123.0, 15.0) == 0.0
    with pytest.raises(TimeRegression):
        trace_decay_read(SpikeTrace(1.0, 5.0), 4.0, 15.0)
    tr = trace_bump(SpikeTrace(1.0, 0.0), 15.0, 15.0)
    assert tr.k == pytest.approx(1 + math.exp(-1)) and tr.last_time == 15.0


def test_depression_examples():
    p = StdpParams(lam=0.1, alpha=0.5)
    s = on_pre_spike(PlasticSynapseState(100.0), SpikeTrace(0.0, 0.0), p, 1.0)
    assert s.w == 100.0
    s = on_pre_spike(PlasticSynapseState(100.0), SpikeTrace(1.0, 0.0), p, 0.0)
    assert s.w == pytest.approx(95.0, rel=1e-15)
    assert oracles.stdp_pair_sum([1e-13], [0.0], 100.0, 0.1, 0.5, 0.4, 87.8, 15, 15) \
        == pytest.approx(95.0, rel=1e-12)
    big = StdpParams(lam=1.0, alpha=5.0, w_min=2.0)
    s = on_pre_spike(PlasticSynapseState(10.0), SpikeTrace(1.0, 0.0), big, 0.0)
    assert s.w == 2.0
    with pytest.raises(TimeRegression):
        on_pre_spike(PlasticSynapseState(1.0, last_pre_update=5.0), SpikeTrace(), p, 4.0)


def test_potentiation_examples():
    p = StdpParams(lam=0.1, mu=0.4, w_ref=100.0)
    s = on_post_spike(PlasticSynapseState(100.0), SpikeTrace(1.0, 0.0), p, 0.0)
    assert s.w == pytest.approx(110.0, rel=1e-15)
    assert oracles.stdp_pair_sum([0.0], [0.0], 100.0, 0.1, 0.057, 0.4, 100.0, 15, 15) \
        == pytest.approx(110.0, rel=1e-12)
    for w in (0.5, 3.0, 40.0):
        s = on_post_spike(PlasticSynapseState(w), SpikeTrace(0.8, 0.0), p.with_(mu=1.0), 0.0)
        assert s.w == pytest.approx(w * (1 + 0.1 * 0.8), rel=1e-14)
        s = on_post_spike(PlasticSynapseState(w), SpikeTrace(0.8, 0.0), p.with_(mu=0.0), 0.0)
        assert s.w == pytest.approx(w + 0.1 * 100.0 * 0.8, rel=1e-14)


def test_invalid_params():
    for bad in (dict(mu=1.5), dict(lam=-1), dict(tau_plus=0), dict(w_min=-1),
                dict(delay_convention="emission")):
        with pytest.raises(ValueError):
            StdpParams(**bad)


def test_run_pair_against_oracle_small():
    p = StdpParams()
    pre, post = [1.0, 4.0, 9.0, 9.0 + 1e-9], [2.0, 4.0, 30.0]
    want = oracles.stdp_pair_sum(pre, post, 50.0, p.lam, p.alpha, p.mu, p.w_ref,
                                 p.tau_plus, p.tau_minus)
    assert run_pair(pre, post, 50.0, p) == pytest.approx(want, rel=1e-13)


def test_lambda_zero_freezes_weight():
    rng = np.random.default_rng(0)
    pre = oracles.poisson_train(rng, 0.02, 200)
    post = oracles.poisson_train(rng, 0.02, 200)
    assert run_pair(pre, post, 33.0, StdpParams(lam=0.0)) == 33.0


@given(st.integers(0, 2**31), st.floats(1.0, 200.0), st.floats(0.0, 1.0))
def test_run_pair_matches_pair_sum(seed, w0, mu):
    rng = np.random.default_rng(seed)
    p = StdpParams(mu=mu, lam=0.02)
    pre = oracles.poisson_train(rng, 0.03, 40)
    post = oracles.poisson_train(rng, 0.03, 40)
    want = oracles.stdp_pair_sum(pre, post, w0, p.lam, p.alpha, p.mu, p.w_ref,
                                 p.tau_plus, p.tau_minus)
    assert run_pair(pre, post, w0, p) == pytest.approx(want, rel=1e-12)
