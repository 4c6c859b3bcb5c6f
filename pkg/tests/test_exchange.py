import threading

import numpy as np
import pytest

from cortex_sim.engine import AuditViolation
from cortex_sim.exchange import (ExchangeError, ExchangeFabric, ExchangeTimeout, RankTimeline,
                                 SpikeMessage, broadcast_spikes, exchange_round, gather_round,
                                 run_distributed)
from cortex_sim.netbuild import build_network, make_balanced_random_net
from cortex_sim.reference import run_reference
from netfixtures import block_plan


def test_one_rank_fabric_is_local():
    f = ExchangeFabric(1)
    assert broadcast_spikes(f, 0, SpikeMessage(0, 0, [4, 9])) == 0
    assert exchange_round(f, 0, 1, [2, 3]).tolist() == [2, 3]
    assert f.sent.sum() == 0


def test_empty_broadcast_counts():
    f = ExchangeFabric(4)
    assert broadcast_spikes(f, 2, SpikeMessage(2, 0, [])) == 3
    assert f.sent.tolist() == [0, 0, 3, 0] and f.in_flight == 3


def test_step_regression():
    f = ExchangeFabric(2)
    broadcast_spikes(f, 0, SpikeMessage(0, 5, []))
    with pytest.raises(ExchangeError, match="step 5 after step 5"):
        broadcast_spikes(f, 0, SpikeMessage(0, 5, []))
    with pytest.raises(ExchangeError):
        broadcast_spikes(f, 1, SpikeMessage(0, 6, []))
    with pytest.raises(ExchangeError, match="ascending"):
        SpikeMessage(0, 1, [3, 1])


def _run_round(n, payload, step=0):
    f = ExchangeFabric(n, timeout=5)
    out = [None] * n

    def body(r):
        out[r] = exchange_round(f, r, step, payload[r])

    th = [threading.Thread(target=body, args=(r,)) for r in range(n)]
    for t in th:
        t.start()
    for t in th:
        t.join()
    return out, f


def test_gather_union():
    out, f = _run_round(3, [[], [], []])
    assert all(o.size == 0 for o in out)
    out, f = _run_round(3, [[], [3], [1, 7]])
    assert all(o.tolist() == [1, 3, 7] for o in out)
    assert f.in_flight == 0


def test_gather_duplicate_is_error():
    f = ExchangeFabric(2, timeout=2)
    broadcast_spikes(f, 1, SpikeMessage(1, 0, [3]))
    with pytest.raises(ExchangeError, match="duplicate"):
        gather_round(f, 0, 0, [3])


def test_timeout_names_missing():
    f = ExchangeFabric(4, timeout=0.2)
    broadcast_spikes(f, 1, SpikeMessage(1, 0, []))
    with pytest.raises(ExchangeTimeout) as ei:
        gather_round(f, 0, 0, [])
    assert ei.value.missing == [2, 3] and "[2, 3]" in str(ei.value)


def test_messages_held_for_later_step():
    f = ExchangeFabric(2, timeout=2)
    broadcast_spikes(f, 1, SpikeMessage(1, 0, [5]))
    broadcast_spikes(f, 1, SpikeMessage(1, 1, [6]))
    assert gather_round(f, 0, 1, []).tolist() == [6]
    assert gather_round(f, 0, 0, []).tolist() == [5]


def test_overlap_fraction():
    tl = RankTimeline(compute=[(0, 0.0, 1.0)], exchange=[(0, 0.5, 1.5)])
    assert tl.overlap_fraction() == pytest.approx(0.5)
    assert RankTimeline().overlap_fraction() == 0.0


@pytest.fixture(scope="module")
def small_bal():
    cfg = make_balanced_random_net(1.0, n_per_scale=200, indegree=30, t_sim=40.0, seed=9,
                                   d_min=0.3)
    net = build_network(cfg)
    return net, run_reference(net, 400)


@pytest.mark.parametrize("ranks,overlap", [(2, True), (2, False), (3, True), (4, False)])
def test_rank_count_invariance(small_bal, ranks, overlap):
    net, ref = small_bal
    assert net.d_min == 3
    res = run_distributed(net, block_plan(200, ranks, 2), 400, overlap=overlap, trace=True)
    assert np.array_equal(res.spikes, ref.spikes)
    assert np.array_equal(res.weights, ref.weights)
    # every step plus the final flush: n - 1 messages per rank per round
    assert res.messages_sent == res.messages_received == ranks * (ranks - 1) * 400
    if overlap:
        assert all(len(tl.exchange) == 400 for tl in res.timelines)


def test_latency_changes_time_not_output(small_bal):
    net, ref = small_bal
    plan = block_plan(200, 2, 1)
    fast = run_distributed(net, plan, 100)
    slow = run_distributed(net, plan, 100, latency=0.005)
    sub = ref.spikes[ref.spikes[:, 0] < 100]
    assert np.array_equal(fast.spikes, sub) and np.array_equal(slow.spikes, sub)
    assert slow.wall_time > fast.wall_time and slow.wall_time >= 100 * 0.005


def test_rank_failure_propagates(small_bal):
    net, ref = small_bal
    plan = block_plan(200, 2, 4)
    early = ref.spikes[ref.spikes[:, 0] < 100, 1]
    cand = np.isin(net.graph.pre, early) & (plan.thread_of[net.graph.post] == 0)
    bad = int(np.flatnonzero(cand)[0])
    with pytest.raises(AuditViolation) as ei:
        run_distributed(net, plan, 200, audit=True, thread_override={bad: 1}, timeout=5)
    assert str(bad) in str(ei.value)
