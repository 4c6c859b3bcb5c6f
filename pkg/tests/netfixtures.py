"""Small hand-wired networks for engine and exchange tests."""

import numpy as np

from cortex_sim.decomposition import AreaSpec, PartitionPlan, thread_ranges_for
from cortex_sim.dynamics import make_propagators, param_row
from cortex_sim.engine import build_rank_state
from cortex_sim.graph import build_graph
from cortex_sim.netbuild import BALANCED_NEURON, Dist, Network, make_balanced_random_net


def hand_network(n, edges, weights, delays, *, u_init=None, i_ext=None, exc=None,
                 plastic=None, stdp=None, d_min=1, d_max=15, dt=0.1, neuron=BALANCED_NEURON):
    g = build_graph(n, edges)
    m = g.n_edges
    row = param_row(neuron, make_propagators(neuron, dt))
    return Network(
        graph=g,
        weights=np.asarray(weights, dtype=np.float64),
        delays=np.asarray(delays, dtype=np.int64),
        exc=np.ones(m, bool) if exc is None else np.asarray(exc, bool),
        plastic=np.zeros(m, bool) if plastic is None else np.asarray(plastic, bool),
        params=np.tile(row, (n, 1)),
        u_init=np.full(n, neuron.u_rest) if u_init is None else np.asarray(u_init, float),
        i_ext=np.zeros(n) if i_ext is None else np.asarray(i_ext, float),
        drive=None, dt=dt, d_min=d_min, d_max=d_max, stdp=stdp,
        coords=np.zeros((n, 3)), area_of=np.zeros(n, np.int64), area_names=["A"],
        pop_of=np.zeros(n, np.int64), pop_names=["A/p"],
        areas=[AreaSpec(0, "A", n)], seed=0)


BIG = 1e5  # pA; enough to make the target fire in the same step


def chain_network():
    """0 starts above threshold; 0 -> 1 (1 step) -> 2 (5 steps) -> 0 (15 steps)."""
    return hand_network(3, [(0, 1), (1, 2), (2, 0)], [BIG, BIG, 1.0], [1, 5, 15],
                        u_init=[21.0, 0.0, 0.0])


def deposit_schedule(net, plan, n_steps):
    """Step every rank by hand, recording each kernel change as (step, neuron, amount)."""
    sts = [build_rank_state(net, plan, r) for r in range(plan.n_ranks)]
    deposits, spikes, prev = [], [], np.zeros(0, np.int64)
    for s in range(n_steps):
        for st in sts:
            if s > 0:
                st.enqueue_spikes(prev, s - 1)
        out = []
        for st in sts:
            before = st.syn_e.copy()
            st.deliver_interactions(s)
            for i in np.flatnonzero(st.syn_e != before):
                deposits.append((s, int(st.owned[i]), float(st.syn_e[i] - before[i])))
            out.append(st.update_neurons(s))
        prev = np.sort(np.concatenate(out))
        spikes += [(s, int(i)) for i in prev]
    return deposits, spikes


def block_plan(n, n_ranks, n_threads):
    """Contiguous id blocks per rank."""
    sizes = [len(x) for x in np.array_split(np.arange(n), n_ranks)]
    rank_of = np.repeat(np.arange(n_ranks), sizes)
    return PartitionPlan(rank_of, thread_ranges_for(rank_of, n_ranks, n_threads),
                         n_ranks, n_threads)


def criterion2_config(t_sim=1000.0):
    """1000 LIF neurons, indegree 100, delays uniform over 1..15 steps."""
    return make_balanced_random_net(1.0, n_per_scale=1000,
                                    delay=Dist("uniform", low=0.05, high=1.55), t_sim=t_sim)
