"""A balanced network on several ranks gives the same spikes as one process."""

import numpy as np

from cortex_sim.exchange import run_distributed
from cortex_sim.netbuild import build_network, make_balanced_random_net, plan_network
from cortex_sim.reference import run_reference

# delays of at least two steps leave room to hide the exchange behind compute
cfg = make_balanced_random_net(0.2, d_min=0.2, t_sim=200.0)
net = build_network(cfg)
steps = cfg.n_steps
print(f"{net.n_neurons} neurons, {net.graph.n_edges} synapses, {steps} steps")

ref = run_reference(net, steps)
print(f"reference: {ref.spikes.shape[0]} spikes")

for ranks, threads, overlap in ((1, 1, True), (2, 2, True), (4, 2, True), (4, 2, False)):
    plan = plan_network(net, ranks, threads, mapping="random", seed=0)
    res = run_distributed(net, plan, steps, overlap=overlap, audit=True, trace=True)
    same = np.array_equal(res.spikes, ref.spikes) and np.array_equal(res.weights, ref.weights)
    # with one rank there is nothing to exchange
    ov = np.mean([t.overlap_fraction() for t in res.timelines]) if ranks > 1 else 0.0
    print(f"ranks={ranks} threads={threads} overlap={overlap!s:5}  identical={same}  "
          f"rate={res.rate_hz(net.n_neurons, steps, net.dt):.2f} Hz  "
          f"messages={res.messages_sent}  hidden comm={ov:.0%}  wall={res.wall_time:.1f}s")
