"""Two layered areas linked by a connectome, with per-area rasters."""

import numpy as np

from cortex_sim import io
from cortex_sim.exchange import run_distributed
from cortex_sim.netbuild import (ConnectomeMatrix, build_network, make_layered_cortex_net,
                                 measured_area_costs, plan_network)

conn = ConnectomeMatrix(["V1", "V2"], np.array([[0.0, 0.02], [0.01, 0.0]]),
                        np.array([[0.0, 10.0], [10.0, 0.0]]))
cfg = make_layered_cortex_net(conn, neurons_per_area=400, t_sim=100.0)
net = build_network(cfg, conn)
for name, c in zip(net.area_names, measured_area_costs(net)):
    print(name, c)

plan = plan_network(net, 4, 2)
print("neurons per rank:", np.bincount(plan.rank_of).tolist())
res = run_distributed(net, plan, cfg.n_steps)

parts = io.split_by_area(res.spikes, net.area_of, len(net.area_names))
for name, sp in zip(net.area_names, parts):
    n = int(np.sum(net.area_of == net.area_names.index(name)))
    print(f"{name}: {sp.shape[0]} spikes, {sp.shape[0] / n / (cfg.t_sim * 1e-3):.1f} Hz")
