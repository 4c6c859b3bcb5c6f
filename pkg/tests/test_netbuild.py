import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cortex_sim.exchange import run_distributed
from cortex_sim.netbuild import (AreaConfig, ConfigError, ConnectomeMatrix, Dist, NetworkConfig,
                                 PopulationConfig, ProjectionConfig, build_network,
                                 dump_config, dump_connectome_csv, expected_area_costs,
                                 load_connectome, load_microcircuit_table, make_balanced_random_net,
                                 make_layered_cortex_net, make_wiring_recipe, measured_area_costs,
                                 parse_config, plan_network, quantize_delays, scale_config)
from cortex_sim.plasticity import StdpParams

MINIMAL = """
areas:
  - name: A
    populations:
      - {name: E, count: 10}
"""


def test_minimal_config_defaults_and_roundtrip():
    cfg = parse_config(MINIMAL)
    assert cfg.dt == 0.1 and cfg.seed == 1 and cfg.stdp is None
    assert cfg.areas[0].populations[0].neuron.tau_m == 10.0
    assert parse_config(dump_config(cfg)) == cfg


@pytest.mark.parametrize("text,msg", [
    (MINIMAL + "projections:\n  - {source: A/E, target: A/E, rule: pairwise_bernoulli, p: 1.5, weight: 1.0}\n",
     r"projections\[0\]\.p: probability out of range"),
    ("d_min: 2.0\nd_max: 1.0\n" + MINIMAL, r"d_min .* > d_max"),
    (MINIMAL.replace("count: 10", "count: 0"), "count: must be > 0"),
    (MINIMAL + "projections:\n  - {source: A/X, target: A/E, rule: fixed_indegree, indegree: 1, weight: 1.0}\n",
     "unknown population"),
    (MINIMAL + "bogus: 1\n", "bogus"),
    ("areas: [\n", "line"),
    ("neuron: {synapse_mode: conductance_based}\n" + MINIMAL
     + "projections:\n  - {source: A/E, target: A/E, indegree: 1, weight: -2.0, polarity: inh}\n",
     "conductance-based target needs weight >= 0"),
])
def test_config_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_full_config_roundtrip(tmp_path):
    cfg = make_balanced_random_net(0.05)
    cfg2 = parse_config(dump_config(cfg))
    assert cfg2 == cfg
    p = tmp_path / "c.yaml"
    p.write_text(dump_config(cfg2))
    from cortex_sim.netbuild import load_config
    assert load_config(p) == cfg


@given(st.floats(0.01, 2.0), st.integers(0, 2**31), st.floats(0.0, 1.0),
       st.sampled_from(["fixed_indegree", "pairwise_bernoulli"]))
def test_config_roundtrip_property(dt, seed, p, rule):
    cfg = NetworkConfig(dt=dt, d_min=dt, d_max=3 * dt, seed=seed,
                        areas=[AreaConfig("A", [PopulationConfig("E", 3, poisson_rate=10.0,
                                                                 u_init=Dist("normal", mean=-60.0, std=p))])],
                        projections=[ProjectionConfig("A/E", "A/E", rule,
                                                      indegree=2 if rule == "fixed_indegree" else 0,
                                                      p=p if rule == "pairwise_bernoulli" else 0.0,
                                                      weight=Dist("uniform", low=0.0, high=p),
                                                      delay=Dist("constant", value=dt))],
                        stdp=StdpParams(mu=p))
    assert parse_config(dump_config(cfg)) == cfg


def _write(tmp_path, name, labels, mat):
    p = tmp_path / name
    dump_connectome_csv(labels, np.asarray(mat, float), p)
    return p


def test_connectome_loading(tmp_path):
    w = _write(tmp_path, "w.csv", ["V1", "M1"], [[0, 0.5], [0.25, 0]])
    c = load_connectome(w)
    assert c.labels == ["V1", "M1"] and c.weights[0, 1] == 0.5 and c.distances is None
    d = _write(tmp_path, "d.csv", ["V1", "M1"], [[0, 2.0], [2.0, 0]])
    assert load_connectome(w, d).distances[1, 0] == 2.0
    bad = _write(tmp_path, "bad.csv", ["V1", "M1"], [[0, 2.0], [3.0, 0]])
    with pytest.raises(ConfigError, match="not symmetric"):
        load_connectome(w, bad)
    (tmp_path / "rag.csv").write_text(",V1,M1\nV1,0,1\nM1,0\n")
    with pytest.raises(ConfigError, match="row 3"):
        load_connectome(tmp_path / "rag.csv")
    (tmp_path / "nan.csv").write_text(",V1\nV1,abc\n")
    with pytest.raises(ConfigError, match="non-numeric"):
        load_connectome(tmp_path / "nan.csv")


def test_distance_fallback():
    d = Dist("distance", velocity=2.0, offset=0.5, fallback=Dist("constant", value=1.0))
    cfg = NetworkConfig(d_min=0.1, d_max=5.0, areas=[
        AreaConfig("A", [PopulationConfig("E", 20)]), AreaConfig("B", [PopulationConfig("E", 20)])],
        projections=[ProjectionConfig("A/E", "B/E", "fixed_indegree", indegree=3,
                                      weight=Dist("constant", value=1.0), delay=d)])
    assert np.all(build_network(cfg).delays == 10)
    conn = ConnectomeMatrix(["A", "B"], np.zeros((2, 2)), np.array([[0, 3.0], [3.0, 0]]))
    assert np.all(build_network(cfg, conn).delays == 20)  # 3/2 + 0.5 ms


def test_quantize_delays():
    assert quantize_delays(np.array([0.0, 0.04, 0.16, 0.26, 9.0]), 0.1, 1, 15).tolist() == \
        [1, 1, 2, 3, 15]


def test_fixed_indegree_exact():
    cfg = make_balanced_random_net(0.05)
    net = build_network(cfg)
    indeg = net.graph.in_degree()
    assert np.all(indeg == 100)
    e = net.exc
    assert np.all(np.bincount(net.graph.post[e], minlength=net.n_neurons) == 80)
    pl = net.plastic
    assert np.all(net.exc[pl]) and np.all(net.graph.pre[pl] < 400) and np.all(net.graph.post[pl] < 400)


def test_doubling_scale_keeps_indegree():
    a = build_network(make_balanced_random_net(0.02))
    b = build_network(make_balanced_random_net(0.04))
    assert b.n_neurons == 2 * a.n_neurons
    assert set(a.graph.in_degree().tolist()) == set(b.graph.in_degree().tolist()) == {100}


def test_build_determinism():
    cfg = make_balanced_random_net(0.05, seed=3)
    assert build_network(cfg).fingerprint() == build_network(cfg).fingerprint()
    other = build_network(make_balanced_random_net(0.05, seed=4))
    assert other.fingerprint() != build_network(cfg).fingerprint()
    # the build is independent of the decomposition knobs
    cfg.decomposition.ranks, cfg.decomposition.threads = 4, 8
    assert build_network(cfg).fingerprint() == build_network(make_balanced_random_net(0.05, seed=3)).fingerprint()


def _two_area_cfg(n=1000, p_in=0.1, p_out=0.001, seed=1):
    pops = lambda: [PopulationConfig("E", n)]
    w = Dist("constant", value=1.0)
    projs = [ProjectionConfig(f"{s}/E", f"{t}/E", "pairwise_bernoulli",
                              p=p_in if s == t else p_out, weight=w, delay=Dist("constant", value=1.0))
             for s in "AB" for t in "AB"]
    return NetworkConfig(seed=seed, areas=[AreaConfig("A", pops()),
                                           AreaConfig("B", pops(), ((2.0, 3.0), (0, 1), (0, 1)))],
                         projections=projs)


def test_inter_area_binomial_bounds():
    net = build_network(_two_area_cfg())
    inter = np.sum(net.area_of[net.graph.pre] != net.area_of[net.graph.post])
    for s, t in ((0, 1), (1, 0)):
        m = np.sum((net.area_of[net.graph.pre] == s) & (net.area_of[net.graph.post] == t))
        mean, sd = 1000 * 1000 * 0.001, math.sqrt(1000 * 1000 * 0.001 * 0.999)
        assert abs(m - mean) < 5 * sd
    assert inter > 0


def test_expected_costs_track_measured():
    cfg = _two_area_cfg()
    exp, meas = expected_area_costs(cfg), measured_area_costs(build_network(cfg))
    for e, m in zip(exp, meas):
        assert e.n_post == m.n_post
        assert abs(e.n_edges - m.n_edges) < 5 * math.sqrt(m.n_edges)
        assert abs(e.n_pre - m.n_pre) < 5 * math.sqrt(max(1, m.n_pre - m.n_post)) + 5


def test_lambda_zero_keeps_weights():
    cfg = make_balanced_random_net(1.0, n_per_scale=300, indegree=40, t_sim=50.0,
                                   stdp=StdpParams(lam=0.0))
    net = build_network(cfg)
    res = run_distributed(net, plan_network(net, 1, 1), 500)
    assert res.spikes.shape[0] > 0 and np.array_equal(res.weights, net.weights)


def test_scale_and_wiring_recipe():
    cfg = make_balanced_random_net(0.05)
    s = scale_config(cfg, 2.0)
    assert s.n_neurons == 2 * cfg.n_neurons
    r = make_wiring_recipe(cfg)
    assert r.expected_edges == cfg.n_neurons * 100
    with pytest.raises(ConfigError):
        make_balanced_random_net(0)


def test_microcircuit_table_and_toy():
    tab = load_microcircuit_table()
    assert len(tab["populations"]) == 8 and len(tab["conn_probs"]) == 8
    conn = ConnectomeMatrix(["V1", "V2"], np.array([[0, 0.02], [0.02, 0]]))
    cfg = make_layered_cortex_net(conn, neurons_per_area=300, t_sim=50.0)
    net = build_network(cfg)
    res = run_distributed(net, plan_network(net, 2, 2), 500)
    assert res.spikes.shape[0] > 0
    with pytest.raises(ConfigError):
        make_layered_cortex_net(conn, area_sizes={"V1": 0})


def test_zeroed_connectome_areas_independent():
    labels = ["V1", "V2"]
    both = make_layered_cortex_net(ConnectomeMatrix(labels, np.zeros((2, 2))),
                                   neurons_per_area=200, t_sim=30.0)
    net = build_network(both)
    res = run_distributed(net, plan_network(net, 2, 1), 300)
    offset = 0
    for lab in labels:
        alone = make_layered_cortex_net(ConnectomeMatrix([lab], np.zeros((1, 1))),
                                        neurons_per_area=200, t_sim=30.0)
        na = build_network(alone)
        r = run_distributed(na, plan_network(na, 1, 1), 300)
        mine = res.spikes[(res.spikes[:, 1] >= offset) & (res.spikes[:, 1] < offset + na.n_neurons)]
        assert r.spikes.shape[0] > 0
        assert np.array_equal(mine - [0, offset], r.spikes)
        offset += na.n_neurons
