import re

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cortex_sim import io
from cortex_sim.cli import main
from cortex_sim.netbuild import build_network, load_config
from cortex_sim.reference import run_reference
from netfixtures import hand_network

NET_YAML = """
dt: 0.1
d_min: 0.2
d_max: 2.0
seed: 7
t_sim: 30.0
neuron: {tau_m: 10.0, u_rest: 0.0, theta: 20.0, u_reset: 0.0}
areas:
  - name: A
    populations:
      - {name: E, count: 120, poisson_rate: 40000.0, poisson_weight: 30.0, u_init: {dist: uniform, low: 0.0, high: 20.0}}
      - {name: I, count: 30, poisson_rate: 40000.0, poisson_weight: 30.0}
  - name: B
    extent: [[2.0, 3.0], [0.0, 1.0], [0.0, 1.0]]
    populations:
      - {name: E, count: 100, poisson_rate: 40000.0, poisson_weight: 30.0}
projections:
  - {source: A/E, target: A/E, rule: pairwise_bernoulli, p: 0.1, weight: 30.0, delay: {dist: uniform, low: 0.2, high: 2.0}, plastic: true}
  - {source: A/I, target: A/E, rule: fixed_indegree, indegree: 10, weight: -150.0, delay: 0.5, polarity: inh}
  - {source: A/E, target: A/I, rule: fixed_indegree, indegree: 20, weight: 30.0}
  - {source: A/E, target: B/E, rule: pairwise_bernoulli, p: 0.01, weight: 30.0, delay: {dist: distance, velocity: 2.0, offset: 0.5, fallback: 1.0}}
stdp: {lam: 0.01, w_ref: 1.0}
decomposition: {ranks: 2, threads: 2}
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "net.yaml"
    p.write_text(NET_YAML)
    return p


@given(st.lists(st.tuples(st.integers(0, 10_000), st.integers(0, 500)), unique=True, max_size=200))
def test_raster_roundtrip(tmp_path_factory, rows):
    p = tmp_path_factory.mktemp("r") / "raster.txt"
    sp = np.array(rows, dtype=np.int64).reshape(-1, 2)
    io.write_raster(p, sp, 0.1)
    back = io.read_raster(p, 0.1)
    assert np.array_equal(back, io.sort_spikes(sp))


def test_raster_rejects_unsorted(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("0.2 1\n0.1 1\n")
    with pytest.raises(io.RasterError, match="sorted"):
        io.read_raster(p, 0.1)
    p.write_text("0.1 1\n0.1 1\n")
    with pytest.raises(io.RasterError):
        io.read_raster(p, 0.1)
    p.write_text("0.1\n")
    with pytest.raises(io.RasterError, match=":1:"):
        io.read_raster(p, 0.1)


@given(st.lists(st.tuples(st.integers(0, 999), st.integers(0, 49)), unique=True, max_size=300),
       st.integers(1, 5))
def test_split_by_area_partitions(rows, n_areas):
    sp = np.array(rows, dtype=np.int64).reshape(-1, 2)
    area_of = np.arange(50) % n_areas
    parts = io.split_by_area(sp, area_of, n_areas)
    merged = io.sort_spikes(np.concatenate(parts)) if parts else sp
    assert np.array_equal(merged, io.sort_spikes(sp))
    for a, part in enumerate(parts):
        assert np.all(area_of[part[:, 1]] == a)
    _, rates = io.area_rate_series(sp, area_of, n_areas, 0.1, 1000, 5.0)
    counts = rates * np.bincount(area_of, minlength=n_areas) * 5e-3
    assert np.allclose(counts.sum(axis=0), [len(p) for p in parts])


def test_first_divergence():
    a = np.array([[0, 1], [2, 3], [5, 0]])
    assert io.first_divergence(a, a) is None
    assert io.first_divergence(a, np.array([[0, 1], [2, 4], [5, 0]])) == (2, 3)
    assert io.first_divergence(a, a[:2]) == (5, 0)


def test_reference_empty_and_deterministic():
    net = hand_network(3, [], [], [])
    r = run_reference(net, 100)
    assert r.spikes.shape == (0, 2)
    net = hand_network(3, [(0, 1)], [1e5], [3], u_init=[21.0, 0, 0])
    assert np.array_equal(run_reference(net, 50).spikes, run_reference(net, 50).spikes)


def test_cli_simulate(cfg_path, tmp_path, capsys):
    out = tmp_path / "sim"
    rc = main(["simulate", "--config", str(cfg_path), "--ranks", "4", "--threads", "4",
               "--audit", "--out-dir", str(out), "--steps", "200"])
    assert rc == 0
    for name in ("raster.txt", "stats.csv", "summary.csv", "resolved_config.yaml", "plan.txt"):
        assert (out / name).exists()
    stats = io.read_stats_csv(out / "stats.csv")
    assert len(stats) == 4 and {"n_pre", "n_edges", "overlap_fraction"} <= set(stats[0])
    summary = io.read_stats_csv(out / "summary.csv")[0]
    assert summary["ranks"] == "4" and summary["audit"] == "True"
    sp = io.read_raster(out / "raster.txt", 0.1)
    assert sp.shape[0] == int(summary["spikes"]) > 0
    # same network run without overlap gives the same raster
    out2 = tmp_path / "sim2"
    assert main(["simulate", "--config", str(cfg_path), "--no-overlap", "--out-dir", str(out2),
                 "--steps", "200"]) == 0
    assert (out2 / "raster.txt").read_text() == (out / "raster.txt").read_text()


def test_cli_raster_data(cfg_path, tmp_path):
    out = tmp_path / "sim"
    main(["simulate", "--config", str(cfg_path), "--out-dir", str(out), "--steps", "200"])
    pd = tmp_path / "plot"
    assert main(["raster-data", "--config", str(cfg_path), "--raster", str(out / "raster.txt"),
                 "--out-dir", str(pd), "--steps", "200"]) == 0
    full = io.read_raster(out / "raster.txt", 0.1)
    a = io.read_raster(pd / "raster_A.txt", 0.1)
    b = io.read_raster(pd / "raster_B.txt", 0.1)
    assert np.array_equal(io.sort_spikes(np.concatenate([a, b])), full)
    assert np.all(a[:, 1] < 150) and np.all(b[:, 1] >= 150)
    assert (pd / "area_rates.csv").read_text().startswith("time_ms,A,B")


def test_cli_verify_ok_and_mismatch(cfg_path, capsys):
    assert main(["verify", "--config", str(cfg_path), "--steps", "150"]) == 0
    assert "OK" in capsys.readouterr().out
    rc = main(["verify", "--config", str(cfg_path), "--steps", "150", "--perturb-edge", "0"])
    text = capsys.readouterr().out
    assert rc != 0 and "MISMATCH" in text


def test_cli_verify_reports_step_and_neuron(cfg_path, capsys):
    net = build_network(load_config(cfg_path))
    ref = run_reference(net, 200)
    early = ref.spikes[ref.spikes[:, 0] < 50, 1]
    e = int(np.flatnonzero(np.isin(net.graph.pre, early) & net.exc)[0])
    rc = main(["verify", "--config", str(cfg_path), "--steps", "200", "--perturb-edge", str(e),
               "--perturb-factor", "1000"])
    text = capsys.readouterr().out
    assert rc == 1 and re.search(r"first divergence at step \d+, neuron \d+", text)


def test_cli_plan_and_bench(cfg_path, tmp_path, capsys):
    assert main(["plan", "--config", str(cfg_path), "--ranks", "3", "--out-dir", str(tmp_path)]) == 0
    from cortex_sim.decomposition import load_plan
    assert load_plan(str(tmp_path / "plan.txt")).n_ranks == 3
    assert main(["bench", "--sizes", "0.1,0.2", "--base-neurons", "500", "--steps", "50",
                 "--out-dir", str(tmp_path)]) == 0
    rows = io.read_stats_csv(tmp_path / "bench.csv")
    assert [r["neurons"] for r in rows] == ["50", "100"]
    assert "sim_s" in capsys.readouterr().out


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("areas:\n  - name: A\n    populations:\n      - {name: E, count: 0}\n")
    assert main(["simulate", "--config", str(bad)]) == 2
    assert "count" in capsys.readouterr().err
    assert main(["simulate", "--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["bench", "--sizes", "x"]) == 2
    assert main([]) == 2
