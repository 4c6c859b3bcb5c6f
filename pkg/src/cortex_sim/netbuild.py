"""Network configuration, connectome loading and seeded network construction.

Configs are YAML documents.  Every random quantity comes from its own
stream keyed by ``(seed, purpose, name)``, so the built network does not
depend on how many ranks or threads later simulate it, and an area built on
its own matches the same area inside a larger network.
"""

from __future__ import annotations

import csv
import math
import zlib
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache
from importlib import resources
from pathlib import Path
from threading import Lock
from typing import Any

import numpy as np
import yaml

from .decomposition import (AreaSpec, CostEstimate, PartitionPlan, area_processes_plan,
                            estimate_area_cost, random_equivalent_map, split_sizes,
                            thread_ranges_for)
from .dynamics import NeuronParams, make_propagators, param_row, psp_peak_per_pA
from .graph import DirectedGraph, build_graph
from .plasticity import StdpParams

# Stream purposes.
_WIRING, _WEIGHT, _DELAY, _COORD, _UINIT, _DRIVE = range(1, 7)


class ConfigError(ValueError):
    pass


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key])))


# --- config schema ----------------------------------------------------------------

@dataclass
class Dist:
    """A scalar distribution: constant, uniform, normal, or distance-based delay."""

    kind: str = "constant"
    value: float = 0.0
    low: float = 0.0
    high: float = 0.0
    mean: float = 0.0
    std: float = 0.0
    velocity: float = 1.0
    offset: float = 0.0
    fallback: "Dist | None" = None

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(n, float(self.value))
        if self.kind == "uniform":
            return rng.uniform(self.low, self.high, size=n)
        if self.kind == "normal":
            return rng.normal(self.mean, self.std, size=n)
        raise ConfigError(f"distribution {self.kind!r} cannot be sampled directly")

    @property
    def expected(self) -> float:
        return {"constant": self.value, "uniform": 0.5 * (self.low + self.high),
                "normal": self.mean}.get(self.kind, self.offset)


_DIST_KEYS = {
    "constant": ("value",), "uniform": ("low", "high"), "normal": ("mean", "std"),
    "distance": ("velocity", "offset"),
}


def _dist_from(obj, where: str) -> Dist:
    if isinstance(obj, (int, float)) and not isinstance(obj, bool):
        return Dist("constant", value=float(obj))
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a number or a distribution table")
    kind = obj.get("dist", "constant")
    if kind not in _DIST_KEYS:
        raise ConfigError(f"{where}.dist: unknown distribution {kind!r}")
    unknown = set(obj) - {"dist", "fallback", *_DIST_KEYS[kind]}
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)} for {kind!r}")
    d = Dist(kind)
    for key in _DIST_KEYS[kind]:
        if key not in obj:
            raise ConfigError(f"{where}.{key}: required for {kind!r}")
        setattr(d, key, float(obj[key]))
    if kind == "uniform" and d.high < d.low:
        raise ConfigError(f"{where}: uniform high < low")
    if kind == "normal" and d.std < 0:
        raise ConfigError(f"{where}.std: must be >= 0")
    if kind == "distance":
        if d.velocity <= 0:
            raise ConfigError(f"{where}.velocity: must be > 0")
        if "fallback" in obj:
            d.fallback = _dist_from(obj["fallback"], f"{where}.fallback")
    return d


def _dist_to(d: Dist):
    if d.kind == "constant":
        return d.value
    out: dict[str, Any] = {"dist": d.kind}
    for key in _DIST_KEYS[d.kind]:
        out[key] = getattr(d, key)
    if d.fallback is not None:
        out["fallback"] = _dist_to(d.fallback)
    return out


@dataclass
class PopulationConfig:
    name: str
    count: int
    neuron: NeuronParams = field(default_factory=NeuronParams)
    i_ext: float = 0.0
    poisson_rate: float = 0.0
    poisson_weight: float = 0.0
    u_init: Dist | None = None


@dataclass
class AreaConfig:
    name: str
    populations: list[PopulationConfig]
    extent: tuple[tuple[float, float], ...] = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))

    @property
    def n_neurons(self) -> int:
        return sum(p.count for p in self.populations)


@dataclass
class ProjectionConfig:
    source: str
    target: str
    rule: str = "fixed_indegree"
    indegree: int = 0
    p: float = 0.0
    weight: Dist = field(default_factory=Dist)
    delay: Dist = field(default_factory=lambda: Dist("constant", value=1.0))
    polarity: str = "exc"
    plastic: bool = False
    allow_autapses: bool = True


@dataclass
class DecompositionConfig:
    ranks: int = 1
    threads: int = 1
    sample_rate: float = 0.05
    mapping: str = "area"


@dataclass
class NetworkConfig:
    dt: float = 0.1
    d_min: float = 0.1
    d_max: float = 1.5
    seed: int = 1
    t_sim: float = 100.0
    areas: list[AreaConfig] = field(default_factory=list)
    projections: list[ProjectionConfig] = field(default_factory=list)
    stdp: StdpParams | None = None
    decomposition: DecompositionConfig = field(default_factory=DecompositionConfig)
    output_dir: str = "out"

    @property
    def d_min_steps(self) -> int:
        return max(1, int(round(self.d_min / self.dt)))

    @property
    def d_max_steps(self) -> int:
        return max(self.d_min_steps, int(round(self.d_max / self.dt)))

    @property
    def n_steps(self) -> int:
        return int(round(self.t_sim / self.dt))

    def population_index(self) -> dict[str, tuple[int, int, int]]:
        """``'area/pop' -> (area index, first id, count)``."""
        out, start = {}, 0
        for a, area in enumerate(self.areas):
            for pop in area.populations:
                out[f"{area.name}/{pop.name}"] = (a, start, pop.count)
                start += pop.count
        return out

    @property
    def n_neurons(self) -> int:
        return sum(a.n_neurons for a in self.areas)


_NEURON_KEYS = {f.name for f in fields(NeuronParams)}
_STDP_KEYS = {f.name for f in fields(StdpParams)}


def _check_keys(obj: dict, allowed: set[str], where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _neuron_from(obj: dict, base: dict, where: str) -> NeuronParams:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where}: expected a table")
    _check_keys(obj, _NEURON_KEYS, where)
    try:
        return NeuronParams(**{**base, **obj})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _num(obj: dict, key: str, where: str, default=None, kind=float):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}.{key}: required")
        return default
    val = obj[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    if kind is int and float(val) != int(val):
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    return kind(val)


def config_from_dict(doc: dict) -> NetworkConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a table")
    _check_keys(doc, {"dt", "d_min", "d_max", "seed", "t_sim", "neuron", "areas",
                      "projections", "stdp", "decomposition", "output_dir"}, "config")
    cfg = NetworkConfig(
        dt=_num(doc, "dt", "config", 0.1), d_min=_num(doc, "d_min", "config", 0.1),
        d_max=_num(doc, "d_max", "config", 1.5), seed=_num(doc, "seed", "config", 1, int),
        t_sim=_num(doc, "t_sim", "config", 100.0),
        output_dir=str(doc.get("output_dir", "out")))
    if cfg.dt <= 0:
        raise ConfigError("config.dt: must be > 0")
    if cfg.d_min <= 0:
        raise ConfigError("config.d_min: must be > 0")
    if cfg.d_min > cfg.d_max:
        raise ConfigError(f"config: d_min ({cfg.d_min}) > d_max ({cfg.d_max})")
    base = doc.get("neuron", {}) or {}
    _check_keys(base, _NEURON_KEYS, "config.neuron")
    names = set()
    for i, a in enumerate(doc.get("areas") or []):
        where = f"areas[{i}]"
        if not isinstance(a, dict) or "name" not in a:
            raise ConfigError(f"{where}.name: required")
        _check_keys(a, {"name", "extent", "populations"}, where)
        pops = []
        for j, p in enumerate(a.get("populations") or []):
            pw = f"{where}.populations[{j}]"
            if not isinstance(p, dict) or "name" not in p:
                raise ConfigError(f"{pw}.name: required")
            _check_keys(p, {"name", "count", "neuron", "i_ext", "poisson_rate",
                            "poisson_weight", "u_init"}, pw)
            count = _num(p, "count", pw, kind=int)
            if count <= 0:
                raise ConfigError(f"{pw}.count: must be > 0, got {count}")
            rate = _num(p, "poisson_rate", pw, 0.0)
            if rate < 0:
                raise ConfigError(f"{pw}.poisson_rate: must be >= 0")
            pops.append(PopulationConfig(
                name=str(p["name"]), count=count,
                neuron=_neuron_from(p.get("neuron", {}) or {}, base, f"{pw}.neuron"),
                i_ext=_num(p, "i_ext", pw, 0.0), poisson_rate=rate,
                poisson_weight=_num(p, "poisson_weight", pw, 0.0),
                u_init=_dist_from(p["u_init"], f"{pw}.u_init") if "u_init" in p else None))
        if not pops:
            raise ConfigError(f"{where}.populations: at least one population required")
        ext = a.get("extent", [[0.0, 1.0]] * 3)
        try:
            extent = tuple((float(lo), float(hi)) for lo, hi in ext)
        except (TypeError, ValueError):
            raise ConfigError(f"{where}.extent: expected [[lo, hi], ...]") from None
        if any(hi < lo for lo, hi in extent):
            raise ConfigError(f"{where}.extent: hi < lo")
        if a["name"] in names:
            raise ConfigError(f"{where}.name: duplicate area {a['name']!r}")
        names.add(a["name"])
        cfg.areas.append(AreaConfig(str(a["name"]), pops, extent))
    known = cfg.population_index()
    for i, pr in enumerate(doc.get("projections") or []):
        where = f"projections[{i}]"
        if not isinstance(pr, dict):
            raise ConfigError(f"{where}: expected a table")
        _check_keys(pr, {"source", "target", "rule", "indegree", "p", "weight", "delay",
                         "polarity", "plastic", "allow_autapses"}, where)
        for end in ("source", "target"):
            if pr.get(end) not in known:
                raise ConfigError(f"{where}.{end}: unknown population {pr.get(end)!r}")
        rule = pr.get("rule", "fixed_indegree")
        proj = ProjectionConfig(source=pr["source"], target=pr["target"], rule=rule)
        if rule == "fixed_indegree":
            proj.indegree = _num(pr, "indegree", where, kind=int)
            if proj.indegree < 0:
                raise ConfigError(f"{where}.indegree: must be >= 0")
        elif rule == "pairwise_bernoulli":
            proj.p = _num(pr, "p", where)
            if not 0.0 <= proj.p <= 1.0:
                raise ConfigError(f"{where}.p: probability out of range ({proj.p})")
        else:
            raise ConfigError(f"{where}.rule: unknown rule {rule!r}")
        proj.weight = _dist_from(pr.get("weight", 0.0), f"{where}.weight")
        proj.delay = _dist_from(pr.get("delay", cfg.d_min), f"{where}.delay")
        pol = pr.get("polarity", "exc" if proj.weight.expected >= 0 else "inh")
        if pol not in ("exc", "inh"):
            raise ConfigError(f"{where}.polarity: must be 'exc' or 'inh'")
        proj.polarity = pol
        area_name, pop_name = proj.target.split("/", 1)
        tgt = next(q for a in cfg.areas if a.name == area_name
                   for q in a.populations if q.name == pop_name)
        if tgt.neuron.synapse_mode == "conductance_based" and proj.weight.expected < 0:
            # conductances are magnitudes; the reversal potential sets the sign
            raise ConfigError(f"{where}.weight: conductance-based target needs weight >= 0")
        proj.plastic = bool(pr.get("plastic", False))
        proj.allow_autapses = bool(pr.get("allow_autapses", True))
        cfg.projections.append(proj)
    if doc.get("stdp") is not None:
        st = doc["stdp"]
        if not isinstance(st, dict):
            raise ConfigError("config.stdp: expected a table")
        _check_keys(st, _STDP_KEYS, "config.stdp")
        try:
            cfg.stdp = StdpParams(**st)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config.stdp: {exc}") from None
    dec = doc.get("decomposition", {}) or {}
    _check_keys(dec, {"ranks", "threads", "sample_rate", "mapping"}, "config.decomposition")
    cfg.decomposition = DecompositionConfig(
        ranks=_num(dec, "ranks", "decomposition", 1, int),
        threads=_num(dec, "threads", "decomposition", 1, int),
        sample_rate=_num(dec, "sample_rate", "decomposition", 0.05),
        mapping=str(dec.get("mapping", "area")))
    if cfg.decomposition.mapping not in ("area", "random"):
        raise ConfigError("decomposition.mapping: must be 'area' or 'random'")
    if not 0 < cfg.decomposition.sample_rate <= 1:
        raise ConfigError("decomposition.sample_rate: must lie in (0, 1]")
    if cfg.decomposition.ranks < 1 or cfg.decomposition.threads < 1:
        raise ConfigError("decomposition: ranks and threads must be >= 1")
    return cfg


def parse_config(text: str) -> NetworkConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        loc = f"line {mark.line + 1}, column {mark.column + 1}: " if mark else ""
        raise ConfigError(f"{loc}{getattr(exc, 'problem', exc)}") from None
    return config_from_dict(doc or {})


def load_config(path: str | Path) -> NetworkConfig:
    return parse_config(Path(path).read_text())


def config_to_dict(cfg: NetworkConfig) -> dict:
    areas = []
    for a in cfg.areas:
        pops = []
        for p in a.populations:
            entry = {"name": p.name, "count": p.count, "neuron": asdict(p.neuron),
                     "i_ext": p.i_ext, "poisson_rate": p.poisson_rate,
                     "poisson_weight": p.poisson_weight}
            if p.u_init is not None:
                entry["u_init"] = _dist_to(p.u_init)
            pops.append(entry)
        areas.append({"name": a.name, "extent": [list(e) for e in a.extent],
                      "populations": pops})
    projections = []
    for pr in cfg.projections:
        entry = {"source": pr.source, "target": pr.target, "rule": pr.rule}
        if pr.rule == "fixed_indegree":
            entry["indegree"] = pr.indegree
        else:
            entry["p"] = pr.p
        entry.update(weight=_dist_to(pr.weight), delay=_dist_to(pr.delay),
                     polarity=pr.polarity, plastic=pr.plastic,
                     allow_autapses=pr.allow_autapses)
        projections.append(entry)
    return {
        "dt": cfg.dt, "d_min": cfg.d_min, "d_max": cfg.d_max, "seed": cfg.seed,
        "t_sim": cfg.t_sim, "areas": areas, "projections": projections,
        "stdp": asdict(cfg.stdp) if cfg.stdp is not None else None,
        "decomposition": asdict(cfg.decomposition), "output_dir": cfg.output_dir,
    }


def dump_config(cfg: NetworkConfig) -> str:
    """Fully resolved config (all defaults filled) as YAML."""
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=False)


# --- connectome -------------------------------------------------------------------

@dataclass
class ConnectomeMatrix:
    labels: list[str]
    weights: np.ndarray
    distances: np.ndarray | None = None


def _read_square_csv(path: str | Path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise ConfigError(f"{path}: empty CSV")
    labels = [c.strip() for c in rows[0][1:]]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"{path}: duplicate area labels")
    body = rows[1:]
    if len(body) != len(labels):
        raise ConfigError(f"{path}: {len(body)} data rows for {len(labels)} labels")
    mat = np.zeros((len(labels), len(labels)))
    for i, row in enumerate(body, start=2):
        if len(row) != len(labels) + 1:
            raise ConfigError(f"{path}: row {i} has {len(row) - 1} values, expected {len(labels)}")
        if row[0].strip() != labels[i - 2]:
            raise ConfigError(f"{path}: row {i} label {row[0].strip()!r} != {labels[i - 2]!r}")
        for j, cell in enumerate(row[1:]):
            try:
                mat[i - 2, j] = float(cell)
            except ValueError:
                raise ConfigError(f"{path}: row {i}, column {j + 2}: non-numeric {cell!r}") from None
    return labels, mat


def load_connectome(weights_csv: str | Path, distances_csv: str | Path | None = None) -> ConnectomeMatrix:
    """Area x area matrix with a label header row and label first column."""
    labels, w = _read_square_csv(weights_csv)
    dist = None
    if distances_csv is not None:
        dl, dist = _read_square_csv(distances_csv)
        if dl != labels:
            raise ConfigError(f"{distances_csv}: labels {dl} do not match {labels}")
        if not np.allclose(dist, dist.T, rtol=0, atol=1e-12):
            raise ConfigError(f"{distances_csv}: distance matrix is not symmetric")
        if np.any(np.diag(dist) != 0):
            raise ConfigError(f"{distances_csv}: distance matrix diagonal must be zero")
    return ConnectomeMatrix(labels, w, dist)


def dump_connectome_csv(labels, mat, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow([""] + list(labels))
        for lab, row in zip(labels, mat):
            wr.writerow([lab] + [repr(float(x)) for x in row])


# --- network ------------------------------------------------------------------------

class ExternalDrive:
    """Poisson input counts, generated per population in blocks of steps.

    Each (population, block) pair has its own stream, so a block is the same
    whichever rank asks for it and whatever else is in the network.  Blocks
    are cached so co-simulated ranks share the work.
    """

    def __init__(self, pops: list[tuple[int, int, float, float, int]], dt: float, seed: int,
                 block: int = 200, cache_blocks: int = 64):
        # pops: (first id, count, rate Hz, weight pA, stream key)
        self.pops = [p for p in pops if p[2] > 0 and p[1] > 0]
        self.dt = dt
        self.seed = seed
        self.block = block
        self._lock = Lock()
        self._counts = lru_cache(maxsize=cache_blocks)(self._generate)

    @property
    def active(self) -> bool:
        return bool(self.pops)

    def _generate(self, pi: int, b: int) -> np.ndarray:
        _, count, rate, _, key = self.pops[pi]
        rng = _rng(self.seed, _DRIVE, key, b)
        return rng.poisson(rate * self.dt * 1e-3, size=(self.block, count)).astype(np.int32)

    def counts(self, pi: int, b: int) -> np.ndarray:
        with self._lock:
            return self._counts(pi, b)

    def columns_for(self, ids: np.ndarray) -> "DriveView":
        ids = np.asarray(ids, dtype=np.int64)
        parts = []
        for pi, (first, count, _, _, _) in enumerate(self.pops):
            hit = np.flatnonzero((ids >= first) & (ids < first + count))
            if hit.size:
                parts.append((pi, hit, ids[hit] - first))
        return DriveView(self, parts, ids.size)

    def row(self, step: int, view: "DriveView") -> np.ndarray:
        return view.row(step)


class DriveView:
    """One consumer's slice of an :class:`ExternalDrive`, in pA per step."""

    def __init__(self, drive: ExternalDrive, parts, n_out: int):
        self.drive = drive
        self.parts = parts
        self.n_out = n_out
        self._b = -1
        self._mat = None

    def row(self, step: int) -> np.ndarray:
        b, i = divmod(step, self.drive.block)
        if b != self._b:
            mat = np.zeros((self.drive.block, self.n_out))
            for pi, out_pos, cols in self.parts:
                w = self.drive.pops[pi][3]
                mat[:, out_pos] = self.drive.counts(pi, b)[:, cols] * w
            self._mat, self._b = mat, b
        return self._mat[i]


@dataclass(eq=False)
class Network:
    graph: DirectedGraph
    weights: np.ndarray
    delays: np.ndarray
    exc: np.ndarray
    plastic: np.ndarray
    params: np.ndarray
    u_init: np.ndarray
    i_ext: np.ndarray
    drive: ExternalDrive | None
    dt: float
    d_min: int
    d_max: int
    stdp: StdpParams | None
    coords: np.ndarray
    area_of: np.ndarray
    area_names: list[str]
    pop_of: np.ndarray
    pop_names: list[str]
    areas: list[AreaSpec]
    seed: int = 0

    @property
    def n_neurons(self) -> int:
        return self.graph.n_vertices

    def fingerprint(self) -> tuple:
        return (self.graph.pre.tobytes(), self.graph.post.tobytes(), self.weights.tobytes(),
                self.delays.tobytes(), self.exc.tobytes(), self.plastic.tobytes(),
                self.u_init.tobytes(), self.coords.tobytes())


def quantize_delays(delay_ms: np.ndarray, dt: float, d_min: int, d_max: int) -> np.ndarray:
    """``round(delay/dt)`` clamped into ``[d_min, d_max]`` (and never below 1)."""
    steps = np.rint(np.asarray(delay_ms) / dt).astype(np.int64)
    return np.clip(steps, max(1, d_min), d_max)


def _wire(proj: ProjectionConfig, src: tuple, tgt: tuple, rng: np.random.Generator):
    _, s0, ns = src
    _, t0, nt = tgt
    if proj.rule == "fixed_indegree":
        k = proj.indegree
        pre = rng.integers(0, ns, size=(nt, k))
        post = np.repeat(np.arange(nt), k).reshape(nt, k)
        if not proj.allow_autapses and s0 == t0:
            for _ in range(1000):
                bad = pre == post
                if not bad.any():
                    break
                pre[bad] = rng.integers(0, ns, size=int(bad.sum()))
        return (pre.ravel() + s0).astype(np.int64), (post.ravel() + t0).astype(np.int64)
    counts = rng.binomial(ns, proj.p, size=nt)
    pres, posts = [], []
    for j in range(nt):
        c = int(counts[j])
        if c == 0:
            continue
        src_ids = np.sort(rng.choice(ns, size=c, replace=False))
        if not proj.allow_autapses and s0 == t0:
            src_ids = src_ids[src_ids != j]
        pres.append(src_ids + s0)
        posts.append(np.full(src_ids.size, j + t0))
    if not pres:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return np.concatenate(pres).astype(np.int64), np.concatenate(posts).astype(np.int64)


def _key(*names: str) -> int:
    return zlib.crc32("/".join(names).encode())


@dataclass(frozen=True)
class ProjectionRecipe:
    index: int
    source: tuple[int, int, int]        # (area index, first id, count)
    target: tuple[int, int, int]
    config: ProjectionConfig
    stream: int
    expected_edges: float


@dataclass(frozen=True)
class WiringRecipe:
    """Fully determined edge-generation plan for a config.

    Streams are keyed by population names (plus an occurrence counter for
    repeated source/target pairs), never by list position, so a sub-network
    reproduces the edges it has in common with a larger one.
    """

    seed: int
    projections: tuple[ProjectionRecipe, ...]

    @property
    def expected_edges(self) -> float:
        return sum(p.expected_edges for p in self.projections)


def make_wiring_recipe(cfg: NetworkConfig) -> WiringRecipe:
    index = cfg.population_index()
    seen: dict[tuple[str, str], int] = {}
    out = []
    for i, pr in enumerate(cfg.projections):
        for end in (pr.source, pr.target):
            if end not in index:
                raise ConfigError(f"projections[{i}]: unknown population {end!r}")
        occ = seen.get((pr.source, pr.target), 0)
        seen[(pr.source, pr.target)] = occ + 1
        src, tgt = index[pr.source], index[pr.target]
        m = pr.indegree * tgt[2] if pr.rule == "fixed_indegree" else pr.p * src[2] * tgt[2]
        out.append(ProjectionRecipe(i, src, tgt, pr, _key(pr.source, pr.target, str(occ)), float(m)))
    return WiringRecipe(cfg.seed, tuple(out))


def build_network(cfg: NetworkConfig, connectome: ConnectomeMatrix | None = None,
                  drive_cache_blocks: int = 64) -> Network:
    recipe = make_wiring_recipe(cfg)
    n = cfg.n_neurons
    params_rows, u_init, i_ext = [], np.zeros(n), np.zeros(n)
    pop_of = np.zeros(n, dtype=np.int64)
    area_of = np.zeros(n, dtype=np.int64)
    coords = np.zeros((n, 3))
    pop_names, areas, drive_pops = [], [], []
    start = 0
    for a, area in enumerate(cfg.areas):
        first = start
        for p in area.populations:
            sl = slice(start, start + p.count)
            prop = make_propagators(p.neuron, cfg.dt)
            params_rows.append(np.tile(param_row(p.neuron, prop), (p.count, 1)))
            name = f"{area.name}/{p.name}"
            pop_of[sl] = len(pop_names)
            pop_names.append(name)
            area_of[sl] = a
            i_ext[sl] = p.i_ext
            drive_pops.append((start, p.count, p.poisson_rate, p.poisson_weight, _key(name)))
            u_init[sl] = (p.u_init.sample(_rng(cfg.seed, _UINIT, _key(name)), p.count)
                          if p.u_init is not None else p.neuron.u_rest)
            start += p.count
        rng = _rng(cfg.seed, _COORD, _key(area.name))
        ext = np.array(area.extent, dtype=np.float64)
        dims = ext.shape[0]
        coords[first:start, :dims] = ext[:, 0] + rng.random((start - first, dims)) * (ext[:, 1] - ext[:, 0])
        areas.append(AreaSpec(a, area.name, area.n_neurons, area.extent, first))
    pres, posts, ws, ds, ex, pl = [], [], [], [], [], []
    label_idx = {lab: i for i, lab in enumerate(connectome.labels)} if connectome else {}
    for rec in recipe.projections:
        proj, key, i = rec.config, rec.stream, rec.index
        pre, post = _wire(proj, rec.source, rec.target, _rng(cfg.seed, _WIRING, key))
        m = pre.size
        w = proj.weight.sample(_rng(cfg.seed, _WEIGHT, key), m)
        dly = proj.delay
        if dly.kind == "distance":
            sa, ta = cfg.areas[rec.source[0]].name, cfg.areas[rec.target[0]].name
            if connectome is not None and connectome.distances is not None:
                if sa not in label_idx or ta not in label_idx:
                    raise ConfigError(f"projections[{i}]: area {sa!r} or {ta!r} not in connectome")
                dist = connectome.distances[label_idx[sa], label_idx[ta]]
                d_ms = np.full(m, dist / dly.velocity + dly.offset)
            elif dly.fallback is not None:
                d_ms = dly.fallback.sample(_rng(cfg.seed, _DELAY, key), m)
            else:
                d_ms = np.full(m, dly.offset)
        else:
            d_ms = dly.sample(_rng(cfg.seed, _DELAY, key), m)
        pres.append(pre)
        posts.append(post)
        ws.append(w)
        ds.append(quantize_delays(d_ms, cfg.dt, cfg.d_min_steps, cfg.d_max_steps))
        ex.append(np.full(m, proj.polarity == "exc"))
        pl.append(np.full(m, proj.plastic and cfg.stdp is not None))
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
    graph = build_graph(n, np.stack([cat(pres, np.int64), cat(posts, np.int64)], axis=1))
    params = np.concatenate(params_rows) if params_rows else np.zeros((0, 13))
    drive = ExternalDrive(drive_pops, cfg.dt, cfg.seed, cache_blocks=drive_cache_blocks)
    return Network(
        graph=graph, weights=cat(ws, np.float64), delays=cat(ds, np.int64),
        exc=cat(ex, np.bool_), plastic=cat(pl, np.bool_), params=np.ascontiguousarray(params),
        u_init=u_init, i_ext=i_ext, drive=drive if drive.active else None, dt=cfg.dt,
        d_min=cfg.d_min_steps, d_max=cfg.d_max_steps, stdp=cfg.stdp, coords=coords,
        area_of=area_of, area_names=[a.name for a in cfg.areas], pop_of=pop_of,
        pop_names=pop_names, areas=areas, seed=cfg.seed)


def expected_area_costs(cfg: NetworkConfig) -> list[CostEstimate]:
    """Per-area memory estimate from the wiring recipe, before materialisation."""
    index = cfg.population_index()
    n_edges = np.zeros(len(cfg.areas))
    miss = {}  # (target area, source population) -> probability a source neuron is unused
    for proj in cfg.projections:
        sa, _, ns = index[proj.source]
        ta, _, nt = index[proj.target]
        if proj.rule == "fixed_indegree":
            m = proj.indegree * nt
            p_miss = (1.0 - 1.0 / ns) ** m
        else:
            m = proj.p * ns * nt
            p_miss = (1.0 - proj.p) ** nt
        n_edges[ta] += m
        if sa != ta:
            key = (ta, proj.source)
            miss[key] = miss.get(key, 1.0) * p_miss
    remote = np.zeros(len(cfg.areas))
    for (ta, src), p_miss in miss.items():
        remote[ta] += index[src][2] * (1.0 - p_miss)
    return [estimate_area_cost(a.n_neurons, int(round(n_edges[i])), int(round(remote[i])))
            for i, a in enumerate(cfg.areas)]


# --- benchmark networks -----------------------------------------------------------------

BALANCED_NEURON = NeuronParams(tau_m=10.0, u_rest=0.0, R=40.0, theta=20.0, u_reset=0.0,
                               t_refractory=2.0, tau_syn_exc=0.5, tau_syn_inh=0.5)


def make_balanced_random_net(scale: float = 1.0, stdp: StdpParams | None = StdpParams(), *,
                             n_per_scale: int = 10_000, indegree: int = 100,
                             psp_mv: float = 0.5, g: float = 8.0, eta: float = 0.75,
                             delay: Dist | None = None, dt: float = 0.1,
                             d_min: float = 0.1, d_max: float = 1.5,
                             seed: int = 1, t_sim: float = 1000.0) -> NetworkConfig:
    """Balanced 80/20 excitatory/inhibitory network with plastic E->E synapses.

    The per-neuron indegree is fixed and does not grow with ``scale``;
    external Poisson input is ``eta`` times the rate that brings the mean
    free membrane potential to threshold.
    """
    if scale <= 0:
        raise ConfigError("scale must be > 0")
    n = max(5, int(round(n_per_scale * scale)))
    ne, ni = int(round(0.8 * n)), n - int(round(0.8 * n))
    ke, ki = int(round(0.8 * indegree)), indegree - int(round(0.8 * indegree))
    nrn = BALANCED_NEURON
    j_e = psp_mv / psp_peak_per_pA(nrn)
    j_i = -g * j_e
    area_per_pa = 1e-3 * nrn.R * nrn.tau_syn_exc  # mV*ms of free membrane per pA deposit
    nu_ext = eta * (nrn.theta - nrn.u_rest) / (j_e * area_per_pa) * 1000.0
    delay = delay or Dist("uniform", low=d_min, high=d_max)
    u0 = Dist("uniform", low=nrn.u_rest, high=nrn.theta)
    pops = [PopulationConfig("E", ne, nrn, poisson_rate=nu_ext, poisson_weight=j_e, u_init=u0),
            PopulationConfig("I", ni, nrn, poisson_rate=nu_ext, poisson_weight=j_e, u_init=u0)]
    projections = []
    for tgt in ("E", "I"):
        projections.append(ProjectionConfig("net/E", f"net/{tgt}", "fixed_indegree", ke,
                                            weight=Dist("constant", value=j_e), delay=delay,
                                            polarity="exc", plastic=(tgt == "E")))
        projections.append(ProjectionConfig("net/I", f"net/{tgt}", "fixed_indegree", ki,
                                            weight=Dist("constant", value=j_i), delay=delay,
                                            polarity="inh"))
    if stdp is not None:
        # Initial weight sits at the fixed point of the drift under uncorrelated
        # pre/post activity: w_ref**(1 - mu) * w**mu == alpha * w.
        stdp = stdp.with_(w_ref=j_e * stdp.alpha ** (1.0 / (1.0 - stdp.mu)) if stdp.mu < 1 else j_e)
    return NetworkConfig(dt=dt, d_min=d_min, d_max=d_max, seed=seed, t_sim=t_sim,
                         areas=[AreaConfig("net", pops)], projections=projections, stdp=stdp)


def load_microcircuit_table() -> dict:
    """Bundled 8-population layered microcircuit table (external data)."""
    text = resources.files("cortex_sim").joinpath("data/microcircuit.yaml").read_text()
    return yaml.safe_load(text)


def make_layered_cortex_net(connectome: ConnectomeMatrix, *, neurons_per_area: int = 400,
                            table: dict | None = None, density_scale: float = 1.0,
                            inter_sources: tuple[str, ...] = ("L23E", "L5E"),
                            inter_targets: tuple[str, ...] = ("L23E", "L4E", "L5E", "L6E"),
                            area_sizes: dict[str, int] | None = None,
                            dt: float = 0.1, seed: int = 1, t_sim: float = 100.0,
                            velocity: float = 3.5, area_spacing: float = 2.0) -> NetworkConfig:
    """One layered microcircuit per connectome area, linked by connectome densities.

    Connection probability between a source population of area ``i`` and a
    target population of area ``j`` is ``density_scale * W[i, j]``, clipped
    to ``[0, 1]``.  Inter-area delays use ``distance / velocity`` plus the
    intra-area mean delay when distances are available.
    """
    tab = table if table is not None else load_microcircuit_table()
    pop_names = tab["populations"]
    sizes = np.asarray(tab["population_size"], dtype=np.float64)
    frac = sizes / sizes.sum()
    conn = np.asarray(tab["conn_probs"], dtype=np.float64)
    k_ext = tab["k_ext"]
    nrn = NeuronParams(**tab["neuron"])
    psp = tab["psp_mean_mv"]
    j = psp / psp_peak_per_pA(nrn)
    g = tab["g"]
    d_exc, d_inh = tab["delay_exc_ms"], tab["delay_inh_ms"]
    areas, projections = [], []
    for a, label in enumerate(connectome.labels):
        size = (area_sizes or {}).get(label, neurons_per_area)
        if size <= 0:
            raise ConfigError(f"area {label!r}: neuron count must be > 0")
        counts = np.maximum(1, np.round(frac * size).astype(int))
        x0 = a * area_spacing
        pops = [PopulationConfig(name, int(c), nrn, poisson_rate=tab["bg_rate_hz"] * k_ext[i],
                                 poisson_weight=j,
                                 u_init=Dist("normal", mean=tab["u_init_mean"], std=tab["u_init_std"]))
                for i, (name, c) in enumerate(zip(pop_names, counts))]
        areas.append(AreaConfig(label, pops, ((x0, x0 + 1.0), (0.0, 1.0), (0.0, 1.0))))
        for t, tname in enumerate(pop_names):
            for s, sname in enumerate(pop_names):
                p = float(conn[t][s])
                if p <= 0:
                    continue
                exc = sname.endswith("E")
                w = j if exc else -g * j
                if sname == "L4E" and tname == "L23E":
                    w *= 2.0
                dm = d_exc if exc else d_inh
                projections.append(ProjectionConfig(
                    f"{label}/{sname}", f"{label}/{tname}", "pairwise_bernoulli", p=p,
                    weight=Dist("normal", mean=w, std=abs(0.1 * w)),
                    delay=Dist("normal", mean=dm, std=0.5 * dm),
                    polarity="exc" if exc else "inh"))
    for si, sl in enumerate(connectome.labels):
        for ti, tl in enumerate(connectome.labels):
            if si == ti:
                continue
            p = min(1.0, max(0.0, density_scale * float(connectome.weights[si, ti])))
            if p <= 0:
                continue
            for sname in inter_sources:
                for tname in inter_targets:
                    projections.append(ProjectionConfig(
                        f"{sl}/{sname}", f"{tl}/{tname}", "pairwise_bernoulli", p=p,
                        weight=Dist("constant", value=j),
                        delay=Dist("distance", velocity=velocity, offset=d_exc,
                                   fallback=Dist("normal", mean=d_exc, std=0.5 * d_exc)),
                        polarity="exc"))
    d_max = 10.0
    if connectome.distances is not None:
        d_max = max(d_max, float(connectome.distances.max()) / velocity + d_exc + 1.0)
    return NetworkConfig(dt=dt, d_min=dt, d_max=d_max, seed=seed, t_sim=t_sim,
                         areas=areas, projections=projections, stdp=None)


def scale_config(cfg: NetworkConfig, factor: float) -> NetworkConfig:
    """Copy of ``cfg`` with every population count scaled; indegrees are kept."""
    if factor <= 0:
        raise ConfigError("scale factor must be > 0")
    out = config_from_dict(config_to_dict(cfg))
    for area in out.areas:
        for p in area.populations:
            p.count = max(1, int(round(p.count * factor)))
    return out


def area_tags(cfg: NetworkConfig) -> np.ndarray:
    """Area index of every neuron id, straight from the config."""
    return np.repeat(np.arange(len(cfg.areas)), [a.n_neurons for a in cfg.areas])


def measured_area_costs(net: Network) -> list[CostEstimate]:
    """Per-area cost from the materialised graph (exact edge and remote counts)."""
    g = net.graph
    post_area = net.area_of[g.post]
    pre_area = net.area_of[g.pre]
    out = []
    for a, area in enumerate(net.areas):
        into = post_area == a
        remote = np.unique(g.pre[into & (pre_area != a)]).size
        out.append(estimate_area_cost(area.n_neurons, int(into.sum()), int(remote)))
    return out


def plan_network(net: Network, n_ranks: int, n_threads: int, *, mapping: str = "area",
                 sample_rate: float = 0.05, seed: int = 0,
                 costs: list[CostEstimate] | None = None) -> PartitionPlan:
    """Partition plan for ``net``.

    ``mapping="area"`` runs area mapping plus sampled multisection; with fewer
    ranks than areas the id range is instead cut into contiguous equal
    blocks, which keeps whole areas together as far as possible.
    ``mapping="random"`` is the shuffled round-robin baseline.
    """
    n = net.n_neurons
    if mapping == "random":
        return random_equivalent_map(n, n_ranks, seed, n_threads)
    if mapping != "area":
        raise ConfigError(f"unknown mapping {mapping!r}")
    if n_ranks < len(net.areas):
        rank_of = np.repeat(np.arange(n_ranks), split_sizes(n, n_ranks)).astype(np.int64)
        return PartitionPlan(rank_of, thread_ranges_for(rank_of, n_ranks, n_threads),
                             n_ranks, n_threads)
    costs = costs if costs is not None else measured_area_costs(net)
    return area_processes_plan(net.areas, net.coords, costs, n_ranks, n_threads,
                               sample_rate=sample_rate, seed=seed)
