"""Two-stage domain decomposition of neurons onto ranks and threads.

Stage one maps anatomical areas onto disjoint groups of ranks in proportion
to their estimated memory cost.  Stage two cuts each area into one cell per
rank with a recursive coordinate multisection computed on a random sample of
neuron positions.  Inside a rank, owned neurons are split into contiguous
thread ranges.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

# Per-item byte costs for the O(n_pre + n_post + n_edges) memory model.
C_PRE = 8
C_POST = 64
C_EDGE = 32


class DecompositionError(ValueError):
    pass


@dataclass(frozen=True)
class AreaSpec:
    area_id: int
    name: str
    n_neurons: int
    extent: tuple[tuple[float, float], ...] = ((0.0, 1.0), (0.0, 1.0), (0.0, 1.0))
    first_id: int = 0

    def __post_init__(self):
        if self.n_neurons <= 0:
            raise DecompositionError(f"area {self.name!r} must contain neurons, got {self.n_neurons}")

    @property
    def ids(self) -> np.ndarray:
        return np.arange(self.first_id, self.first_id + self.n_neurons, dtype=np.int64)


@dataclass(frozen=True)
class CostEstimate:
    n_pre: int
    n_post: int
    n_edges: int

    @property
    def bytes(self) -> int:
        return self.n_pre * C_PRE + self.n_post * C_POST + self.n_edges * C_EDGE


def estimate_area_cost(n_neurons: int, n_in_edges: int, n_remote_pre: int) -> CostEstimate:
    """Memory estimate for one area's indegree sub-graph.

    Pre-neurons are the owned neurons plus the expected remote sources.
    """
    return CostEstimate(n_pre=int(n_neurons + n_remote_pre), n_post=int(n_neurons),
                        n_edges=int(n_in_edges))


@dataclass(frozen=True)
class AreaProcessMap:
    ranks: tuple[tuple[int, ...], ...]
    n_procs: int

    def counts(self) -> list[int]:
        return [len(r) for r in self.ranks]

    def area_of_rank(self) -> np.ndarray:
        out = np.full(self.n_procs, -1, dtype=np.int64)
        for a, rs in enumerate(self.ranks):
            out[list(rs)] = a
        return out


def map_areas_to_processes(costs: Sequence[CostEstimate | float], n_procs: int) -> AreaProcessMap:
    """Apportion ranks to areas by largest remainder, at least one each.

    Ties in the remainder go to the lowest area id.  Areas that round to
    zero are raised to one rank, taken from the most over-served area.
    """
    weights = np.array([c.bytes if isinstance(c, CostEstimate) else float(c) for c in costs],
                       dtype=np.float64)
    n_areas = weights.size
    if n_areas == 0:
        raise DecompositionError("no areas to map")
    if n_procs < n_areas:
        raise DecompositionError(
            f"{n_procs} ranks cannot host {n_areas} areas; merge areas or add ranks")
    if np.any(weights < 0):
        raise DecompositionError("area costs must be non-negative")
    total = weights.sum()
    quota = np.full(n_areas, n_procs / n_areas) if total == 0 else weights / total * n_procs
    alloc = np.floor(quota).astype(np.int64)
    rem = quota - alloc
    order = sorted(range(n_areas), key=lambda a: (-rem[a], a))
    for a in order[: n_procs - int(alloc.sum())]:
        alloc[a] += 1
    for a in range(n_areas):
        while alloc[a] < 1:
            donors = [b for b in range(n_areas) if alloc[b] > 1]
            donor = max(donors, key=lambda b: (alloc[b] - quota[b], -b))
            alloc[donor] -= 1
            alloc[a] += 1
    ranks, start = [], 0
    for n in alloc:
        ranks.append(tuple(range(start, start + int(n))))
        start += int(n)
    return AreaProcessMap(tuple(ranks), int(n_procs))


@dataclass(frozen=True, eq=False)
class PartitionPlan:
    """Owner ``(rank, thread)`` of every vertex."""

    rank_of: np.ndarray
    thread_of: np.ndarray
    n_ranks: int
    n_threads: int
    area_map: AreaProcessMap | None = None
    grids: tuple = field(default=())

    @property
    def n_vertices(self) -> int:
        return int(self.rank_of.size)

    def owned(self, rank: int) -> np.ndarray:
        return np.flatnonzero(self.rank_of == rank).astype(np.int64)

    def cells(self) -> list[np.ndarray]:
        return [self.owned(r) for r in range(self.n_ranks)]

    def thread_bounds(self, rank: int) -> np.ndarray:
        """Offsets into ``owned(rank)`` delimiting each thread's range."""
        th = self.thread_of[self.rank_of == rank]
        return np.searchsorted(th, np.arange(self.n_threads + 1), side="left").astype(np.int64)

    def with_threads(self, n_threads: int) -> "PartitionPlan":
        """Same rank map with thread ranges re-derived."""
        return PartitionPlan(self.rank_of, thread_ranges_for(self.rank_of, self.n_ranks, n_threads),
                             self.n_ranks, n_threads, self.area_map, self.grids)

    def __eq__(self, other):
        if not isinstance(other, PartitionPlan):
            return NotImplemented
        return (self.n_ranks == other.n_ranks and self.n_threads == other.n_threads
                and np.array_equal(self.rank_of, other.rank_of)
                and np.array_equal(self.thread_of, other.thread_of))


def split_sizes(n: int, parts: int) -> list[int]:
    """Near-equal sizes, remainder to the lowest parts: 13, 4 -> [4, 3, 3, 3]."""
    base, extra = divmod(n, parts)
    return [base + (1 if k < extra else 0) for k in range(parts)]


def thread_ranges_for(rank_of: np.ndarray, n_ranks: int, n_threads: int) -> np.ndarray:
    if n_threads < 1:
        raise DecompositionError("need at least one thread")
    thread_of = np.empty(rank_of.size, dtype=np.int64)
    for r in range(n_ranks):
        idx = np.flatnonzero(rank_of == r)
        thread_of[idx] = np.repeat(np.arange(n_threads), split_sizes(idx.size, n_threads))
    return thread_of


def random_equivalent_map(n_vertices: int, n_procs: int, seed: int,
                          n_threads: int = 1) -> PartitionPlan:
    """Baseline: shuffle vertices and deal them round-robin onto ranks."""
    if n_procs < 1:
        raise DecompositionError("n_procs must be >= 1")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n_vertices)
    rank_of = np.empty(n_vertices, dtype=np.int64)
    rank_of[perm] = np.arange(n_vertices) % n_procs
    return PartitionPlan(rank_of, thread_ranges_for(rank_of, n_procs, n_threads),
                         n_procs, n_threads)


# --- multisection -----------------------------------------------------------

def sample_positions(points: np.ndarray, rate: float, seed: int, n_cells: int = 1) -> np.ndarray:
    """Indices of a seeded uniform subsample, size ``max(ceil(rate*n), n_cells)``."""
    n = len(points)
    if n == 0:
        raise DecompositionError("cannot sample from an empty point set")
    if not 0 < rate <= 1:
        raise DecompositionError(f"sample rate must lie in (0, 1], got {rate}")
    k = min(n, max(math.ceil(rate * n), n_cells))
    if k == n:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


@dataclass(frozen=True)
class DivisionGrid:
    """Nested multisection cuts.

    ``cuts[level]`` maps the tuple of slab indices chosen at previous levels
    to the sorted cut coordinates along dimension ``level``.  Cells are
    numbered in mixed radix over ``parts``.
    """

    parts: tuple[int, ...]
    cuts: tuple[dict, ...]
    lower: tuple[float, ...]
    upper: tuple[float, ...]

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.parts))

    def cell_boxes(self) -> list[tuple[tuple[float, float], ...]]:
        boxes = []
        for cell in range(self.n_cells):
            idx = np.unravel_index(cell, self.parts)
            box = []
            for level, i in enumerate(idx):
                c = self.cuts[level][tuple(int(j) for j in idx[:level])]
                lo = self.lower[level] if i == 0 else c[i - 1]
                hi = self.upper[level] if i == len(c) else c[i]
                box.append((float(lo), float(hi)))
            boxes.append(tuple(box))
        return boxes


def multisection_divide(sample: np.ndarray, parts_per_dim: Sequence[int],
                        bounds: Sequence[tuple[float, float]] | None = None) -> DivisionGrid:
    """Recursive quantile cuts: slab counts on ``sample`` differ by at most one.

    Each cut lies midway between the last point of one slab and the first
    point of the next in rank order; ties in a coordinate break by index.
    """
    pts = np.asarray(sample, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    parts = tuple(int(p) for p in parts_per_dim)
    if len(pts) == 0:
        raise DecompositionError("empty sample")
    if len(parts) > pts.shape[1]:
        raise DecompositionError(f"{len(parts)} cut dimensions for {pts.shape[1]}-d points")
    if any(p < 1 for p in parts):
        raise DecompositionError("parts per dimension must be >= 1")
    if np.prod(parts) > len(pts):
        raise DecompositionError("more cells than sample points")
    if bounds is None:
        lower = tuple(float(x) for x in pts.min(axis=0)[: len(parts)])
        upper = tuple(float(x) for x in pts.max(axis=0)[: len(parts)])
    else:
        lower = tuple(float(b[0]) for b in bounds[: len(parts)])
        upper = tuple(float(b[1]) for b in bounds[: len(parts)])
    cuts: list[dict] = [dict() for _ in parts]

    def recurse(idx: np.ndarray, level: int, key: tuple[int, ...]):
        if level == len(parts):
            return
        x = pts[idx, level]
        order = np.lexsort((idx, x))
        sorted_idx = idx[order]
        xs = x[order]
        bounds_ = np.cumsum([0] + split_sizes(len(idx), parts[level]))
        c = np.array([0.5 * (xs[b - 1] + xs[b]) for b in bounds_[1:-1]], dtype=np.float64)
        cuts[level][key] = c
        for i in range(parts[level]):
            recurse(sorted_idx[bounds_[i]:bounds_[i + 1]], level + 1, key + (i,))

    recurse(np.arange(len(pts), dtype=np.int64), 0, ())
    return DivisionGrid(parts, tuple(cuts), lower, upper)


def apply_division(points: np.ndarray, grid: DivisionGrid) -> np.ndarray:
    """Cell index of every point; a point on a cut goes to the lower cell.

    Points outside the grid's box fall into the nearest boundary cell.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[:, None]
    cell = np.zeros(len(pts), dtype=np.int64)
    groups = {(): np.arange(len(pts))}
    for level, p in enumerate(grid.parts):
        nxt = {}
        for key, idx in groups.items():
            c = grid.cuts[level][key]
            slab = np.searchsorted(c, pts[idx, level], side="left")
            cell[idx] = cell[idx] * p + slab
            for i in range(p):
                nxt[key + (i,)] = idx[slab == i]
        groups = nxt
    return cell


def near_cubic_parts(n_cells: int, extents: Sequence[float]) -> tuple[int, ...]:
    """Factor ``n_cells`` over dimensions, largest prime factors to longest axes."""
    factors, m, f = [], n_cells, 2
    while m > 1:
        while m % f == 0:
            factors.append(f)
            m //= f
        f += 1
    parts = [1] * len(extents)
    for f in sorted(factors, reverse=True):
        d = max(range(len(extents)), key=lambda i: (extents[i] / parts[i], -i))
        parts[d] *= f
    return tuple(parts)


def make_partition_plan(areas: Sequence[AreaSpec], area_map: AreaProcessMap,
                        cell_of: Sequence[np.ndarray], n_threads: int,
                        grids: Sequence[DivisionGrid] = ()) -> PartitionPlan:
    """Assemble the vertex -> (rank, thread) map.

    ``cell_of[a]`` gives, for each neuron of area ``a`` in id order, its cell
    index within that area; cell ``c`` of area ``a`` belongs to rank
    ``area_map.ranks[a][c]``.
    """
    if len(areas) != len(area_map.ranks) or len(areas) != len(cell_of):
        raise DecompositionError("areas, area map and cell assignments disagree in length")
    n = sum(a.n_neurons for a in areas)
    rank_of = np.full(n, -1, dtype=np.int64)
    for a, area in enumerate(areas):
        cells = np.asarray(cell_of[a], dtype=np.int64)
        ranks = np.asarray(area_map.ranks[a], dtype=np.int64)
        if cells.size != area.n_neurons:
            raise DecompositionError(f"area {area.name!r}: {cells.size} cell labels for "
                                     f"{area.n_neurons} neurons")
        if cells.size and (cells.min() < 0 or cells.max() >= ranks.size):
            raise DecompositionError(f"area {area.name!r}: cell index outside its {ranks.size} ranks")
        if area.first_id + area.n_neurons > n or np.any(rank_of[area.ids] != -1):
            raise DecompositionError(f"area {area.name!r}: id range overlaps another area")
        rank_of[area.ids] = ranks[cells]
    if np.any(rank_of < 0):
        raise DecompositionError("some vertices are not covered by any area")
    return PartitionPlan(rank_of, thread_ranges_for(rank_of, area_map.n_procs, n_threads),
                         area_map.n_procs, n_threads, area_map, tuple(grids))


def area_processes_plan(areas: Sequence[AreaSpec], coords: np.ndarray,
                        costs: Sequence[CostEstimate], n_procs: int, n_threads: int,
                        sample_rate: float = 0.05, seed: int = 0) -> PartitionPlan:
    """Full pipeline: area mapping, then sampled multisection within each area."""
    amap = map_areas_to_processes(costs, n_procs)
    cell_of, grids = [], []
    for a, area in enumerate(areas):
        k = len(amap.ranks[a])
        pts = coords[area.ids]
        ext = [hi - lo for lo, hi in area.extent]
        parts = near_cubic_parts(k, ext)
        # Trailing singleton dimensions carry no cut.
        while len(parts) > 1 and parts[-1] == 1:
            parts = parts[:-1]
        sample = pts[sample_positions(pts, sample_rate, seed + a, k)]
        grid = multisection_divide(sample, parts, bounds=area.extent)
        grids.append(grid)
        cell_of.append(apply_division(pts, grid))
    return make_partition_plan(areas, amap, cell_of, n_threads, grids)


# --- plan dump ----------------------------------------------------------------

def _ranges(ids: np.ndarray) -> str:
    if ids.size == 0:
        return "-"
    breaks = np.flatnonzero(np.diff(ids) != 1)
    starts = np.concatenate([[0], breaks + 1])
    ends = np.concatenate([breaks, [ids.size - 1]])
    out = []
    for s, e in zip(starts, ends):
        a, b = int(ids[s]), int(ids[e])
        out.append(str(a) if a == b else f"{a}-{b}")
    return ",".join(out)


def _parse_ranges(text: str) -> np.ndarray:
    if text == "-":
        return np.zeros(0, dtype=np.int64)
    parts = []
    for chunk in text.split(","):
        a, _, b = chunk.partition("-")
        parts.append(np.arange(int(a), int(b or a) + 1, dtype=np.int64))
    return np.concatenate(parts)


def dump_plan(plan: PartitionPlan, path: str | Path | None = None) -> str:
    """Text listing of per-rank and per-thread id ranges plus grid cuts."""
    lines = ["# partition plan",
             f"n_vertices {plan.n_vertices}",
             f"n_ranks {plan.n_ranks}",
             f"n_threads {plan.n_threads}"]
    if plan.area_map is not None:
        for a, rs in enumerate(plan.area_map.ranks):
            lines.append(f"area {a} ranks {_ranges(np.asarray(rs, dtype=np.int64))}")
    for a, grid in enumerate(plan.grids):
        lines.append(f"grid {a} parts {'x'.join(map(str, grid.parts))}")
        for level, table in enumerate(grid.cuts):
            for key, c in sorted(table.items()):
                slab = ".".join(map(str, key)) or "root"
                lines.append(f"cut {a} dim {level} slab {slab} " +
                             " ".join(repr(float(x)) for x in c))
    for r in range(plan.n_ranks):
        owned = plan.owned(r)
        lines.append(f"rank {r} owned {_ranges(owned)}")
        th = plan.thread_of[owned]
        for k in range(plan.n_threads):
            lines.append(f"rank {r} thread {k} {_ranges(owned[th == k])}")
    text = "\n".join(lines) + "\n"
    if path is not None:
        Path(path).write_text(text)
    return text


def load_plan(text_or_path: str | Path) -> PartitionPlan:
    """Parse :func:`dump_plan` output back into a vertex -> (rank, thread) plan."""
    text = str(text_or_path)
    if "\n" not in text:
        text = Path(text).read_text()
    header: dict[str, int] = {}
    assignments = []
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].split()
        if not line:
            continue
        if line[0] in ("n_vertices", "n_ranks", "n_threads"):
            header[line[0]] = int(line[1])
        elif line[0] == "rank" and line[2] == "thread":
            assignments.append((int(line[1]), int(line[3]), _parse_ranges(line[4])))
    n = header["n_vertices"]
    rank_of = np.full(n, -1, dtype=np.int64)
    thread_of = np.full(n, -1, dtype=np.int64)
    for r, k, ids in assignments:
        rank_of[ids] = r
        thread_of[ids] = k
    if np.any(rank_of < 0):
        raise DecompositionError("plan file leaves vertices unassigned")
    return PartitionPlan(rank_of, thread_of, header["n_ranks"], header["n_threads"])
