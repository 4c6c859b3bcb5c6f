"""Per-rank simulation core.

A :class:`RankState` owns one cell of the vertex partition together with its
indegree sub-graph.  Incoming synapses are stored per thread, per pre-neuron,
in increasing delay order, so that a buffered spike of age ``a`` selects one
contiguous run of records for each thread.  Every record and every owned
neuron is touched by exactly one compute worker; pre-neuron data and the
spike buffer are read-only while workers run.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .graph import indegree_subgraph, split_local_remote


class EngineError(RuntimeError):
    pass


class AuditViolation(EngineError):
    """A record or post-neuron was accessed by more than one thread."""

    def __init__(self, message, edges=(), posts=()):
        super().__init__(message)
        self.edges = list(edges)
        self.posts = list(posts)


class OverlapViolation(EngineError):
    """Delivery was attempted before the spikes it needs were buffered."""


@dataclass
class EdgeStore:
    """Synapse records sorted by (thread, pre, delay, edge id).

    ``run_ptr[((k * n_pre) + p) * n_d + (d - d_min)]`` is the first record of
    thread ``k``, pre ``p``, delay ``d``; the next entry closes the run.
    """

    n_threads: int
    n_pre: int
    d_min: int
    d_max: int
    run_ptr: np.ndarray
    pre: np.ndarray
    target: np.ndarray
    delay: np.ndarray
    edge: np.ndarray
    thread: np.ndarray
    weight: np.ndarray
    exc: np.ndarray
    plastic: np.ndarray
    k_plus: np.ndarray
    last_pre: np.ndarray

    @property
    def n_d(self) -> int:
        return self.d_max - self.d_min + 1

    @property
    def n_records(self) -> int:
        return int(self.edge.size)

    def run(self, thread: int, pre: int, delay: int) -> slice:
        key = (thread * self.n_pre + pre) * self.n_d + (delay - self.d_min)
        return slice(int(self.run_ptr[key]), int(self.run_ptr[key + 1]))


def build_edge_store(pre_local, target, delay, edge, thread, weight, exc, plastic,
                     n_threads: int, n_pre: int, d_min: int, d_max: int) -> EdgeStore:
    """Sort records into canonical storage order; input order is irrelevant."""
    delay = np.asarray(delay, dtype=np.int64)
    if delay.size and (delay.min() < d_min or delay.max() > d_max):
        raise EngineError(f"record delays must lie in [{d_min}, {d_max}] steps")
    thread = np.asarray(thread, dtype=np.int64)
    if thread.size and (thread.min() < 0 or thread.max() >= n_threads):
        raise EngineError("record thread tag outside the thread range")
    order = np.lexsort((edge, delay, pre_local, thread))
    n_d = d_max - d_min + 1
    key = (thread[order] * n_pre + pre_local[order]) * n_d + (delay[order] - d_min)
    counts = np.bincount(key, minlength=n_threads * n_pre * n_d)
    run_ptr = np.zeros(counts.size + 1, dtype=np.int64)
    np.cumsum(counts, out=run_ptr[1:])
    n = order.size
    return EdgeStore(
        n_threads, n_pre, d_min, d_max, run_ptr,
        pre=np.ascontiguousarray(pre_local[order], dtype=np.int64),
        target=np.ascontiguousarray(target[order], dtype=np.int64),
        delay=np.ascontiguousarray(delay[order]),
        edge=np.ascontiguousarray(edge[order], dtype=np.int64),
        thread=np.ascontiguousarray(thread[order]),
        weight=np.ascontiguousarray(weight[order], dtype=np.float64),
        exc=np.ascontiguousarray(exc[order], dtype=np.bool_),
        plastic=np.ascontiguousarray(plastic[order], dtype=np.bool_),
        k_plus=np.zeros(n), last_pre=np.zeros(n, dtype=np.int64),
    )


class SpikeBuffer:
    """Ring of ``capacity`` slots of pre-table indices, one slot per emission step.

    A slot is overwritten ``capacity`` steps after it was filled, which
    retires spikes whose largest delay has elapsed.
    """

    def __init__(self, capacity: int, n_pre: int):
        self.capacity = max(1, int(capacity))
        self.ids = np.zeros((self.capacity, max(1, n_pre)), dtype=np.int64)
        self.n = np.zeros(self.capacity, dtype=np.int64)
        self.step = np.full(self.capacity, -1, dtype=np.int64)
        self.last_enqueued = -1

    def put(self, local_ids: np.ndarray, emission_step: int) -> None:
        if emission_step <= self.last_enqueued:
            raise EngineError(f"spikes for step {emission_step} enqueued after step "
                              f"{self.last_enqueued}")
        slot = emission_step % self.capacity
        self.ids[slot, : local_ids.size] = local_ids
        self.n[slot] = local_ids.size
        self.step[slot] = emission_step
        self.last_enqueued = emission_step

    def get(self, emission_step: int) -> np.ndarray:
        slot = emission_step % self.capacity
        if self.step[slot] != emission_step:
            return np.zeros(0, dtype=np.int64)
        return self.ids[slot, : self.n[slot]].copy()

    def oldest_step(self) -> int:
        live = self.step[self.step >= 0]
        return int(live.min()) if live.size else -1


@dataclass
class AccessAudit:
    edge_threads: dict[int, set[int]]
    post_threads: dict[int, set[int]]
    bad_edges: list[int]
    bad_posts: list[int]

    @property
    def ok(self) -> bool:
        return not self.bad_edges and not self.bad_posts

    def max_edge_threads(self) -> int:
        return max((len(s) for s in self.edge_threads.values()), default=0)

    def max_post_threads(self) -> int:
        return max((len(s) for s in self.post_threads.values()), default=0)


def _mask_threads(mask: int) -> set[int]:
    return {k for k in range(64) if (mask >> k) & 1}


@dataclass
class StepTiming:
    step: int
    deliver_update: float
    exchange_wait: float = 0.0


@dataclass
class RankState:
    rank: int
    dt: float
    d_min: int
    d_max: int
    owned: np.ndarray
    pre_table: np.ndarray
    n_remote_pre: int
    thread_bounds: np.ndarray
    store: EdgeStore
    buffer: SpikeBuffer
    params: np.ndarray
    u: np.ndarray
    syn_e: np.ndarray
    syn_i: np.ndarray
    refr: np.ndarray
    i_ext: np.ndarray
    k_minus: np.ndarray
    last_post: np.ndarray
    post_ptr: np.ndarray
    post_recs: np.ndarray
    stdp: np.ndarray
    plastic_on: bool
    drive: object = None
    drive_cols: np.ndarray | None = None
    audit: bool = False
    edge_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    post_mask: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    executor: str = "serial"
    step_count: int = 0
    records_applied: int = 0
    overlap_checks: int = 0
    timings: list = field(default_factory=list)
    _pp: np.ndarray = None
    _aa: np.ndarray = None
    _out: np.ndarray = None
    _pairs: int = 0
    _pool: ThreadPoolExecutor | None = None

    def __post_init__(self):
        cap = self.buffer.capacity * max(1, self.pre_table.size)
        self._pp = np.zeros(cap, dtype=np.int64)
        self._aa = np.zeros(cap, dtype=np.int64)
        self._out = np.zeros(max(1, self.owned.size), dtype=np.int64)
        self._zero_ext = np.zeros(self.owned.size)
        if self.audit:
            self.edge_mask = np.zeros(self.store.n_records, dtype=np.int64)
            self.post_mask = np.zeros(self.owned.size, dtype=np.int64)
        if self.store.n_threads > 63 and self.audit:
            raise EngineError("audit mode supports at most 63 threads")
        if self.audit:
            owner = np.repeat(np.arange(self.n_threads), np.diff(self.thread_bounds))
            self._post_bit = np.left_shift(np.int64(1), owner.astype(np.int64))
            self._edge_bit = self._post_bit[self.store.target]

    # -- sizes -----------------------------------------------------------------
    @property
    def n_threads(self) -> int:
        return self.thread_bounds.size - 1

    @property
    def n_owned(self) -> int:
        return int(self.owned.size)

    def memory_counters(self) -> dict[str, int]:
        return {"n_pre": int(self.pre_table.size), "n_post": self.n_owned,
                "n_edges": self.store.n_records, "n_remote_pre": self.n_remote_pre}

    # -- spike buffer ------------------------------------------------------------
    def enqueue_spikes(self, global_ids, emission_step: int) -> None:
        """Buffer a step's spiking pre-neurons; ids without local edges are dropped."""
        ids = np.asarray(global_ids, dtype=np.int64)
        if self.audit and ids.size and np.unique(ids).size != ids.size:
            raise EngineError(f"duplicate spike ids at step {emission_step}")
        ids = np.unique(ids)
        pos = np.searchsorted(self.pre_table, ids)
        pos = np.minimum(pos, max(0, self.pre_table.size - 1))
        known = ids.size > 0 and self.pre_table.size > 0
        local = pos[self.pre_table[pos] == ids] if known else np.zeros(0, dtype=np.int64)
        self.buffer.put(local, emission_step)

    # -- compute -----------------------------------------------------------------
    def _check_window(self, step: int) -> None:
        self.overlap_checks += 1
        need = step - self.d_min
        if need >= 0 and self.buffer.last_enqueued < need:
            raise OverlapViolation(
                f"rank {self.rank} step {step}: spikes of step {need} not yet buffered "
                f"(last buffered {self.buffer.last_enqueued})")

    def _external(self, step: int) -> tuple[np.ndarray, bool]:
        if self.drive is None:
            return self._zero_ext, False
        return self.drive.row(step, self.drive_cols), True

    def _collect(self, step: int) -> int:
        b = self.buffer
        self._pairs = K.collect_pairs(step, self.d_min, self.d_max, b.ids, b.n, b.step,
                                      self._pp, self._aa)
        return self._pairs

    def deliver_interactions(self, step: int) -> int:
        """Deposit external drive and every due synaptic event, thread by thread."""
        self._check_window(step)
        n = self._collect(step)
        ext, has_ext = self._external(step)
        s = self.store
        applied = 0
        for k in range(self.n_threads):
            if has_ext:
                K.add_external(self.thread_bounds[k], self.thread_bounds[k + 1], self.syn_e, ext)
            applied += K.deliver_thread(
                k, step, n, self._pp, self._aa, self.d_min, s.n_pre, s.n_d, s.run_ptr,
                s.target, s.weight, s.edge, s.exc, s.plastic, s.k_plus, s.last_pre,
                self.syn_e, self.syn_i, self.k_minus, self.last_post, self.stdp,
                self.audit, self.edge_mask, self.post_mask)
        self.records_applied += applied
        return applied

    def update_neurons(self, step: int) -> np.ndarray:
        """Step every owned neuron; returns spiking global ids in ascending order."""
        n_out = 0
        for k in range(self.n_threads):
            n_out = self._update(k, step, n_out)
        return self.owned[self._out[:n_out]]

    def _update(self, k, step, n_out):
        s = self.store
        return K.update_thread(
            k, step, self.thread_bounds[k], self.thread_bounds[k + 1], self.u, self.syn_e,
            self.syn_i, self.refr, self.i_ext, self.params, self.post_ptr, self.post_recs,
            s.weight, s.k_plus, s.last_pre, self.k_minus, self.last_post, self.stdp,
            self.plastic_on, self.audit, self.edge_mask, self.post_mask, self._out, n_out)

    def compute(self, step: int) -> np.ndarray:
        """Delivery and neuron update for ``step``; returns local spikes (global ids)."""
        t0 = time.perf_counter()
        self._check_window(step)
        n = self._collect(step)
        ext, has_ext = self._external(step)
        if self.executor == "threads" and self.n_threads > 1:
            spikes = self._compute_pooled(step, n, ext, has_ext)
        else:
            s = self.store
            n_out, applied = K.rank_step(
                step, self.thread_bounds, ext, has_ext, n, self._pp, self._aa, self.d_min,
                s.n_pre, s.n_d, s.run_ptr, s.target, s.weight, s.edge, s.exc, s.plastic,
                s.k_plus, s.last_pre, self.u, self.syn_e, self.syn_i, self.refr,
                self.i_ext, self.params, self.post_ptr, self.post_recs, self.k_minus,
                self.last_post, self.stdp, self.plastic_on, self.audit, self.edge_mask,
                self.post_mask, self._out)
            self.records_applied += applied
            spikes = self.owned[self._out[:n_out]]
        self.step_count = step + 1
        if self.audit and ((self.edge_mask & ~self._edge_bit).any()
                           or (self.post_mask & ~self._post_bit).any()):
            self.audit_report(raise_on_violation=True)
        self.timings.append(time.perf_counter() - t0)
        return spikes

    def _compute_pooled(self, step, n, ext, has_ext):
        if self._pool is None:
            self._pool = ThreadPoolExecutor(self.n_threads, thread_name_prefix=f"rank{self.rank}")
        s = self.store
        outs = [np.zeros(max(1, int(self.thread_bounds[k + 1] - self.thread_bounds[k])),
                         dtype=np.int64) for k in range(self.n_threads)]

        def worker(k):
            lo, hi = self.thread_bounds[k], self.thread_bounds[k + 1]
            if has_ext:
                K.add_external(lo, hi, self.syn_e, ext)
            applied = K.deliver_thread(
                k, step, n, self._pp, self._aa, self.d_min, s.n_pre, s.n_d, s.run_ptr,
                s.target, s.weight, s.edge, s.exc, s.plastic, s.k_plus, s.last_pre,
                self.syn_e, self.syn_i, self.k_minus, self.last_post, self.stdp,
                self.audit, self.edge_mask, self.post_mask)
            m = K.update_thread(
                k, step, lo, hi, self.u, self.syn_e, self.syn_i, self.refr, self.i_ext,
                self.params, self.post_ptr, self.post_recs, s.weight, s.k_plus, s.last_pre,
                self.k_minus, self.last_post, self.stdp, self.plastic_on, self.audit,
                self.edge_mask, self.post_mask, outs[k], 0)
            return applied, outs[k][:m]

        results = list(self._pool.map(worker, range(self.n_threads)))
        self.records_applied += sum(a for a, _ in results)
        local = np.concatenate([o for _, o in results]) if results else np.zeros(0, np.int64)
        return self.owned[local]

    def step(self, incoming_global_ids=()) -> np.ndarray:
        """One serial step: buffer the previous step's global spikes, then compute."""
        s = self.step_count
        if s > 0:
            self.enqueue_spikes(incoming_global_ids, s - 1)
        return self.compute(s)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    # -- audit -------------------------------------------------------------------
    def audit_report(self, raise_on_violation: bool = False) -> AccessAudit:
        """Thread sets per record and per post-neuron; abort on any shared access.

        A record is also flagged when the thread that processed it does not
        own its target neuron.
        """
        if not self.audit:
            raise EngineError("audit mode is off for this rank")
        owner = np.repeat(np.arange(self.n_threads), np.diff(self.thread_bounds))
        touched = np.flatnonzero(self.edge_mask)
        edge_threads = {int(self.store.edge[r]): _mask_threads(int(self.edge_mask[r]))
                        for r in touched}
        posts = np.flatnonzero(self.post_mask)
        post_threads = {int(self.owned[i]): _mask_threads(int(self.post_mask[i])) for i in posts}
        bad_edges = []
        for r in touched:
            ths = _mask_threads(int(self.edge_mask[r]))
            if len(ths) > 1 or ths != {int(owner[self.store.target[r]])}:
                bad_edges.append(int(self.store.edge[r]))
        bad_posts = [g for g, ths in post_threads.items() if len(ths) > 1]
        report = AccessAudit(edge_threads, post_threads, sorted(bad_edges), sorted(bad_posts))
        if raise_on_violation and not report.ok:
            raise AuditViolation(
                f"rank {self.rank}: cross-thread access, edges {report.bad_edges}, "
                f"post-neurons {report.bad_posts}", report.bad_edges, report.bad_posts)
        return report

    def kernel_state(self) -> tuple[np.ndarray, np.ndarray]:
        return self.syn_e.copy(), self.syn_i.copy()

    def synapse_weights(self) -> tuple[np.ndarray, np.ndarray]:
        """(edge ids, current weights) of every stored record, by edge id."""
        order = np.argsort(self.store.edge)
        return self.store.edge[order], self.store.weight[order]


def build_rank_state(net, plan, rank: int, *, audit: bool = False, executor: str = "serial",
                     thread_override: dict[int, int] | None = None,
                     edge_order: np.ndarray | None = None) -> RankState:
    """Materialise rank ``rank``'s share of ``net`` under ``plan``.

    ``thread_override`` re-tags individual edges (fault injection for the
    audit); ``edge_order`` feeds this rank's edges in a custom order, which
    the canonical sort must make irrelevant.
    """
    g = net.graph
    owned = plan.owned(rank)
    sub = indegree_subgraph(g, owned)
    _, remote = split_local_remote(sub, owned)
    pre_table = np.union1d(owned, remote.pre)
    edges = sub.edges if edge_order is None else np.asarray(edge_order, dtype=np.int64)
    if edge_order is not None and not np.array_equal(np.sort(edges), sub.edges):
        raise EngineError("edge_order must be a permutation of the rank's in-edges")
    pre_g = g.pre[edges]
    post_g = g.post[edges]
    pre_local = np.searchsorted(pre_table, pre_g)
    target = np.searchsorted(owned, post_g)
    if edges.size and (np.any(pre_table[np.minimum(pre_local, pre_table.size - 1)] != pre_g)
                       or np.any(owned[np.minimum(target, owned.size - 1)] != post_g)):
        raise EngineError("edge with unknown pre or post neuron")
    thread = plan.thread_of[post_g].copy()
    if thread_override:
        for e, k in thread_override.items():
            hit = np.flatnonzero(edges == e)
            if hit.size == 0:
                raise EngineError(f"edge {e} is not stored on rank {rank}")
            thread[hit] = k
    store = build_edge_store(pre_local, target, net.delays[edges], edges, thread,
                             net.weights[edges], net.exc[edges], net.plastic[edges],
                             plan.n_threads, pre_table.size, net.d_min, net.d_max)
    bounds = plan.thread_bounds(rank)
    plastic_idx = np.flatnonzero(store.plastic)
    order = plastic_idx[np.lexsort((store.edge[plastic_idx], store.target[plastic_idx]))]
    post_ptr = np.zeros(owned.size + 1, dtype=np.int64)
    np.cumsum(np.bincount(store.target[order], minlength=owned.size), out=post_ptr[1:])
    stdp = net.stdp.as_array(net.dt) if net.stdp is not None else np.zeros(7)
    drive = getattr(net, "drive", None)
    drive_cols = None
    if drive is not None and drive.active:
        drive_cols = drive.columns_for(owned)
    else:
        drive = None
    return RankState(
        rank=rank, dt=net.dt, d_min=net.d_min, d_max=net.d_max, owned=owned,
        pre_table=pre_table, n_remote_pre=int(remote.pre.size), thread_bounds=bounds,
        store=store, buffer=SpikeBuffer(net.d_max, pre_table.size),
        params=np.ascontiguousarray(net.params[owned]),
        u=net.u_init[owned].astype(np.float64).copy(), syn_e=np.zeros(owned.size),
        syn_i=np.zeros(owned.size), refr=np.zeros(owned.size, dtype=np.int64),
        i_ext=net.i_ext[owned].astype(np.float64).copy(),
        k_minus=np.zeros(owned.size), last_post=np.zeros(owned.size, dtype=np.int64),
        post_ptr=post_ptr, post_recs=order.astype(np.int64), stdp=stdp,
        plastic_on=bool(net.stdp is not None and store.plastic.any()),
        drive=drive, drive_cols=drive_cols, audit=audit, executor=executor)
