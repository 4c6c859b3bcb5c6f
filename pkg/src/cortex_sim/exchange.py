"""Inter-rank spike exchange and the multi-rank driver.

Ranks run as threads inside one process and talk through an
:class:`ExchangeFabric`: one inbox per rank, messages tagged with their
emission step, FIFO per sender.  Every rank sends every other rank one
message per step, empty or not, so a receiver always knows when a round is
complete.

With overlap on, each rank hands the previous step's spikes to a
communication agent thread and computes the current step while the agent
broadcasts and collects.  Delivery at step ``s`` reads spikes emitted at
``s - d_min`` or earlier, so when ``d_min >= 2`` the exchange of step
``s - 1`` is not needed until step ``s + 1``.  With ``d_min == 1`` there is
nothing to overlap and the rank blocks on the exchange before computing.
"""

from __future__ import annotations

import queue
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import RankState, build_rank_state


class ExchangeError(RuntimeError):
    pass


class ExchangeTimeout(ExchangeError):
    def __init__(self, rank, step, missing):
        super().__init__(f"rank {rank}: timed out waiting for step {step} spikes "
                         f"from ranks {sorted(missing)}")
        self.rank, self.step, self.missing = rank, step, sorted(missing)


class ExchangeAborted(ExchangeError):
    pass


@dataclass(frozen=True)
class SpikeMessage:
    sender: int
    step: int
    ids: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        if ids.size > 1 and np.any(np.diff(ids) <= 0):
            raise ExchangeError(f"rank {self.sender} step {self.step}: ids not strictly ascending")
        object.__setattr__(self, "ids", ids)


class ExchangeFabric:
    """In-process message passing between ``n_ranks`` ranks."""

    def __init__(self, n_ranks: int, timeout: float = 60.0, latency: float = 0.0):
        if n_ranks < 1:
            raise ExchangeError("need at least one rank")
        self.n_ranks = n_ranks
        self.timeout = timeout
        self.latency = latency
        self._last_sent = [-1] * n_ranks
        self._inbox = [queue.SimpleQueue() for _ in range(n_ranks)]
        self._held: list[dict[int, dict[int, np.ndarray]]] = [{} for _ in range(n_ranks)]
        self._abort = threading.Event()
        self._lock = threading.Lock()
        self.sent = np.zeros(n_ranks, dtype=np.int64)
        self.received = np.zeros(n_ranks, dtype=np.int64)
        self.last_step = [dict() for _ in range(n_ranks)]  # receiver -> sender -> step

    def abort(self) -> None:
        self._abort.set()

    def send(self, dest: int, msg: SpikeMessage) -> None:
        with self._lock:
            self.sent[msg.sender] += 1
        self._inbox[dest].put(msg)

    def receive(self, rank: int, step: int, senders) -> dict[int, np.ndarray]:
        """Block until ``rank`` holds step ``step`` messages from every sender."""
        want = set(senders)
        held = self._held[rank]
        deadline = time.monotonic() + self.timeout
        while not want <= set(held.get(step, {})):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ExchangeTimeout(rank, step, want - set(held.get(step, {})))
            if self._abort.is_set():
                raise ExchangeAborted(f"rank {rank}: exchange aborted")
            try:
                msg = self._inbox[rank].get(timeout=min(remaining, 0.5))
            except queue.Empty:
                continue
            prev = self.last_step[rank].get(msg.sender, -1)
            if msg.step <= prev:
                raise ExchangeError(f"rank {rank}: message for step {msg.step} from rank "
                                    f"{msg.sender} arrived after step {prev}")
            self.last_step[rank][msg.sender] = msg.step
            held.setdefault(msg.step, {})[msg.sender] = msg.ids
        self.received[rank] += len(want)
        got = held.pop(step, {})
        return {s: got[s] for s in sorted(want)}

    @property
    def in_flight(self) -> int:
        return int(self.sent.sum() - self.received.sum())


def broadcast_spikes(fabric: ExchangeFabric, rank: int, msg: SpikeMessage) -> int:
    """Send ``msg`` to every other rank, empty or not; returns the count (n - 1).

    The injected fabric latency is paid once per broadcast by the sender.
    """
    if msg.sender != rank:
        raise ExchangeError(f"rank {rank} cannot broadcast a message from rank {msg.sender}")
    if msg.step <= fabric._last_sent[rank]:
        raise ExchangeError(f"rank {rank}: broadcast for step {msg.step} after step "
                            f"{fabric._last_sent[rank]}")
    fabric._last_sent[rank] = msg.step
    if fabric.latency > 0 and fabric.n_ranks > 1:
        time.sleep(fabric.latency)
    n = 0
    for dest in range(fabric.n_ranks):
        if dest != rank:
            fabric.send(dest, msg)
            n += 1
    return n


def gather_round(fabric: ExchangeFabric, rank: int, step: int, local_ids) -> np.ndarray:
    """Sorted union of this rank's and every other rank's spikes of ``step``."""
    others = [r for r in range(fabric.n_ranks) if r != rank]
    parts = [np.asarray(local_ids, dtype=np.int64)]
    parts += list(fabric.receive(rank, step, others).values())
    allids = np.concatenate(parts)
    merged = np.unique(allids)
    if merged.size != allids.size:
        raise ExchangeError(f"rank {rank}: duplicate spike ids in step {step} exchange")
    return merged


def exchange_round(fabric: ExchangeFabric, rank: int, step: int, local_ids) -> np.ndarray:
    """Broadcast this rank's spikes of ``step`` and return the global set."""
    broadcast_spikes(fabric, rank, SpikeMessage(rank, step, local_ids))
    return gather_round(fabric, rank, step, local_ids)


@dataclass
class RankTimeline:
    """Wall-clock intervals of one rank, relative to the run start."""

    compute: list[tuple[int, float, float]] = field(default_factory=list)
    exchange: list[tuple[int, float, float]] = field(default_factory=list)
    wait: float = 0.0

    def overlap_fraction(self) -> float:
        """Share of exchange time that ran concurrently with compute."""
        total = sum(b - a for _, a, b in self.exchange)
        if total <= 0:
            return 0.0
        comp = sorted((a, b) for _, a, b in self.compute)
        hidden, j = 0.0, 0
        for _, a, b in sorted(self.exchange, key=lambda x: x[1]):
            while j < len(comp) and comp[j][1] <= a:
                j += 1
            k = j
            while k < len(comp) and comp[k][0] < b:
                hidden += max(0.0, min(b, comp[k][1]) - max(a, comp[k][0]))
                k += 1
        return hidden / total


def run_rank_with_comm_agent(state: RankState, fabric: ExchangeFabric, n_steps: int, *,
                             overlap: bool = True, t0: float | None = None,
                             trace: bool = False):
    """Drive one rank for ``n_steps`` steps; returns (spike log, timeline).

    The spike log is a list of ``(step, ids)``.  A final round after the last
    step exchanges its spikes too, so every sent message is received.
    """
    t0 = time.perf_counter() if t0 is None else t0
    tl = RankTimeline()
    log = []
    rank = state.rank
    clock = time.perf_counter
    agent = ThreadPoolExecutor(1, thread_name_prefix=f"comm{rank}") if overlap else None

    def exchange(step, ids):
        a = clock()
        merged = exchange_round(fabric, rank, step, ids)
        if trace:
            tl.exchange.append((step, a - t0, clock() - t0))
        return merged

    def compute(step):
        a = clock()
        out = state.compute(step)
        if trace:
            tl.compute.append((step, a - t0, clock() - t0))
        log.append((step, out))
        return out

    try:
        prev = None
        for s in range(n_steps):
            if prev is None:
                compute(s)
            elif agent is not None and state.d_min >= 2:
                fut = agent.submit(exchange, s - 1, prev)
                compute(s)
                a = clock()
                merged = fut.result()
                tl.wait += clock() - a
                state.enqueue_spikes(merged, s - 1)
            else:
                a = clock()
                merged = exchange(s - 1, prev) if agent is None else agent.submit(exchange, s - 1, prev).result()
                tl.wait += clock() - a
                state.enqueue_spikes(merged, s - 1)
                compute(s)
            prev = log[-1][1]
        if prev is not None:
            exchange(n_steps - 1, prev)
    except BaseException:
        fabric.abort()
        raise
    finally:
        if agent is not None:
            agent.shutdown()
        state.close()
    return log, tl


@dataclass
class DistributedResult:
    spikes: np.ndarray                   # (n, 2) rows of (step, id), sorted
    edge_ids: np.ndarray
    weights: np.ndarray                  # final weights, aligned with edge_ids
    wall_time: float
    n_ranks: int
    n_threads: int
    overlap: bool
    messages_sent: int
    messages_received: int
    records_applied: int
    memory: list[dict[str, int]]
    timelines: list[RankTimeline]
    states: list[RankState] = field(default_factory=list, repr=False)

    def rate_hz(self, n_neurons: int, n_steps: int, dt: float) -> float:
        return self.spikes.shape[0] / max(1, n_neurons) / (n_steps * dt * 1e-3)


def run_distributed(net, plan, n_steps: int, *, overlap: bool = True, audit: bool = False,
                    latency: float = 0.0, timeout: float = 60.0, executor: str = "serial",
                    thread_override: dict[int, int] | None = None, trace: bool = False,
                    keep_states: bool = False) -> DistributedResult:
    """Simulate ``net`` under ``plan`` with one thread per rank."""
    states = []
    for r in range(plan.n_ranks):
        ov = None
        if thread_override:
            owned = set(plan.owned(r).tolist())
            ov = {e: k for e, k in thread_override.items() if int(net.graph.post[e]) in owned}
        states.append(build_rank_state(net, plan, r, audit=audit, executor=executor,
                                       thread_override=ov or None))
    fabric = ExchangeFabric(plan.n_ranks, timeout=timeout, latency=latency)
    results: list = [None] * plan.n_ranks
    errors: list = [None] * plan.n_ranks
    t0 = time.perf_counter()

    def body(r):
        try:
            results[r] = run_rank_with_comm_agent(states[r], fabric, n_steps, overlap=overlap,
                                                  t0=t0, trace=trace)
        except BaseException as exc:  # re-raised below
            errors[r] = exc

    old = sys.getswitchinterval()
    sys.setswitchinterval(1e-4)
    try:
        if plan.n_ranks == 1:
            body(0)
        else:
            threads = [threading.Thread(target=body, args=(r,), name=f"rank{r}")
                       for r in range(plan.n_ranks)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
    finally:
        sys.setswitchinterval(old)
    wall = time.perf_counter() - t0
    primary = [e for e in errors if e is not None and not isinstance(e, ExchangeAborted)]
    if primary or any(errors):
        raise (primary or [e for e in errors if e is not None])[0]
    rows = []
    for log, _ in results:
        for step, ids in log:
            if ids.size:
                rows.append(np.column_stack([np.full(ids.size, step, dtype=np.int64), ids]))
    spikes = np.concatenate(rows) if rows else np.zeros((0, 2), dtype=np.int64)
    spikes = spikes[np.lexsort((spikes[:, 1], spikes[:, 0]))]
    eids = np.concatenate([st.store.edge for st in states])
    ws = np.concatenate([st.store.weight for st in states])
    order = np.argsort(eids)
    return DistributedResult(
        spikes=spikes, edge_ids=eids[order], weights=ws[order], wall_time=wall,
        n_ranks=plan.n_ranks, n_threads=plan.n_threads, overlap=overlap,
        messages_sent=int(fabric.sent.sum()), messages_received=int(fabric.received.sum()),
        records_applied=sum(st.records_applied for st in states),
        memory=[st.memory_counters() for st in states],
        timelines=[tl for _, tl in results], states=states if keep_states else [])
