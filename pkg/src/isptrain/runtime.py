"""Training job driver.

A job has ``P`` workers and one supervisor. Each step every worker fetches
a mini-batch, computes an update on its own replica, publishes (part of)
it to the sharded store and merges what the others published. The
supervisor turns worker reports into a global loss series, bills the
run, checks the stop criterion and asks the scheduler whether to drop a
worker.

Three execution modes share the worker and supervisor logic:

* simulated synchronous (BSP, ISP): one lane, a step-time model instead of
  a clock, fully deterministic;
* simulated SSP: a discrete-event simulation with per-worker step times;
* threaded synchronous: real threads, real sleeps in the store, wall-clock
  timing.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .comms import (ADVANCE_CLOCK, LOSS_REPORT, REMOVE_WORKER, SUPERVISOR, TERMINATE,
                    UPDATE_AVAILABLE, DirectoryObjectStore, LatencyModel, MemoryObjectStore,
                    ShardMap, Signal, SignalBus, UpdateKey, UpdateStore, decode_dense,
                    decode_update, encode_dense, encode_update, pull_updates)
from .config import SIMULATED, JobConfig, flatten
from .consistency import ISP, SSP, IspAccumulator, SyncPolicy, accumulate, extract_significant
from .cost import CostReport, MetricLog, MetricRow, compute_cost
from .data import Corpus, partition, read_manifest
from .errors import ConfigurationError, DataError, IsptrainError, JobAborted, ProtocolError
from .learning import LR, ModelState, batch_loss, loss_grad
from .optim import OptimizerState, optimizer_step
from .rng import substream
from .scheduler import REMOVE, ScaleInScheduler
from .sparse import SparseVector

log = logging.getLogger(__name__)


@dataclass
class WorkerReport:
    worker: int
    step: int
    loss: float
    duration_ms: float
    bytes_published: int = 0

    def __post_init__(self):
        if not self.duration_ms > 0:
            raise ValueError("report duration must be positive")
        if not math.isfinite(self.loss):
            raise ValueError("report loss must be finite")


# -- data and model setup ------------------------------------------------

@dataclass
class TrainingData:
    store: object
    n_batches: int
    kind: str
    dim: int
    n_users: int = 0
    n_movies: int = 0
    probe: list = field(default_factory=list)


def prepare_data(cfg: JobConfig, corpus: Corpus | None = None) -> TrainingData:
    """Partition ``corpus`` (or open ``cfg.data``) into mini-batches of ``cfg.batch_size``.

    The probe batch used to rank replicas is one of the training batches,
    picked with the ``probe`` stream, so turning the scheduler on does not
    change what the workers train on.
    """
    if corpus is not None:
        store = MemoryObjectStore(partition(corpus.samples, cfg.batch_size, seed=cfg.seed))
        kind, dim, nu, nm = corpus.kind, corpus.dim, corpus.n_users, corpus.n_movies
    elif cfg.data:
        manifest = read_manifest(cfg.data)
        kind = manifest["kind"]
        dim = int(manifest["dim"])
        nu, nm = int(manifest.get("n_users", 0)), int(manifest.get("n_movies", 0))
        store = DirectoryObjectStore(cfg.data)
        if int(manifest["batch_size"]) != cfg.batch_size:
            log.info("re-partitioning corpus from B=%s to B=%d", manifest["batch_size"],
                     cfg.batch_size)
            samples = [s for b in range(len(store)) for s in store.fetch(b)]
            store = MemoryObjectStore(partition(samples, cfg.batch_size, seed=cfg.seed))
    else:
        raise ConfigurationError("no dataset given")
    if kind.upper() != cfg.model.upper():
        raise ConfigurationError(f"config model {cfg.model!r} does not match corpus kind {kind!r}")
    if len(store) == 0:
        raise DataError("corpus has no batches")
    probe_id = int(substream(cfg.seed, "probe").integers(len(store)))
    return TrainingData(store, len(store), kind.upper(), dim, nu, nm, store.fetch(probe_id))


def init_model(cfg: JobConfig, data: TrainingData) -> ModelState:
    if data.kind == LR:
        return ModelState.lr(data.dim)
    return ModelState.pmf(data.n_users, data.n_movies, cfg.rank,
                          rng=substream(cfg.seed, "init"), init_scale=cfg.init_scale)


# -- worker ------------------------------------------------------------------

class Worker:
    """Local state of one worker: replica, optimizer and ISP accumulator."""

    def __init__(self, wid: int, model: ModelState, opt: OptimizerState, policy: SyncPolicy,
                 reg: float = 0.0):
        self.id = wid
        self.model = model
        self.opt = opt
        self.policy = policy
        self.reg = reg
        self.acc = IspAccumulator(model.dim) if policy.kind == ISP else None
        self.clock = 0
        self.bytes_published = 0

    def compute(self, batch, scale: float = 1.0) -> tuple[float, SparseVector]:
        """Batch loss and this worker's update, scaled by ``scale``."""
        loss, grad = loss_grad(batch, self.model, self.reg)
        upd = optimizer_step(self.opt, self.model, grad, producer=self.id, batch_loss=loss)
        u = upd.deltas if scale == 1.0 else upd.deltas.scale(scale)
        return float(loss), u

    def outgoing(self, u: SparseVector) -> SparseVector:
        """What gets published: all of ``u``, or its significant part under ISP."""
        if self.acc is None:
            return u
        accumulate(self.acc, u)
        candidate = self.model.params.copy()
        candidate[u.indices] += u.values
        publish, _ = extract_significant(self.acc, candidate, self.clock + 1, self.policy.v)
        return publish

    def merge(self, contributions) -> None:
        """Apply ``contributions`` in the given order and advance the clock."""
        params = self.model.params
        for vec in contributions:
            params[vec.indices] += vec.values
        self.model.step += 1
        self.clock += 1


def evict_worker(workers: dict, active: list[int], victim: int, store: UpdateStore,
                 clock: int, policy: SyncPolicy) -> list[int]:
    """Retire ``victim`` and return the surviving pool.

    The victim leaves its replica in the store. Under ISP with ``v > 0``
    every survivor averages it into its own replica; otherwise the replicas
    are left alone.
    """
    if len(active) < 2:
        raise ProtocolError("cannot evict from a pool of one")
    if victim not in active:
        raise ProtocolError(f"worker {victim} is not active")
    key = UpdateKey(victim, clock, "replica")
    store.put(key, encode_dense(workers[victim].model.params))
    survivors = [p for p in active if p != victim]
    if policy.kind == ISP and policy.v > 0:
        x_victim = decode_dense(store.get(key))
        for p in survivors:
            merged = 0.5 * (x_victim + workers[p].model.params)
            if not np.all(np.isfinite(merged)):
                raise ProtocolError("replica averaging produced non-finite values")
            workers[p].model.params = merged
    return survivors


# -- supervisor ----------------------------------------------------------------

class Supervisor:
    """Aggregates reports, bills the run and owns the stop and scale-in decisions."""

    def __init__(self, cfg: JobConfig):
        self.cfg = cfg
        self.pricing = cfg.pricing.table()
        self.alpha = cfg.scheduler.alpha
        self.log = MetricLog(header=flatten(cfg))
        self.timeline: list[tuple[float, int]] = []
        self.wall_ms = 0.0
        self.cost = 0.0
        self.smoothed: Optional[float] = None
        self.reports_total = 0
        self.scheduler = ScaleInScheduler(cfg.scheduler) if cfg.scheduler.enabled else None
        self.stop_reason: Optional[str] = None

    def record_step(self, step: int, reports: list[WorkerReport], duration_ms: float,
                    workers: int, bytes_total: int) -> MetricRow:
        loss = float(np.mean([r.loss for r in reports]))
        self.smoothed = loss if self.smoothed is None else (
            self.smoothed + self.alpha * (loss - self.smoothed))
        self.wall_ms += duration_ms
        self.cost += duration_ms / 1000.0 * self.pricing.rate_per_s(workers)
        self.timeline.append((duration_ms / 1000.0, workers))
        self.reports_total += len(reports)
        row = MetricRow(step, self.wall_ms, workers, loss, self.smoothed, bytes_total, self.cost)
        self.log.rows.append(row)
        if self.scheduler is not None:
            self.scheduler.observe(step, loss, duration_ms)
        return row

    def add_event(self, event: str) -> None:
        row = self.log.rows[-1]
        row.event = event if not row.event else f"{row.event};{event}"

    def check_stop(self) -> Optional[str]:
        st = self.cfg.stop
        row = self.log.rows[-1]
        if st.loss_threshold is not None and self.smoothed <= st.loss_threshold:
            self.stop_reason = "threshold"
        elif st.max_steps is not None and row.step >= st.max_steps:
            self.stop_reason = "max_steps"
        elif st.max_wall_s is not None and self.wall_ms / 1000.0 >= st.max_wall_s:
            self.stop_reason = "max_wall"
        if self.stop_reason:
            self.add_event("terminate")
        return self.stop_reason

    def schedule(self, pool: int, probe_losses):
        if self.scheduler is None:
            return None
        decision = self.scheduler.decide(self.wall_ms / 1000.0, pool, probe_losses)
        for ev in decision.events:
            self.add_event(ev)
        return decision

    def close(self) -> None:
        if self.scheduler is not None:
            self.scheduler.close()


@dataclass
class StartRecord:
    """One SSP step admission: who started which clock, when, against what."""

    worker: int
    clock: int
    time_ms: float
    min_clock: int
    applied: tuple[int, ...]    # per producer, how many of its updates are in the replica


@dataclass
class JobResult:
    final_loss: float
    final_smoothed: float
    steps: int
    wall_time_s: float
    cost: CostReport
    metric_log: MetricLog
    stop_reason: str
    models: dict[int, ModelState]
    active: list[int]
    bytes_published: int
    events: list[str] = field(default_factory=list)
    max_gap: int = 0
    visibility_violations: int = 0
    ssp_starts: list[StartRecord] = field(default_factory=list)
    ssp_finishes: list[tuple[float, int, int]] = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    report_count: int = 0

    @property
    def reached_threshold(self) -> bool:
        return self.stop_reason == "threshold"

    @property
    def final_model(self) -> ModelState:
        return self.models[min(self.active)]

    @property
    def checksum(self) -> str:
        return self.final_model.checksum()

    @property
    def total_cost(self) -> float:
        return self.cost.total


# -- simulated synchronous mode ------------------------------------------------

class _Timer:
    def __init__(self, cfg: JobConfig):
        self.t = cfg.timing
        self.rng = substream(cfg.seed, "timing-jitter")

    def compute_ms(self, n_samples: int) -> float:
        t = self.t
        base = t.fetch_ms + (t.compute_base_ms + t.compute_per_sample_ms * n_samples) * (
            1.0 + t.compute_jitter * (2.0 * self.rng.random() - 1.0))
        if t.straggler_ms:
            base += t.straggler_ms * self.rng.random()
        return base

    def sync_step_ms(self, compute: list[float], sizes: dict[int, int], num_shards: int) -> float:
        """Barrier step: slowest compute, then the slower of worker traffic and shard load."""
        t = self.t
        n = len(sizes)
        # each worker puts its own blob and gets everyone else's
        comm = sum(t.op_ms(b) for b in sizes.values())
        shards = ShardMap(num_shards)
        busy = [0.0] * num_shards
        for p, b in sizes.items():
            # one put plus one get by every other worker
            busy[shards.shard_of(p)] += n * t.shard_ms(b)
        return max(compute) + max(comm, max(busy)) + t.signal_ms


def _probe_fn(workers, active, probe):
    return lambda: {p: batch_loss(probe, workers[p].model) for p in active}


def _make_workers(cfg: JobConfig, data: TrainingData) -> dict[int, Worker]:
    model = init_model(cfg, data)
    policy = cfg.policy
    return {p: Worker(p, model.copy(), cfg.optimizer.make(model.dim), policy, cfg.reg)
            for p in range(cfg.workers)}


def _run_sync_simulated(cfg, data, workers, sup, store, result):
    timer = _Timer(cfg)
    policy = cfg.policy
    active = sorted(workers)
    base = 0
    for c in itertools.count():
        n = len(active)
        scale = 1.0 / n if n > 1 else 1.0
        own, sizes, compute, losses = {}, {}, [], {}
        for rank, p in enumerate(active):
            batch = data.store.fetch((base + rank) % data.n_batches)
            w = workers[p]
            if cfg.record_trajectory:
                result.trajectory.append((p, c, w.model.copy(), batch))
            losses[p], own[p] = w.compute(batch, scale)
            blob = encode_update(p, c, w.outgoing(own[p]))
            store.put(UpdateKey(p, c), blob)
            w.bytes_published += len(blob)
            sizes[p] = len(blob)
            compute.append(timer.compute_ms(len(batch)))
        # every worker pulls the same blobs, so decode each one once
        blobs = pull_updates(store, [UpdateKey(q, c) for q in active])
        foreign = {q: decode_update(b)[2] for q, b in zip(active, blobs)}
        for p in active:
            workers[p].merge([own[q] if q == p else foreign[q] for q in active])
        store.gc(c + 1)
        base += n
        dur = timer.sync_step_ms(compute, sizes, cfg.shards)
        reports = [WorkerReport(p, c + 1, losses[p], dur, sizes[p]) for p in active]
        sup.record_step(c + 1, reports, dur, n, store.total_published_bytes)
        if sup.check_stop():
            break
        decision = sup.schedule(n, _probe_fn(workers, active, data.probe))
        if decision is not None and decision.action == REMOVE:
            active = evict_worker(workers, active, decision.victim, store, c, policy)
    return active


# -- simulated SSP mode ----------------------------------------------------------

_FINISH, _START = 0, 1


def _run_ssp_simulated(cfg, data, workers, sup, store, result):
    timer = _Timer(cfg)
    P = len(workers)
    s = cfg.policy.slack
    scale = 1.0 / P if P > 1 else 1.0
    completed = [0] * P
    applied = [[0] * P for _ in range(P)]
    published: list[UpdateKey] = []
    seen = [0] * P
    heap, seq = [], itertools.count()
    for p in range(P):
        heapq.heappush(heap, (0.0, _START, next(seq), p, None))
    blocked: set[int] = set()
    pending: dict[int, list[WorkerReport]] = {}
    last_row_ms = 0.0

    while heap:
        now, kind, _, p, payload = heapq.heappop(heap)
        w = workers[p]
        if kind == _START:
            c = completed[p]
            slowest = min(completed)
            if c - slowest > s:
                blocked.add(p)
                continue
            fresh = sorted((k for k in published[seen[p]:] if k.producer != p),
                           key=lambda k: (k.clock, k.producer))
            seen[p] = len(published)
            comm = 0.0
            for key in fresh:
                blob = store.get(key)
                comm += cfg.timing.op_ms(len(blob))
                vec = decode_update(blob)[2]
                w.model.params[vec.indices] += vec.values
                applied[p][key.producer] += 1
            result.max_gap = max(result.max_gap, c - slowest)
            if any(applied[p][q] < c - s for q in range(P) if q != p):
                result.visibility_violations += 1
            result.ssp_starts.append(StartRecord(p, c, now, slowest, tuple(applied[p])))
            batch = data.store.fetch((c * P + p) % data.n_batches)
            if cfg.record_trajectory:
                result.trajectory.append((p, c, w.model.copy(), batch))
            loss, u = w.compute(batch, scale)
            w.model.params[u.indices] += u.values
            w.model.step += 1
            blob = encode_update(p, c, u)
            dur = timer.compute_ms(len(batch)) + comm + cfg.timing.op_ms(len(blob)) + cfg.timing.signal_ms
            heapq.heappush(heap, (now + dur, _FINISH, next(seq), p, (c, blob, loss, dur)))
            continue

        c, blob, loss, dur = payload
        store.put(UpdateKey(p, c), blob)
        w.bytes_published += len(blob)
        published.append(UpdateKey(p, c))
        completed[p] += 1
        w.clock = completed[p]
        result.ssp_finishes.append((now, p, c))
        pending.setdefault(c, []).append(WorkerReport(p, c + 1, loss, dur, len(blob)))
        if len(pending[c]) == P:
            reports = sorted(pending.pop(c), key=lambda r: r.worker)
            sup.record_step(c + 1, reports, now - last_row_ms, P, store.total_published_bytes)
            last_row_ms = now
            if sup.check_stop():
                break
        heapq.heappush(heap, (now, _START, next(seq), p, None))
        for q in sorted(blocked):
            heapq.heappush(heap, (now, _START, next(seq), q, None))
        blocked.clear()
    return sorted(workers)


# -- threaded synchronous mode -----------------------------------------------------

def _worker_thread(w: Worker, data: TrainingData, store: UpdateStore, bus: SignalBus,
                   timeout: float) -> None:
    own = None
    loss = 0.0
    t0 = 0.0
    try:
        while True:
            for sig in bus.wait_signals(w.id, timeout):
                if sig.kind == TERMINATE:
                    return
                if sig.kind == REMOVE_WORKER:
                    store.put(UpdateKey(w.id, sig.clock, "replica"), encode_dense(w.model.params))
                    bus.send(SUPERVISOR, Signal(UPDATE_AVAILABLE, w.id, sig.clock,
                                                {"replica": True}))
                    return
                phase = sig.payload["phase"]
                if phase == "compute":
                    t0 = time.monotonic()
                    replica = sig.payload.get("average_with")
                    if replica is not None:
                        x_victim = decode_dense(store.get(UpdateKey(replica, sig.clock - 1, "replica")))
                        w.model.params = 0.5 * (x_victim + w.model.params)
                    batch = data.store.fetch(sig.payload["batches"][w.id])
                    loss, own = w.compute(batch, sig.payload["scale"])
                    blob = encode_update(w.id, sig.clock, w.outgoing(own))
                    store.put(UpdateKey(w.id, sig.clock), blob)
                    w.bytes_published += len(blob)
                    bus.send(SUPERVISOR, Signal(UPDATE_AVAILABLE, w.id, sig.clock,
                                                {"bytes": len(blob)}))
                else:
                    active = sig.payload["active"]
                    others = [q for q in active if q != w.id]
                    blobs = dict(zip(others, pull_updates(store, [UpdateKey(q, sig.clock)
                                                                  for q in others])))
                    w.merge([own if q == w.id else decode_update(blobs[q])[2] for q in active])
                    dur = max((time.monotonic() - t0) * 1000.0, 1e-6)
                    bus.send(SUPERVISOR, Signal(LOSS_REPORT, w.id, sig.clock,
                                                {"loss": loss, "duration_ms": dur}))
    except Exception as exc:  # reported to the supervisor, which aborts the job
        log.exception("worker %d failed", w.id)
        bus.send(SUPERVISOR, Signal(UPDATE_AVAILABLE, w.id, -1, {"error": repr(exc)}))


def _collect(bus: SignalBus, kind: str, count: int, timeout: float) -> list[Signal]:
    out = []
    deadline = time.monotonic() + timeout
    while len(out) < count:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            raise JobAborted(f"timed out waiting for {count - len(out)} {kind} signal(s)")
        for sig in bus.wait_signals(SUPERVISOR, remaining):
            if "error" in sig.payload:
                raise JobAborted(f"worker {sig.sender} failed: {sig.payload['error']}")
            if sig.kind != kind:
                raise ProtocolError(f"supervisor expected {kind}, got {sig.kind}")
            out.append(sig)
    return out


def _run_sync_threaded(cfg, data, workers, sup, store, result):
    policy = cfg.policy
    timeout = cfg.store.report_timeout_s
    bus = SignalBus(LatencyModel(cfg.store.signal_ms, 0.0, 0.0,
                                 substream(cfg.seed, "timing-jitter", 1)))
    threads = [threading.Thread(target=_worker_thread, args=(workers[p], data, store, bus, timeout),
                                name=f"worker-{p}", daemon=True) for p in sorted(workers)]
    for th in threads:
        th.start()
    active = sorted(workers)
    base = 0
    average_with = None
    try:
        for c in itertools.count():
            n = len(active)
            start = time.monotonic()
            payload = {"phase": "compute", "scale": 1.0 / n if n > 1 else 1.0,
                       "batches": {p: (base + r) % data.n_batches for r, p in enumerate(active)}}
            if average_with is not None:
                payload["average_with"] = average_with
                average_with = None
            bus.broadcast(active, Signal(ADVANCE_CLOCK, SUPERVISOR, c, payload))
            _collect(bus, UPDATE_AVAILABLE, n, timeout)
            bus.broadcast(active, Signal(ADVANCE_CLOCK, SUPERVISOR, c,
                                         {"phase": "merge", "active": active}))
            sigs = _collect(bus, LOSS_REPORT, n, timeout)
            store.gc(c + 1)
            base += n
            dur = (time.monotonic() - start) * 1000.0
            reports = sorted((WorkerReport(s.sender, c + 1, s.payload["loss"], s.payload["duration_ms"])
                              for s in sigs), key=lambda r: r.worker)
            sup.record_step(c + 1, reports, dur, n, store.total_published_bytes)
            if sup.check_stop():
                break
            # workers sit idle at the barrier, so their replicas can be scored directly
            decision = sup.schedule(n, _probe_fn(workers, active, data.probe))
            if decision is not None and decision.action == REMOVE:
                if n < 2:
                    raise ProtocolError("cannot evict from a pool of one")
                bus.send(decision.victim, Signal(REMOVE_WORKER, SUPERVISOR, c))
                _collect(bus, UPDATE_AVAILABLE, 1, timeout)
                active = [p for p in active if p != decision.victim]
                if policy.kind == ISP and policy.v > 0:
                    average_with = decision.victim
    finally:
        bus.broadcast(active, Signal(TERMINATE, SUPERVISOR))
        for th in threads:
            th.join(timeout)
    return active


# -- entry point ---------------------------------------------------------------------

def run_job(cfg: JobConfig, corpus: Corpus | None = None) -> JobResult:
    """Run a training job to its stop criterion and return what happened."""
    cfg.validate()
    data = prepare_data(cfg, corpus)
    workers = _make_workers(cfg, data)
    sup = Supervisor(cfg)
    latency = None
    if cfg.mode != SIMULATED:
        latency = LatencyModel(cfg.store.latency_ms, cfg.store.jitter_ms, 0.0,
                               substream(cfg.seed, "timing-jitter", 2))
    store = UpdateStore(cfg.shards, latency)
    result = JobResult(math.nan, math.nan, 0, 0.0, None, sup.log, "", {}, [], 0)
    try:
        if cfg.policy.kind == SSP:
            active = _run_ssp_simulated(cfg, data, workers, sup, store, result)
        elif cfg.mode == SIMULATED:
            active = _run_sync_simulated(cfg, data, workers, sup, store, result)
        else:
            active = _run_sync_threaded(cfg, data, workers, sup, store, result)
    except (IsptrainError, ValueError, ArithmeticError) as exc:
        if isinstance(exc, (ConfigurationError, JobAborted)):
            raise
        raise JobAborted(f"job aborted: {exc}") from exc
    finally:
        sup.close()
    rows = sup.log.rows
    result.final_loss = rows[-1].loss_raw
    result.final_smoothed = rows[-1].loss_ewma
    result.steps = rows[-1].step
    result.wall_time_s = sup.wall_ms / 1000.0
    result.cost = compute_cost(sup.timeline, sup.pricing)
    result.stop_reason = sup.stop_reason or "exhausted"
    result.active = list(active)
    result.models = {p: workers[p].model for p in active}
    result.bytes_published = store.total_published_bytes
    result.events = [f"{r.step}:{r.event}" for r in rows if r.event]
    result.report_count = sup.reports_total
    return result
