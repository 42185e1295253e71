"""Indirect communication: sharded update store, signal bus, object store.

Workers never talk to each other directly. Updates go through a
write-once key-value store sharded by producer id, control messages go
through per-receiver FIFO queues, and mini-batches come from an object
store.
"""
from __future__ import annotations

import logging
import os
import struct
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .data import batch_path, read_batch, read_manifest
from .errors import DataError, ProtocolError, PullTimeout
from .sparse import SparseVector

log = logging.getLogger(__name__)

SUPERVISOR = -1

# -- update wire format --------------------------------------------------

_HEADER = struct.Struct("<III")
_ENTRY = np.dtype([("index", "<u4"), ("value", "<f8")])


def encode_update(producer: int, clock: int, vec: SparseVector) -> bytes:
    """Little-endian header (producer, clock, count) then (u32, f64) pairs."""
    body = np.empty(len(vec), dtype=_ENTRY)
    body["index"] = vec.indices
    body["value"] = vec.values
    return _HEADER.pack(producer, clock, len(vec)) + body.tobytes()


def decode_update(blob: bytes) -> tuple[int, int, SparseVector]:
    if len(blob) < _HEADER.size:
        raise ProtocolError("truncated update header")
    producer, clock, count = _HEADER.unpack_from(blob)
    if len(blob) != _HEADER.size + count * _ENTRY.itemsize:
        raise ProtocolError("update payload length does not match its header")
    body = np.frombuffer(blob, dtype=_ENTRY, offset=_HEADER.size, count=count)
    vec = SparseVector(body["index"].astype(np.int64), body["value"].astype(np.float64),
                       check=False)
    return producer, clock, vec


def encode_dense(params: np.ndarray) -> bytes:
    return np.ascontiguousarray(params, dtype="<f8").tobytes()


def decode_dense(blob: bytes) -> np.ndarray:
    return np.frombuffer(blob, dtype="<f8").astype(np.float64)


# -- keys and sharding ---------------------------------------------------

@dataclass(frozen=True, order=True)
class UpdateKey:
    producer: int
    clock: int
    kind: str = "update"


@dataclass(frozen=True)
class ShardMap:
    num_shards: int = 1

    def __post_init__(self):
        if self.num_shards < 1:
            raise ValueError("need at least one shard")

    def shard_of(self, producer: int) -> int:
        return producer % self.num_shards


# -- latency model -------------------------------------------------------

@dataclass
class LatencyModel:
    """Fixed plus uniform-jitter delay per operation, in milliseconds."""

    fixed_ms: float = 0.0
    jitter_ms: float = 0.0
    per_kib_ms: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    def sample(self, nbytes: int = 0) -> float:
        delay = self.fixed_ms + self.per_kib_ms * nbytes / 1024.0
        if self.jitter_ms:
            delay += self.jitter_ms * float(self.rng.random())
        return delay

    @property
    def enabled(self) -> bool:
        return bool(self.fixed_ms or self.jitter_ms or self.per_kib_ms)


# -- intermediate-state store --------------------------------------------

class _Shard:
    def __init__(self):
        self.data: dict[UpdateKey, bytes] = {}
        self.lock = threading.Lock()
        self.ops = 0
        self.bytes_in = 0
        self.bytes_out = 0


class UpdateStore:
    """Write-once, sharded key-value store for updates and replicas.

    With a latency model each operation holds its shard for the sampled
    delay, emulating a single-threaded store server per shard.
    """

    def __init__(self, num_shards: int = 1, latency: LatencyModel | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.shard_map = ShardMap(num_shards)
        self.shards = [_Shard() for _ in range(num_shards)]
        self.latency = latency
        self._sleep = sleep
        self._stats_lock = threading.Lock()
        self.published_bytes: dict[int, int] = defaultdict(int)

    def _shard(self, key: UpdateKey) -> _Shard:
        return self.shards[self.shard_map.shard_of(key.producer)]

    def _delay(self, nbytes: int):
        if self.latency is not None and self.latency.enabled:
            self._sleep(self.latency.sample(nbytes) / 1000.0)

    def put(self, key: UpdateKey, blob: bytes) -> None:
        shard = self._shard(key)
        with shard.lock:
            if key in shard.data:
                raise ProtocolError(f"duplicate write to {key}")
            self._delay(len(blob))
            shard.data[key] = bytes(blob)
            shard.ops += 1
            shard.bytes_in += len(blob)
        if key.kind == "update":
            with self._stats_lock:
                self.published_bytes[key.producer] += len(blob)

    def get(self, key: UpdateKey) -> bytes | None:
        shard = self._shard(key)
        with shard.lock:
            blob = shard.data.get(key)
            self._delay(0 if blob is None else len(blob))
            shard.ops += 1
            if blob is not None:
                shard.bytes_out += len(blob)
            return blob

    def contains(self, key: UpdateKey) -> bool:
        shard = self._shard(key)
        with shard.lock:
            return key in shard.data

    def keys(self) -> list[UpdateKey]:
        out = []
        for shard in self.shards:
            with shard.lock:
                out.extend(shard.data)
        return sorted(out)

    def gc(self, before_clock: int) -> int:
        """Drop update entries with ``clock < before_clock``."""
        dropped = 0
        for shard in self.shards:
            with shard.lock:
                stale = [k for k in shard.data if k.kind == "update" and k.clock < before_clock]
                for k in stale:
                    del shard.data[k]
                dropped += len(stale)
        return dropped

    @property
    def total_published_bytes(self) -> int:
        with self._stats_lock:
            return sum(self.published_bytes.values())

    def shard_key_counts(self) -> list[int]:
        return [len(s.data) for s in self.shards]


def publish_update(store: UpdateStore, key: UpdateKey, blob: bytes) -> None:
    store.put(key, blob)


def pull_updates(store: UpdateStore, keys: Sequence[UpdateKey], *, retries: int = 50,
                 backoff_s: float = 0.001, max_backoff_s: float = 0.05,
                 sleep: Callable[[float], None] = time.sleep) -> list[bytes]:
    """Fetch ``keys`` in ascending producer order, retrying missing ones."""
    out = []
    for key in sorted(keys, key=lambda k: (k.producer, k.clock)):
        delay = backoff_s
        for attempt in range(retries + 1):
            blob = store.get(key)
            if blob is not None:
                break
            if attempt == retries:
                raise PullTimeout(f"{key} never appeared in the store")
            sleep(delay)
            delay = min(2 * delay, max_backoff_s)
        out.append(blob)
    return out


# -- signaling channel ---------------------------------------------------

UPDATE_AVAILABLE = "UpdateAvailable"
ADVANCE_CLOCK = "AdvanceClock"
LOSS_REPORT = "LossReport"
REMOVE_WORKER = "RemoveWorker"
TERMINATE = "Terminate"
SIGNAL_KINDS = (UPDATE_AVAILABLE, ADVANCE_CLOCK, LOSS_REPORT, REMOVE_WORKER, TERMINATE)


@dataclass
class Signal:
    kind: str
    sender: int
    clock: int = 0
    payload: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SIGNAL_KINDS:
            raise ValueError(f"unknown signal kind {self.kind!r}")
        if self.kind == LOSS_REPORT:
            loss = self.payload.get("loss")
            dur = self.payload.get("duration_ms")
            if loss is None or not np.isfinite(loss) or loss < 0:
                raise ValueError("a loss report needs a finite, non-negative loss")
            if dur is None or not dur > 0:
                raise ValueError("a loss report needs a positive duration")


class SignalBus:
    """Per-receiver FIFO queues with optional delivery latency.

    Latency delays delivery but a single sender's messages to one receiver
    are never reordered. Once a Terminate has gone out, later sends are
    dropped with a warning.
    """

    def __init__(self, latency: LatencyModel | None = None,
                 clock: Callable[[], float] = time.monotonic):
        self.latency = latency
        self._clock = clock
        self._queues: dict[int, deque] = defaultdict(deque)
        self._cond = threading.Condition()
        self._last_delivery: dict[tuple[int, int], float] = {}
        self._seq = 0
        self.terminated = False

    def _enqueue(self, receiver: int, sig: Signal) -> None:
        now = self._clock()
        due = now
        if self.latency is not None and self.latency.enabled:
            due = now + self.latency.sample() / 1000.0
        link = (sig.sender, receiver)
        due = max(due, self._last_delivery.get(link, due))
        self._last_delivery[link] = due
        self._seq += 1
        self._queues[receiver].append((due, self._seq, sig))

    def send(self, receiver: int, sig: Signal) -> None:
        self.broadcast([receiver], sig)

    def broadcast(self, receivers, sig: Signal) -> None:
        with self._cond:
            if self.terminated:
                log.warning("dropping %s from %s after Terminate", sig.kind, sig.sender)
                return
            for r in receivers:
                self._enqueue(r, sig)
            if sig.kind == TERMINATE:
                self.terminated = True
            self._cond.notify_all()

    def _ready(self, receiver: int) -> list[Signal]:
        q = self._queues[receiver]
        if not q:
            return []
        now = self._clock()
        items = sorted(q, key=lambda e: (e[0], e[1]))
        out, keep = [], deque()
        for due, seq, sig in items:
            if due <= now:
                out.append(sig)
            else:
                keep.append((due, seq, sig))
        self._queues[receiver] = keep
        return out

    def poll_signals(self, receiver: int) -> list[Signal]:
        with self._cond:
            return self._ready(receiver)

    def wait_signals(self, receiver: int, timeout: float | None = None) -> list[Signal]:
        """Block until at least one signal is deliverable or ``timeout`` passes."""
        deadline = None if timeout is None else time.monotonic() + timeout
        with self._cond:
            while True:
                out = self._ready(receiver)
                if out:
                    return out
                wait = None if deadline is None else deadline - time.monotonic()
                if wait is not None and wait <= 0:
                    return []
                q = self._queues[receiver]
                if q:
                    nxt = min(e[0] for e in q) - self._clock()
                    wait = nxt if wait is None else min(wait, nxt)
                    wait = max(wait, 0.0005)
                self._cond.wait(wait)


def send_signal(bus: SignalBus, receiver: int, sig: Signal) -> None:
    bus.send(receiver, sig)


def poll_signals(bus: SignalBus, receiver: int) -> list[Signal]:
    return bus.poll_signals(receiver)


# -- object store --------------------------------------------------------

class MemoryObjectStore:
    def __init__(self, batches: Sequence[Sequence]):
        self._batches = [tuple(b) for b in batches]

    def __len__(self) -> int:
        return len(self._batches)

    def fetch(self, batch_id: int) -> list:
        if not 0 <= batch_id < len(self._batches):
            raise DataError(f"unknown batch {batch_id}")
        return list(self._batches[batch_id])


class DirectoryObjectStore:
    """One ``part-<id>.txt`` file per mini-batch, read on every fetch."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.manifest = read_manifest(self.directory)
        self._count = int(self.manifest["batch_count"])

    def __len__(self) -> int:
        return self._count

    def fetch(self, batch_id: int) -> list:
        path = batch_path(self.directory, batch_id)
        if not 0 <= batch_id < self._count or not os.path.exists(path):
            raise DataError(f"unknown batch {batch_id}")
        return read_batch(path)


def fetch_minibatch(object_store, batch_id: int) -> list:
    return object_store.fetch(batch_id)
