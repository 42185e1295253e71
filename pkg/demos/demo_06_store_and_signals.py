"""
Indirect communication: sharded store and signal bus
====================================================

Workers never talk to each other. Updates go through a write-once store
sharded by producer id, control messages through per-receiver queues.
With injected store latency, a second shard halves the time spent
waiting on the store.
"""
from isptrain.comms import (ADVANCE_CLOCK, SUPERVISOR, Signal, SignalBus, UpdateKey, UpdateStore,
                            decode_update, encode_update, pull_updates)
from isptrain.config import JobConfig, StopConfig
from isptrain.data import DatasetSpec, generate_lr
from isptrain.runtime import run_job
from isptrain.sparse import SparseVector

store = UpdateStore(num_shards=2)
for p in range(4):
    store.put(UpdateKey(p, 0), encode_update(p, 0, SparseVector([p], [0.5 * p])))
print("keys per shard:", store.shard_key_counts())
for blob in pull_updates(store, [UpdateKey(p, 0) for p in (3, 1, 0, 2)]):
    producer, clock, vec = decode_update(blob)
    print(f"  producer {producer} clock {clock}: {vec.to_dict()} ({len(blob)} bytes)")

bus = SignalBus()
for c in range(3):
    bus.send(0, Signal(ADVANCE_CLOCK, SUPERVISOR, c))
print("worker 0 sees clocks", [s.clock for s in bus.poll_signals(0)])

# real threads, 1 ms per store operation held on the shard
corpus, _ = generate_lr(DatasetSpec(kind="lr", n=8000, dim=1000, sparsity=0.01, seed=4))
for shards in (1, 2, 4):
    cfg = JobConfig(model="lr", workers=16, batch_size=50, shards=shards, mode="threaded",
                    stop=StopConfig(max_steps=8))
    cfg.store.latency_ms = 1.0
    r = run_job(cfg, corpus)
    print(f"{shards} shard(s): {r.wall_time_s:.2f} s for 8 steps, checksum {r.checksum[:12]}")
