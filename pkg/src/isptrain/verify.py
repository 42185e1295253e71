"""Self-contained consistency checks behind ``isptrain verify``."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import JobConfig, StopConfig
from .consistency import (IspAccumulator, accumulate, extract_significant, threshold_at,
                          unpublished_residual_ok)
from .data import DatasetSpec, generate_lr, partition
from .learning import ModelState, batch_loss
from .replay import (ReplayTrace, deviation_identity_holds, dump_trace, full_gradient_optimum,
                     random_trace, regret_report)
from .rng import substream
from .runtime import run_job
from .sparse import SparseVector


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str = ""

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail}"


def fuzz_traces(seed: int, count: int):
    rng = substream(seed, "fuzz")
    for _ in range(count):
        yield random_trace(rng, num_workers=int(rng.integers(2, 5)), clocks=int(rng.integers(1, 5)),
                           dim=int(rng.integers(2, 9)), density=0.6,
                           p_significant=float(rng.uniform(0.2, 0.8)))


def first_flippable(trace: ReplayTrace) -> Optional[int]:
    """A record whose flip is visible to some later foreign view."""
    for t, rec in enumerate(trace.records[:-1]):
        if len(rec.update) and any(r.worker != rec.worker for r in trace.records[t + 1:]):
            return t
    return None


def check_replay_identity(seed: int = 0, count: int = 200, inject_fault: bool = False,
                          trace_path: str | None = None) -> CheckResult:
    failures = 0
    dumped = False
    for trace in fuzz_traces(seed, count):
        oracle = trace
        if inject_fault:
            t = first_flippable(trace)
            if t is not None:
                trace = trace.flip(t)
        if trace_path and not dumped:
            with open(trace_path, "w", encoding="utf-8") as fh:
                dump_trace(trace, fh)
            dumped = True
        if not deviation_identity_holds(trace, oracle):
            failures += 1
    return CheckResult("replay identity", failures == 0,
                       f"{count - failures}/{count} traces exact")


def check_isp_reduces_to_bsp(seed: int = 0, steps: int = 60) -> CheckResult:
    corpus, _ = generate_lr(DatasetSpec(kind="lr", n=4000, dim=200, sparsity=0.05, seed=seed))
    sums = {}
    for sync in ("bsp", "isp"):
        cfg = JobConfig(model="lr", workers=4, batch_size=100, sync=sync, v=0.0, seed=seed,
                        stop=StopConfig(max_steps=steps))
        sums[sync] = run_job(cfg, corpus).checksum
    ok = sums["bsp"] == sums["isp"]
    return CheckResult("ISP(v=0) == BSP", ok, f"checksums {sums['bsp'][:16]} / {sums['isp'][:16]}")


def check_regret_trend(seed: int = 0, prefixes=(250, 500, 1000)) -> CheckResult:
    corpus, _ = generate_lr(DatasetSpec(kind="lr", n=2000, dim=50, sparsity=0.2, seed=seed))
    cfg = JobConfig(model="lr", workers=1, batch_size=50, seed=seed, record_trajectory=True,
                    stop=StopConfig(max_steps=max(prefixes)))
    cfg.optimizer.eta = 0.5
    cfg.optimizer.decay = "inverse_sqrt"
    res = run_job(cfg, corpus)
    batches = partition(corpus.samples, cfg.batch_size, seed=seed)
    x_star = full_gradient_optimum(batches, ModelState.lr(corpus.dim), 50 * max(prefixes) // 10)
    traj = [(view, batch) for _, _, view, batch in res.trajectory]
    report = regret_report(traj, x_star, batch_loss, prefixes)
    vals = [r for _, r in report]
    ok = all(a > b for a, b in zip(vals, vals[1:]))
    return CheckResult("regret trend", ok, ", ".join(f"R[{T}]/T={r:.5f}" for T, r in report))


def check_filter_soundness(seed: int = 0, rounds: int = 200, dim: int = 16,
                           v: float = 0.7) -> CheckResult:
    """Publish + pending must equal everything accumulated; leftovers stay below threshold."""
    rng = substream(seed, "fuzz", 1)
    scale = 2.0 ** -10
    acc = IspAccumulator(dim)
    x = rng.integers(-64, 65, size=dim) * scale
    total = np.zeros(dim)
    published = np.zeros(dim)
    bad = 0
    for t in range(1, rounds + 1):
        idx = np.flatnonzero(rng.random(dim) < 0.5)
        u = SparseVector(idx, rng.integers(1, 17, size=idx.size) * scale * rng.choice([-1.0, 1.0], idx.size))
        accumulate(acc, u)
        total[u.indices] += u.values
        pub, _ = extract_significant(acc, x, t, v)
        published[pub.indices] += pub.values
        if not np.array_equal(published + acc.delta, total):
            bad += 1
        if not unpublished_residual_ok(acc, x, threshold_at(v, t)):
            bad += 1
        x[pub.indices] += pub.values
    return CheckResult("filter soundness", bad == 0, f"{rounds} rounds, {bad} violations")


def run_all(seed: int = 0, traces: int = 200, inject_fault: bool = False,
            trace_path: str | None = None) -> list[CheckResult]:
    return [
        check_replay_identity(seed, traces, inject_fault, trace_path),
        check_isp_reduces_to_bsp(seed),
        check_regret_trend(seed),
        check_filter_soundness(seed),
    ]
