"""
Scale-in auto-tuning and what it saves
======================================

The same job runs with a fixed pool of eight workers and with the
scale-in scheduler. Step time grows with the pool because every worker
pulls every other worker's update, so shrinking the pool after the knee
trades a little statistical progress for cheaper, faster steps.
"""
from isptrain.config import JobConfig, StopConfig, TimingModel
from isptrain.cost import PricingTable, budget_cutoff, perf_per_dollar
from isptrain.data import DatasetSpec, generate_lr
from isptrain.runtime import run_job

corpus, _ = generate_lr(DatasetSpec(kind="lr", n=20_000, dim=500, sparsity=0.05, seed=9))
timing = TimingModel(fetch_ms=50, compute_base_ms=100, compute_per_sample_ms=0.25,
                     op_latency_ms=60)


def job(scheduler):
    cfg = JobConfig(model="lr", workers=8, batch_size=250, seed=9, timing=timing,
                    stop=StopConfig(loss_threshold=0.40, max_steps=1500))
    cfg.optimizer.eta = 20.0
    cfg.optimizer.decay = "inverse_sqrt"
    cfg.scheduler.enabled = scheduler
    cfg.scheduler.alpha = 0.1
    # knee slope picked from a pilot run of the fixed pool
    cfg.scheduler.knee_eps = 2e-3
    return run_job(cfg, corpus)


fixed, tuned = job(False), job(True)
for name, r in (("fixed", fixed), ("scale-in", tuned)):
    print(f"{name:<9s} steps {r.steps:4d}  time {r.wall_time_s:7.1f} s  cost ${r.total_cost:.4f}  "
          f"Perf/$ {perf_per_dollar(r.wall_time_s, r.total_cost):.3f}  stop={r.stop_reason}")
print("scheduler events:", tuned.events)

# how far does each run get on a fixed budget?
table = PricingTable(extra_lanes=1)
for budget in (0.01, 0.02, 0.04):
    cells = [budget_cutoff(r.metric_log, table, budget) for r in (fixed, tuned)]
    print(f"${budget:.2f}: fixed reaches loss {cells[0][1]:.4f} at {cells[0][0]:.0f} s, "
          f"scale-in {cells[1][1]:.4f} at {cells[1][0]:.0f} s")
