"""Serverless-style data-parallel training with BSP, SSP and ISP consistency,
a scale-in auto-tuner and a per-second cost model."""

from .config import JobConfig, StopConfig, TimingModel, load_config
from .consistency import BSP, ISP, SSP, SyncPolicy
from .cost import PricingTable, compute_cost, perf_per_dollar
from .data import DatasetSpec, generate, generate_lr, generate_pmf
from .learning import ModelState, Sample
from .runtime import JobResult, run_job
from .scheduler import SchedulerConfig
from .sparse import SparseVector

__version__ = "0.1.0"

__all__ = [
    "BSP", "ISP", "SSP", "DatasetSpec", "JobConfig", "JobResult", "ModelState", "PricingTable",
    "Sample", "SchedulerConfig", "SparseVector", "StopConfig", "SyncPolicy", "TimingModel",
    "compute_cost", "generate", "generate_lr", "generate_pmf", "load_config", "perf_per_dollar",
    "run_job",
]
