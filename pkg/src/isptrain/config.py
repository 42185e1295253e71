"""Job configuration and the flat ``key = value`` config file format.

Nested settings use dotted keys, e.g. ``scheduler.epoch_s = 20``. Every
key can also be given on the command line; later sources override earlier
ones.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

from .consistency import BSP, SSP, SyncPolicy
from .cost import MESSAGING_VM_USD_H, STORE_VM_USD_H, FN_RATE_USD_S, PricingTable
from .errors import ConfigurationError
from .optim import OptimizerState, canonical_algo
from .scheduler import SchedulerConfig

SIMULATED = "simulated"
THREADED = "threaded"


@dataclass
class OptimizerConfig:
    algo: str = "sgd"
    eta: float = 0.1
    decay: str = "none"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def make(self, dim: int) -> OptimizerState:
        return OptimizerState(algo=self.algo, eta=self.eta, decay=self.decay,
                              momentum=self.momentum, beta1=self.beta1, beta2=self.beta2,
                              epsilon=self.epsilon, dim=dim)


@dataclass
class StopConfig:
    loss_threshold: Optional[float] = None
    max_steps: Optional[int] = None
    max_wall_s: Optional[float] = None


@dataclass
class TimingModel:
    """Simulated durations, in milliseconds, for one training step.

    A synchronous step costs the slowest worker's fetch plus compute, then
    the slower of the busiest worker's sequential store traffic and the
    busiest shard's service time, then one signal hop. Each worker issues
    one put and one get per foreign producer, so the step time grows
    linearly with the pool size.
    """

    fetch_ms: float = 5.0
    compute_base_ms: float = 10.0
    compute_per_sample_ms: float = 0.02
    compute_jitter: float = 0.05
    op_latency_ms: float = 2.0
    bandwidth_mb_s: float = 200.0
    shard_op_ms: float = 0.2
    shard_mb_s: float = 1000.0
    signal_ms: float = 1.0
    straggler_ms: float = 0.0

    def op_ms(self, nbytes: int) -> float:
        return self.op_latency_ms + nbytes / (self.bandwidth_mb_s * 1e3)

    def shard_ms(self, nbytes: int) -> float:
        return self.shard_op_ms + nbytes / (self.shard_mb_s * 1e3)


@dataclass
class PricingConfig:
    fn_rate: float = FN_RATE_USD_S
    messaging_usd_h: float = MESSAGING_VM_USD_H
    store_usd_h: float = STORE_VM_USD_H
    bill_supervisor: bool = True

    def table(self) -> PricingTable:
        return PricingTable(self.fn_rate, [("messaging", self.messaging_usd_h),
                                           ("store", self.store_usd_h)],
                            extra_lanes=1 if self.bill_supervisor else 0)


@dataclass
class StoreConfig:
    """Injected per-operation store latency for the threaded mode."""

    latency_ms: float = 0.0
    jitter_ms: float = 0.0
    signal_ms: float = 0.0
    report_timeout_s: float = 60.0


@dataclass
class JobConfig:
    model: str = "lr"
    data: Optional[str] = None
    workers: int = 4
    batch_size: int = 250
    sync: str = BSP
    slack: int = 0
    v: float = 0.0
    reg: float = 0.0
    rank: int = 20
    init_scale: float = 0.1
    shards: int = 1
    seed: int = 0
    mode: str = SIMULATED
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    stop: StopConfig = field(default_factory=StopConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    timing: TimingModel = field(default_factory=TimingModel)
    pricing: PricingConfig = field(default_factory=PricingConfig)
    store: StoreConfig = field(default_factory=StoreConfig)
    output: Optional[str] = None
    record_trajectory: bool = False

    @property
    def policy(self) -> SyncPolicy:
        return SyncPolicy(self.sync, self.slack, self.v)

    def validate(self) -> "JobConfig":
        self.model = self.model.lower()
        if self.model not in ("lr", "pmf"):
            raise ConfigurationError(f"unknown model {self.model!r}")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.shards < 1:
            raise ConfigurationError("shards must be >= 1")
        if self.mode not in (SIMULATED, THREADED):
            raise ConfigurationError(f"unknown mode {self.mode!r}")
        if self.rank < 1:
            raise ConfigurationError("rank must be >= 1")
        if self.reg < 0:
            raise ConfigurationError("reg must be non-negative")
        policy = self.policy
        canonical_algo(self.optimizer.algo)
        self.optimizer.make(0)
        self.scheduler.validate()
        if self.scheduler.enabled and policy.kind == SSP:
            raise ConfigurationError("the scale-in scheduler needs a synchronous policy (BSP or ISP)")
        if self.mode == THREADED and policy.kind == SSP:
            raise ConfigurationError("threaded mode supports BSP and ISP only")
        st = self.stop
        if st.loss_threshold is None and st.max_steps is None and st.max_wall_s is None:
            raise ConfigurationError("no stop criterion configured")
        if st.max_steps is not None and st.max_steps < 1:
            raise ConfigurationError("stop.max_steps must be >= 1")
        self.pricing.table()
        return self


# -- flat key = value format -------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _to_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _TRUE:
        return True
    if low in _FALSE:
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _optional(conv: Callable) -> Callable:
    def inner(text: str):
        return None if text.strip().lower() in ("", "none", "null") else conv(text)
    return inner


def _coercer(owner, name: str) -> Callable:
    ftype = {f.name: f.type for f in dataclasses.fields(owner)}[name]
    ftype = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", str(ftype))
    base = ftype.replace("Optional[", "").rstrip("]")
    conv = {"bool": _to_bool, "int": int, "float": float, "str": str}.get(base)
    if conv is None:
        raise ConfigurationError(f"{name} is a section, not a value")
    return _optional(conv) if ftype.startswith("Optional") else conv


def set_key(cfg: JobConfig, key: str, text: str) -> None:
    """Assign ``text`` to the dotted ``key`` of ``cfg``, coercing its type."""
    target = cfg
    parts = key.strip().split(".")
    for part in parts[:-1]:
        if not dataclasses.is_dataclass(getattr(target, part, None)):
            raise ConfigurationError(f"unknown config section {part!r} in {key!r}")
        target = getattr(target, part)
    name = parts[-1]
    if name not in {f.name for f in dataclasses.fields(target)}:
        raise ConfigurationError(f"unknown config key {key!r}")
    try:
        setattr(target, name, _coercer(type(target), name)(text.strip()))
    except ValueError as exc:
        raise ConfigurationError(f"bad value for {key}: {exc}") from None


def parse_config_text(text: str, cfg: JobConfig | None = None) -> JobConfig:
    cfg = JobConfig() if cfg is None else cfg
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigurationError(f"line {n}: expected key = value")
        set_key(cfg, key, value)
    return cfg


def load_config(path, overrides: dict[str, str] | None = None) -> JobConfig:
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config_text(fh.read())
    for key, value in (overrides or {}).items():
        set_key(cfg, key, value)
    return cfg


def flatten(cfg) -> dict[str, str]:
    """Dotted ``key -> value`` view of a config, for echoing into logs."""
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out.update({f"{f.name}.{k}": v for k, v in flatten(value).items()})
        elif value is None:
            out[f.name] = "none"
        elif isinstance(value, bool):
            out[f.name] = str(value).lower()
        else:
            out[f.name] = str(value)
    return out
