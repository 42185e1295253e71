"""Pricing, cost accounting and post-hoc efficiency analysis.

Default rates: a 2 GB function at 3.4e-5 $/s, the messaging VM at
0.15 $/h and the store VM at 0.17 $/h. VMs are billed per second for the whole job.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import NotReached

FN_RATE_USD_S = 3.4e-5
MESSAGING_VM_USD_H = 0.15
STORE_VM_USD_H = 0.17


@dataclass
class PricingTable:
    fn_rate: float = FN_RATE_USD_S
    vm_rates: list[tuple[str, float]] = field(
        default_factory=lambda: [("messaging", MESSAGING_VM_USD_H), ("store", STORE_VM_USD_H)])
    # extra function lanes billed alongside the workers (the supervisor)
    extra_lanes: int = 0

    def __post_init__(self):
        if self.fn_rate < 0 or any(rate < 0 for _, rate in self.vm_rates):
            raise ValueError("rates must be non-negative")
        if self.extra_lanes < 0:
            raise ValueError("extra_lanes must be non-negative")

    @property
    def vm_rate_per_s(self) -> float:
        return sum(rate for _, rate in self.vm_rates) / 3600.0

    def rate_per_s(self, workers: int) -> float:
        """Instantaneous spend in $/s with ``workers`` active."""
        return (workers + self.extra_lanes) * self.fn_rate + self.vm_rate_per_s


@dataclass
class CostInterval:
    start_s: float
    end_s: float
    workers: int
    usd: float


@dataclass
class CostReport:
    intervals: list[CostInterval]
    components: dict[str, float]
    total: float

    @property
    def duration_s(self) -> float:
        return self.intervals[-1].end_s if self.intervals else 0.0

    def cumulative(self) -> list[float]:
        """Cumulative spend at the end of each interval, VMs included."""
        vm = sum(v for k, v in self.components.items() if k != "workers")
        dur = self.duration_s
        out, acc = [], 0.0
        for iv in self.intervals:
            acc += iv.usd
            out.append(acc + (vm * iv.end_s / dur if dur else 0.0))
        return out

    def to_csv(self) -> str:
        lines = ["start_s,end_s,workers,usd"]
        lines += [f"{iv.start_s:.6f},{iv.end_s:.6f},{iv.workers},{round(iv.usd, 9):.9f}"
                  for iv in self.intervals]
        lines.append("")
        lines.append("component,usd")
        lines += [f"{k},{round(v, 9):.9f}" for k, v in self.components.items()]
        lines.append(f"total,{round(self.total, 9):.9f}")
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        rows = [f"  {k:<12s} {round(v, 9):>14.9f} $" for k, v in self.components.items()]
        return "\n".join([
            "cost report",
            f"  duration     {self.duration_s:>14.3f} s",
            *rows,
            f"  {'total':<12s} {round(self.total, 9):>14.9f} $",
        ])


def compute_cost(timeline: Iterable[tuple[float, int]], pricing: PricingTable) -> CostReport:
    """Bill ``(duration_s, active_workers)`` intervals under ``pricing``."""
    intervals = []
    start = 0.0
    worker_usd = 0.0
    for duration, workers in timeline:
        if duration < 0:
            raise ValueError("interval durations must be non-negative")
        usd = duration * (workers + pricing.extra_lanes) * pricing.fn_rate
        intervals.append(CostInterval(start, start + duration, int(workers), usd))
        worker_usd += usd
        start += duration
    components = {"workers": worker_usd}
    for name, rate in pricing.vm_rates:
        components[name] = start * rate / 3600.0
    total = sum(components.values())
    return CostReport(intervals, components, total)


def perf_per_dollar(exec_time_s: float, cost_usd: float) -> float:
    if not exec_time_s > 0 or not cost_usd > 0:
        raise ValueError("Perf/$ needs positive time and cost")
    return 1.0 / (exec_time_s * cost_usd)


# -- metric logs ---------------------------------------------------------

METRIC_COLUMNS = ("step", "wall_ms", "workers", "loss_raw", "loss_ewma",
                  "bytes_published", "cumulative_cost_usd", "event")


class SchemaError(ValueError):
    pass


@dataclass
class MetricRow:
    step: int
    wall_ms: float
    workers: int
    loss_raw: float
    loss_ewma: float
    bytes_published: int
    cumulative_cost_usd: float
    event: str = ""

    def format(self) -> str:
        return (f"{self.step},{self.wall_ms:.3f},{self.workers},{self.loss_raw!r},"
                f"{self.loss_ewma!r},{self.bytes_published},"
                f"{self.cumulative_cost_usd:.12f},{self.event}")


@dataclass
class MetricLog:
    rows: list[MetricRow] = field(default_factory=list)
    header: dict[str, str] = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"# {k} = {v}" for k, v in self.header.items()]
        lines.append(",".join(METRIC_COLUMNS))
        lines += [r.format() for r in self.rows]
        return "\n".join(lines) + "\n"

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_text())

    @classmethod
    def parse(cls, text: str) -> "MetricLog":
        header, rows = {}, []
        columns = None
        for line in text.splitlines():
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, value = line[1:].partition("=")
                header[key.strip()] = value.strip()
                continue
            if columns is None:
                columns = tuple(line.strip().split(","))
                if columns != METRIC_COLUMNS:
                    raise SchemaError(f"unexpected metric columns {columns}")
                continue
            parts = line.split(",", len(METRIC_COLUMNS) - 1)
            if len(parts) != len(METRIC_COLUMNS):
                raise SchemaError(f"malformed metric row {line!r}")
            rows.append(MetricRow(int(parts[0]), float(parts[1]), int(parts[2]),
                                  float(parts[3]), float(parts[4]), int(parts[5]),
                                  float(parts[6]), parts[7]))
        if columns is None:
            raise SchemaError("metric log has no header row")
        return cls(rows, header)

    @classmethod
    def read(cls, path) -> "MetricLog":
        with open(path, encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def timeline(self) -> list[tuple[float, int]]:
        """Per-row ``(duration_s, workers)`` intervals."""
        out, prev = [], 0.0
        for r in self.rows:
            out.append(((r.wall_ms - prev) / 1000.0, r.workers))
            prev = r.wall_ms
        return out


def _rows(log) -> Sequence[MetricRow]:
    return log.rows if isinstance(log, MetricLog) else log


def budget_cutoff(metric_log, pricing: PricingTable, budget_usd: float):
    """Longest prefix of the log affordable with ``budget_usd``.

    Returns ``(end_time_s, smoothed_loss)``; the loss is NaN when not even
    the first interval fits.
    """
    if not budget_usd > 0:
        raise ValueError("budget must be positive")
    rows = _rows(metric_log)
    end_s, loss = 0.0, math.nan
    spent, prev_s = 0.0, 0.0
    vm = pricing.vm_rate_per_s
    for r in rows:
        t = r.wall_ms / 1000.0
        spent += (t - prev_s) * ((r.workers + pricing.extra_lanes) * pricing.fn_rate + vm)
        prev_s = t
        if spent > budget_usd:
            break
        end_s, loss = t, r.loss_ewma
    return end_s, loss


def steps_to_threshold(metric_log, threshold: float) -> int:
    for r in _rows(metric_log):
        if r.loss_ewma <= threshold:
            return r.step
    raise NotReached(f"loss never reached {threshold}")
