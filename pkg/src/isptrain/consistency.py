"""BSP, SSP and ISP synchronization rules.

ISP keeps synchronous barriers like BSP but only broadcasts the
per-parameter accumulated update ``delta_i`` once it is large relative to
the parameter it modifies: ``|delta_i / x_i| > v / sqrt(t)``. Anything
below the threshold keeps accumulating locally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .learning import GradientUpdate, ModelState
from .sparse import SparseVector

BSP = "BSP"
SSP = "SSP"
ISP = "ISP"


@dataclass(frozen=True)
class SyncPolicy:
    kind: str = BSP
    slack: int = 0
    v: float = 0.0

    def __post_init__(self):
        kind = self.kind.upper()
        object.__setattr__(self, "kind", kind)
        if kind not in (BSP, SSP, ISP):
            raise ConfigurationError(f"unknown sync policy {self.kind!r}")
        if self.slack < 0:
            raise ConfigurationError("slack must be non-negative")
        if self.v < 0:
            raise ConfigurationError("significance threshold must be non-negative")
        if kind != SSP and self.slack:
            raise ConfigurationError("slack only applies to SSP")
        if kind != ISP and self.v:
            raise ConfigurationError("v only applies to ISP")

    @property
    def synchronous(self) -> bool:
        return self.kind in (BSP, ISP)

    @property
    def effective_slack(self) -> int:
        return self.slack if self.kind == SSP else 0


@dataclass
class WorkerClock:
    worker: int
    clock: int = 0

    def tick(self) -> None:
        self.clock += 1


def threshold_at(v: float, t: int) -> float:
    """Significance threshold ``v / sqrt(t)`` for 1-based step ``t``."""
    if t < 1:
        raise ValueError("threshold steps are 1-based")
    if v < 0:
        raise ValueError("v must be non-negative")
    return v / math.sqrt(t)


def is_significant(delta: float, x: float, v_t: float) -> bool:
    if delta == 0.0:
        return False
    if x == 0.0:
        # relative change is unbounded
        return True
    return abs(delta / x) > v_t


def significant_mask(delta: np.ndarray, x: np.ndarray, v_t: float) -> np.ndarray:
    """Vectorized :func:`is_significant`."""
    delta = np.asarray(delta, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    nonzero = delta != 0.0
    zero_x = x == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.abs(np.where(zero_x, 0.0, delta) / np.where(zero_x, 1.0, x))
    return nonzero & (zero_x | (rel > v_t))


class IspAccumulator:
    """Per-parameter accumulated updates owned by a single worker."""

    def __init__(self, dim: int):
        self.dim = dim
        self.delta = np.zeros(dim)
        self.last_prop = np.zeros(dim, dtype=np.int64)
        self.accum_count = np.zeros(dim, dtype=np.int64)
        self.touched = np.zeros(dim, dtype=bool)

    def copy(self) -> "IspAccumulator":
        out = IspAccumulator(self.dim)
        out.delta[:] = self.delta
        out.last_prop[:] = self.last_prop
        out.accum_count[:] = self.accum_count
        out.touched[:] = self.touched
        return out

    def pending(self) -> SparseVector:
        idx = np.flatnonzero(self.touched & (self.delta != 0.0))
        return SparseVector(idx, self.delta[idx], check=False)


def accumulate(acc: IspAccumulator, u: GradientUpdate | SparseVector) -> IspAccumulator:
    """Add ``u`` into ``acc`` in place and return it."""
    deltas = u.deltas if isinstance(u, GradientUpdate) else u
    idx = deltas.indices
    if idx.size == 0:
        return acc
    acc.delta[idx] += deltas.values
    acc.accum_count[idx] += 1
    acc.touched[idx] = True
    return acc


def extract_significant(acc: IspAccumulator, model: ModelState | np.ndarray, t: int,
                        v: float):
    """Split off the significant part of ``acc`` at step ``t``.

    Returns ``(publish, acc)``. Published indices are reset in place, so
    the returned accumulator is the same object.
    """
    x = model.params if isinstance(model, ModelState) else np.asarray(model)
    v_t = threshold_at(v, t)
    cand = np.flatnonzero(acc.touched)
    mask = significant_mask(acc.delta[cand], x[cand], v_t)
    idx = cand[mask]
    publish = SparseVector(idx, acc.delta[idx].copy(), check=False)
    acc.delta[idx] = 0.0
    acc.last_prop[idx] = t
    acc.accum_count[idx] = 0
    return publish, acc


def unpublished_residual_ok(acc: IspAccumulator, x: np.ndarray, v_t: float) -> bool:
    """Check ``|delta_i / x_i| <= v_t`` for every unpublished index with ``x_i != 0``."""
    cand = np.flatnonzero(acc.touched & (acc.delta != 0.0))
    xs = x[cand]
    if np.any(xs == 0.0):
        return False
    return bool(np.all(np.abs(acc.delta[cand] / xs) <= v_t))


def ssp_may_advance(me: WorkerClock | int, slowest_clock: int, slack: int) -> bool:
    """Whether a worker that completed ``me.clock`` steps may start the next one."""
    clock = me.clock if isinstance(me, WorkerClock) else int(me)
    if slowest_clock > clock:
        raise ValueError("slowest clock is ahead of this worker")
    return clock - slowest_clock <= slack


def bsp_barrier(clocks) -> bool:
    values = {c.clock if isinstance(c, WorkerClock) else int(c) for c in clocks}
    return len(values) <= 1
