"""Replay of update traces, noisy views and regret measurement.

Updates are serialized as ``u_t = u_{t mod P, t // P}``: clocks in the
outer loop, workers in the inner loop. The serialized state is
``x_t = x_0 + sum_{t' <= t} u_{t'}``. The noisy view of worker ``p`` at
clock ``c`` (serial position ``t = c*P + p``) holds every one of its own
updates through clock ``c`` but only the *significant* foreign updates
that precede it in the serialization, so

    view(p, c) - x_t = -(sum of insignificant foreign updates up to t).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ProtocolError
from .learning import ModelState
from .sparse import SparseVector, concat_rows


@dataclass
class TraceRecord:
    worker: int
    clock: int
    update: SparseVector
    significant: bool


@dataclass
class ReplayTrace:
    x0: ModelState
    num_workers: int
    records: list[TraceRecord] = field(default_factory=list)

    def serial_index(self, worker: int, clock: int) -> int:
        return clock * self.num_workers + worker

    def validate(self) -> None:
        P = self.num_workers
        if P < 1:
            raise ProtocolError("trace needs at least one worker")
        for t, rec in enumerate(self.records):
            if rec.worker != t % P or rec.clock != t // P:
                raise ProtocolError(
                    f"record {t} is (worker {rec.worker}, clock {rec.clock}), "
                    f"expected ({t % P}, {t // P})")
            if len(rec.update) and rec.update.max_index() >= self.x0.dim:
                raise ProtocolError(f"record {t} indexes outside the model")

    def flip(self, t: int) -> "ReplayTrace":
        """Copy with the significance decision of record ``t`` inverted."""
        recs = list(self.records)
        r = recs[t]
        recs[t] = TraceRecord(r.worker, r.clock, r.update, not r.significant)
        return ReplayTrace(self.x0, self.num_workers, recs)


def _state(trace: ReplayTrace, params: np.ndarray, step: int) -> ModelState:
    out = trace.x0.copy()
    out.params = params
    out.step = step
    return out


def serialized_state(trace: ReplayTrace, t: int) -> ModelState:
    """True state ``x_t`` after applying updates ``0..t`` in serial order."""
    trace.validate()
    x = trace.x0.params.copy()
    for rec in trace.records[: t + 1]:
        x[rec.update.indices] += rec.update.values
    return _state(trace, x, t + 1)


def replay_noisy_view(trace: ReplayTrace, p: int, c: int) -> ModelState:
    trace.validate()
    P = trace.num_workers
    if not 0 <= p < P:
        raise ProtocolError(f"worker {p} not in trace")
    t = trace.serial_index(p, c)
    if t >= len(trace.records):
        raise ProtocolError(f"trace has no record for worker {p} at clock {c}")
    x = trace.x0.params.copy()
    for rec in trace.records[: t + 1]:
        if rec.worker == p or rec.significant:
            x[rec.update.indices] += rec.update.values
    return _state(trace, x, t + 1)


def insignificant_foreign_sum(trace: ReplayTrace, p: int, c: int) -> np.ndarray:
    """Independent summation of insignificant foreign updates up to ``(p, c)``."""
    t = c * trace.num_workers + p
    acc = np.zeros(trace.x0.dim)
    for rec in trace.records[: t + 1]:
        if rec.worker != p and not rec.significant:
            np.add.at(acc, rec.update.indices, rec.update.values)
    return acc


def deviation_identity_holds(trace: ReplayTrace, oracle_trace: ReplayTrace | None = None) -> bool:
    """Check ``view - x_t == -sum(insignificant foreign)`` exactly at every (p, c).

    ``oracle_trace`` lets a test feed the oracle side a different trace
    (used to confirm that a flipped decision is caught).
    """
    oracle_trace = trace if oracle_trace is None else oracle_trace
    P = trace.num_workers
    for t in range(len(trace.records)):
        p, c = t % P, t // P
        lhs = replay_noisy_view(trace, p, c).params - serialized_state(trace, t).params
        rhs = -insignificant_foreign_sum(oracle_trace, p, c)
        if not np.array_equal(lhs, rhs):
            return False
    return True


def random_trace(rng: np.random.Generator, *, num_workers: int, clocks: int, dim: int,
                 density: float = 0.5, p_significant: float = 0.5,
                 grid: int = 10) -> ReplayTrace:
    """Random trace whose values are small multiples of ``2**-grid``.

    Such dyadic values make every partial sum exact in float64, so the
    deviation identity can be compared bit for bit.
    """
    scale = 2.0 ** -grid
    x0 = ModelState.lr(dim, rng.integers(-512, 513, size=dim) * scale)
    records = []
    for t in range(num_workers * clocks):
        mask = rng.random(dim) < density
        idx = np.flatnonzero(mask)
        vals = rng.integers(1, 257, size=idx.size) * scale * rng.choice([-1.0, 1.0], idx.size)
        records.append(TraceRecord(t % num_workers, t // num_workers,
                                   SparseVector(idx, vals), bool(rng.random() < p_significant)))
    return ReplayTrace(x0, num_workers, records)


# -- text format ---------------------------------------------------------

def _fmt_entries(vec: SparseVector) -> str:
    return " ".join(f"{i}:{v!r}" for i, v in vec)


def _parse_entries(tokens: Iterable[str]) -> SparseVector:
    pairs = [tok.split(":") for tok in tokens]
    return SparseVector([int(i) for i, _ in pairs], [float(v) for _, v in pairs])


def dump_trace(trace: ReplayTrace, fh) -> None:
    """Write ``step worker clock significant idx:val ...`` records."""
    fh.write(f"# workers {trace.num_workers}\n")
    fh.write(f"# dim {trace.x0.dim}\n")
    fh.write(f"# x0 {_fmt_entries(SparseVector.from_dense(trace.x0.params))}\n")
    for t, rec in enumerate(trace.records):
        body = _fmt_entries(rec.update)
        fh.write(f"{t} {rec.worker} {rec.clock} {int(rec.significant)}"
                 f"{' ' + body if body else ''}\n")


def load_trace(fh) -> ReplayTrace:
    num_workers = dim = None
    x0_vec = SparseVector()
    records = []
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if parts[0] == "workers":
                num_workers = int(parts[1])
            elif parts[0] == "dim":
                dim = int(parts[1])
            elif parts[0] == "x0":
                x0_vec = _parse_entries(parts[1:])
            continue
        parts = line.split()
        step, worker, clock, sig = (int(x) for x in parts[:4])
        if step != len(records):
            raise ProtocolError(f"trace step {step} out of order")
        records.append(TraceRecord(worker, clock, _parse_entries(parts[4:]), bool(sig)))
    if num_workers is None or dim is None:
        raise ProtocolError("trace header missing workers/dim")
    trace = ReplayTrace(ModelState.lr(dim, x0_vec.to_dense(dim)), num_workers, records)
    trace.validate()
    return trace


# -- regret ----------------------------------------------------------------

def regret_report(trajectory: Sequence, reference_opt: ModelState,
                  loss_fn: Callable, prefixes: Sequence[int] | None = None):
    """Average regret ``R[T]/T`` for each prefix length ``T``.

    ``trajectory`` holds ``(model_view, batch)`` pairs; ``loss_fn(batch,
    model)`` evaluates the per-step loss ``f_t``.
    """
    excess = np.array([loss_fn(batch, view) - loss_fn(batch, reference_opt)
                       for view, batch in trajectory])
    cum = np.cumsum(excess)
    if prefixes is None:
        prefixes = range(1, len(trajectory) + 1)
    return [(int(T), float(cum[T - 1] / T)) for T in prefixes]


def full_gradient_optimum(batches: Sequence, model: ModelState, steps: int,
                          eta: float | None = None) -> ModelState:
    """Minimize the summed LR loss over ``batches`` by plain gradient descent.

    The step size defaults to ``1/L`` with ``L`` the smoothness constant of
    the mean BCE, ``||X||_2**2 / (4 N)``.
    """
    samples = [s for b in batches for s in b]
    rows, idx, vals = concat_rows(s.features for s in samples)
    n, d = len(samples), model.dim
    X = np.zeros((n, d))
    np.add.at(X, (rows, idx), vals)
    y = np.array([s.label for s in samples])
    if eta is None:
        L = np.linalg.norm(X, 2) ** 2 / (4.0 * n)
        eta = 1.0 / L
    w = model.params.copy()
    for _ in range(steps):
        z = np.clip(X @ w, -35.0, 35.0)
        w -= eta * (X.T @ (1.0 / (1.0 + np.exp(-z)) - y)) / n
    out = model.copy()
    out.params = w
    return out
