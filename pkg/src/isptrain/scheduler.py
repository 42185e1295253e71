"""Scale-in auto-tuner.

The supervisor feeds per-step losses and durations. Until the loss curve
reaches its knee nothing happens. At the knee the smoothed curve is fitted
with the reference family ``1/(a t^b + c) + d`` and one worker is dropped.
From then on, every scheduling epoch the points gathered since the last
removal are fitted with the slow family ``1/(a t^2 + b t + c) + d`` and the
two fits are compared ``horizon`` seconds ahead. A worker goes when the
current pool is not projected to do meaningfully worse than the reference.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, NotEnoughData

REFERENCE = "reference"
SLOW = "slow"
MIN_FIT_POINTS = 8
# cap on the reference exponent; flat data otherwise drives it to overflow
MAX_EXPONENT = 8.0


class FitError(ArithmeticError):
    pass


def ewma(series: Sequence[float], alpha: float) -> np.ndarray:
    if not 0.0 < alpha <= 1.0:
        raise ConfigurationError(f"EWMA alpha must be in (0, 1], got {alpha}")
    x = np.asarray(series, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty series")
    y = np.empty_like(x)
    y[0] = x[0]
    for i in range(1, x.size):
        y[i] = y[i - 1] + alpha * (x[i] - y[i - 1])
    return y


@dataclass
class LossSeries:
    steps: list[int] = field(default_factory=list)
    raw: list[float] = field(default_factory=list)
    smoothed: list[float] = field(default_factory=list)
    alpha: float = 0.3

    def append(self, step: int, loss: float) -> float:
        if self.steps and step <= self.steps[-1]:
            raise ValueError("steps must be strictly increasing")
        if not math.isfinite(loss):
            raise ValueError("loss must be finite")
        y = loss if not self.smoothed else self.smoothed[-1] + self.alpha * (loss - self.smoothed[-1])
        self.steps.append(int(step))
        self.raw.append(float(loss))
        self.smoothed.append(float(y))
        return y

    def __len__(self) -> int:
        return len(self.steps)


# -- curve families --------------------------------------------------------

def _denominator(family: str, theta, t):
    t0, t1, t2, _ = theta
    if family == REFERENCE:
        return t0 * np.power(t, t1) + t2
    return t0 * t * t + t1 * t + t2


def evaluate_curve(family: str, theta, t):
    t = np.asarray(t, dtype=np.float64)
    return 1.0 / _denominator(family, theta, t) + theta[3]


@dataclass
class CurveFit:
    family: str
    theta: tuple[float, float, float, float]
    fit_window: tuple[int, int]
    residual: float
    degenerate: bool = False

    def __call__(self, t):
        if self.degenerate:
            return np.full_like(np.asarray(t, dtype=np.float64), self.theta[3])
        return evaluate_curve(self.family, self.theta, t)

    def to_json(self) -> str:
        return json.dumps({"family": self.family, "theta": list(self.theta),
                           "residual": self.residual, "window": list(self.fit_window),
                           "degenerate": self.degenerate})


def _model_and_jac(family: str, p: np.ndarray, tau: np.ndarray):
    a, b, c, d = p
    if family == REFERENCE:
        tb = np.power(tau, b)
        den = a * tb + c
        inv2 = -1.0 / (den * den)
        jac = np.column_stack([inv2 * tb, inv2 * a * tb * np.log(tau), inv2, np.ones_like(tau)])
    else:
        den = a * tau * tau + b * tau + c
        inv2 = -1.0 / (den * den)
        jac = np.column_stack([inv2 * tau * tau, inv2 * tau, inv2, np.ones_like(tau)])
    return 1.0 / den + d, den, jac


def _starts(family: str, tau: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    y_lo = max(float(np.min(y)), 0.0)
    head = float(np.mean(y[:3]))
    tail = float(np.mean(y[-3:]))
    out = []
    shapes = [(0.9, 1.0), (0.99, 1.5), (0.5, 0.5), (0.0, 2.0)]
    for frac, shape in shapes:
        d = frac * y_lo
        c = 1.0 / max(head - d, 1e-6)
        a = max(1.0 / max(tail - d, 1e-6) - c, 1e-6)
        if family == REFERENCE:
            out.append(np.array([a, shape, c, d]))
        else:
            w = min(shape / 2.0, 1.0)
            out.append(np.array([a * w, a * (1 - w) + 1e-6, c, d]))
    return out


def _projected_lm(family, p, tau, y, max_iter=400):
    """Damped Gauss-Newton with every iterate clamped to the non-negative orthant."""
    def cost_of(q):
        f, den, _ = _model_and_jac(family, q, tau)
        if np.min(den) <= 1e-12 or not np.all(np.isfinite(f)):
            return math.inf
        r = f - y
        return float(r @ r)

    cost = cost_of(p)
    if not math.isfinite(cost):
        return p, cost
    lam = 1e-3
    for _ in range(max_iter):
        f, _, jac = _model_and_jac(family, p, tau)
        r = f - y
        jtj = jac.T @ jac
        g = jac.T @ r
        improved = False
        for _ in range(30):
            a = jtj + lam * (np.diag(np.diag(jtj)) + 1e-12 * np.eye(4))
            try:
                step = np.linalg.solve(a, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            cand = np.maximum(p + step, 0.0)
            if family == REFERENCE:
                cand[1] = min(cand[1], MAX_EXPONENT)
            c2 = cost_of(cand)
            if c2 < cost:
                rel = (cost - c2) / max(cost, 1e-300)
                p, cost = cand, c2
                lam = max(lam / 3.0, 1e-12)
                improved = True
                break
            lam *= 4.0
        if not improved or rel < 1e-14:
            break
    return p, cost


def fit_curve(steps: Sequence[float], values: Sequence[float], family: str) -> CurveFit:
    """Least-squares fit with all coefficients constrained to be non-negative."""
    if family not in (REFERENCE, SLOW):
        raise ValueError(f"unknown curve family {family!r}")
    t = np.asarray(steps, dtype=np.float64)
    y = np.asarray(values, dtype=np.float64)
    if t.size < MIN_FIT_POINTS:
        raise NotEnoughData(f"need {MIN_FIT_POINTS} points to fit, got {t.size}")
    if np.min(t) < 1:
        raise ValueError("steps must be >= 1")
    window = (int(t[0]), int(t[-1]))
    mean = float(np.mean(y))
    if np.ptp(y) <= 1e-12 * max(1.0, abs(mean)):
        return CurveFit(family, (0.0, 0.0, 0.0, max(mean, 0.0)), window, 0.0, degenerate=True)

    # work on t / t_max so all coefficients have comparable scale
    ts = float(np.max(t))
    tau = t / ts
    best, best_cost = None, math.inf
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for start in _starts(family, tau, y):
            p, cost = _projected_lm(family, start, tau, y)
            if cost < best_cost:
                best, best_cost = p, cost
    if best is None:
        raise FitError("no start produced a valid fit")
    a, b, c, d = (float(v) for v in best)
    if family == REFERENCE:
        theta = (a / ts ** b, b, c, d)
    else:
        theta = (a / (ts * ts), b / ts, c, d)
    if np.min(_denominator(family, theta, t)) <= 0:
        raise FitError("fitted denominator is not positive over the window")
    r = evaluate_curve(family, theta, t) - y
    return CurveFit(family, theta, window, float(r @ r))


def detect_knee(steps: Sequence[float], values: Sequence[float], epsilon: float,
                window: int = 5) -> Optional[int]:
    """First step at which ``|dy/dt| < epsilon`` has held for ``window`` differences."""
    if window < 1:
        raise ValueError("window must be >= 1")
    run = 0
    for i in range(1, len(values)):
        slope = abs(values[i] - values[i - 1]) / (steps[i] - steps[i - 1])
        run = run + 1 if slope < epsilon else 0
        if run >= window:
            return int(steps[i])
    return None


@dataclass
class StepTiming:
    d_ref_ms: float
    d_cur_ms: float

    def __post_init__(self):
        if not (self.d_ref_ms > 0 and self.d_cur_ms > 0):
            raise ValueError("step durations must be positive")


def projected_deviation(ref: CurveFit, cur: CurveFit, timing: StepTiming, t: int,
                        horizon_s: float) -> float:
    """Relative gap of the current projection over the reference one.

    Negative means the current pool is projected to reach a lower loss than
    the reference pool within the horizon.
    """
    horizon_ms = horizon_s * 1000.0
    big = float(ref(t + math.floor(horizon_ms / timing.d_ref_ms)))
    small = float(cur(t + math.floor(horizon_ms / timing.d_cur_ms)))
    s = (small - big) / big
    if not math.isfinite(s):
        raise FitError("projected deviation is not finite")
    return s


# -- decision state machine ------------------------------------------------

@dataclass
class SchedulerConfig:
    enabled: bool = False
    epoch_s: float = 20.0
    horizon_s: float = 10.0
    threshold: float = 0.05
    knee_eps: Optional[float] = None
    knee_window: int = 5
    alpha: float = 0.3
    debug_path: Optional[str] = None

    def validate(self) -> None:
        if not self.epoch_s > 0:
            raise ConfigurationError("scheduler.epoch_s must be positive")
        if not 0 < self.horizon_s <= self.epoch_s:
            raise ConfigurationError("scheduler.horizon_s must be in (0, epoch_s]")
        if not 0.0 <= self.threshold <= 1.0:
            raise ConfigurationError("scheduler.threshold must be in [0, 1]")
        if self.knee_eps is not None and not self.knee_eps > 0:
            raise ConfigurationError("scheduler.knee_eps must be positive")
        if self.knee_window < 1:
            raise ConfigurationError("scheduler.knee_window must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigurationError("scheduler.alpha must be in (0, 1]")


KEEP = "keep"
REMOVE = "remove"


@dataclass
class Decision:
    action: str
    victim: Optional[int] = None
    reason: str = ""
    deviation: Optional[float] = None
    events: list[str] = field(default_factory=list)


def choose_victim(probe_losses: Mapping[int, float]) -> int:
    """Worker whose replica scores worst on the probe batch; ties go to the higher id."""
    if not probe_losses:
        raise ValueError("no candidate workers")
    return max(probe_losses, key=lambda w: (probe_losses[w], w))


class ScaleInScheduler:
    def __init__(self, cfg: SchedulerConfig):
        cfg.validate()
        self.cfg = cfg
        self.series = LossSeries(alpha=cfg.alpha)
        self.durations: list[float] = []
        self.knee_step: Optional[int] = None
        self.epsilon: Optional[float] = cfg.knee_eps
        self.reference: Optional[CurveFit] = None
        self.d_ref_ms: Optional[float] = None
        self.since: int = 0             # series index of the first point after the last removal
        self.next_epoch_s: float = math.inf
        self.removals = 0
        self._debug = open(cfg.debug_path, "a", encoding="utf-8") if cfg.debug_path else None

    def close(self) -> None:
        if self._debug:
            self._debug.close()
            self._debug = None

    def _dump(self, record: dict) -> None:
        if self._debug:
            self._debug.write(json.dumps(record) + "\n")
            self._debug.flush()

    def observe(self, step: int, loss: float, duration_ms: float) -> float:
        self.durations.append(float(duration_ms))
        return self.series.append(step, loss)

    def _knee_reached(self) -> bool:
        w = self.cfg.knee_window
        y = self.series.smoothed
        if len(y) < max(MIN_FIT_POINTS, w + 1):
            return False
        if self.epsilon is None:
            t = self.series.steps
            drop = abs(y[0] - y[w]) / (t[w] - t[0])
            self.epsilon = max(0.02 * drop, 1e-12)
        return detect_knee(self.series.steps, y, self.epsilon, w) is not None

    def decide(self, wall_s: float, pool: int, probe_losses: Callable | Mapping | None = None) -> Decision:
        """Decision after the step just observed, at job time ``wall_s``.

        ``probe_losses`` maps worker id to its replica's loss on the probe
        batch; a callable is invoked lazily only when a victim is needed.
        """
        t = self.series.steps[-1]
        if self.knee_step is None:
            if not self._knee_reached():
                return Decision(KEEP, reason="before knee")
            self.knee_step = t
            steps, ys = self.series.steps, self.series.smoothed
            self.reference = fit_curve(steps, ys, REFERENCE)
            self.d_ref_ms = float(np.mean(self.durations))
            self._dump({"step": t, "fit": json.loads(self.reference.to_json()),
                        "d_ref_ms": self.d_ref_ms, "epsilon": self.epsilon})
            self.next_epoch_s = wall_s + self.cfg.epoch_s
            return self._remove(pool, probe_losses, ["knee"], "knee reached", None)
        if wall_s < self.next_epoch_s:
            return Decision(KEEP, reason="between epochs")
        while self.next_epoch_s <= wall_s:
            self.next_epoch_s += self.cfg.epoch_s
        if pool <= 1:
            return Decision(KEEP, reason="single worker left")
        steps = self.series.steps[self.since:]
        ys = self.series.smoothed[self.since:]
        if len(steps) < MIN_FIT_POINTS:
            return Decision(KEEP, reason="stale fit: too few points since last removal")
        try:
            cur = fit_curve(steps, ys, SLOW)
            timing = StepTiming(self.d_ref_ms, float(np.mean(self.durations[self.since:])))
            s = projected_deviation(self.reference, cur, timing, t, self.cfg.horizon_s)
        except (FitError, NotEnoughData, ValueError) as exc:
            return Decision(KEEP, reason=f"fit failed: {exc}")
        self._dump({"step": t, "fit": json.loads(cur.to_json()), "d_cur_ms": timing.d_cur_ms,
                    "deviation": s})
        if s < self.cfg.threshold:
            return self._remove(pool, probe_losses, [], "deviation below threshold", s)
        return Decision(KEEP, reason="deviation above threshold", deviation=s)

    def _remove(self, pool, probe_losses, events, reason, s) -> Decision:
        if pool <= 1:
            return Decision(KEEP, reason="single worker left", deviation=s, events=events)
        losses = probe_losses() if callable(probe_losses) else probe_losses
        victim = choose_victim(losses)
        self.since = len(self.series)
        self.removals += 1
        return Decision(REMOVE, victim, reason, s, events + [f"evict:{victim}"])
