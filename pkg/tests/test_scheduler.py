import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isptrain.errors import ConfigurationError, NotEnoughData
from isptrain.scheduler import (KEEP, REFERENCE, REMOVE, SLOW, CurveFit, LossSeries,
                                ScaleInScheduler, SchedulerConfig, StepTiming, choose_victim,
                                detect_knee, evaluate_curve, ewma, fit_curve, projected_deviation)

FIG3 = (0.05, 1.58, 0.58, 0.49)


def ref_curve(t, theta=FIG3):
    a, b, c, d = theta
    return 1.0 / (a * np.power(np.asarray(t, float), b) + c) + d


def slow_curve(t, theta):
    a, b, c, d = theta
    t = np.asarray(t, float)
    return 1.0 / (a * t * t + b * t + c) + d


# -- ewma ---------------------------------------------------------------------

def test_ewma_examples():
    assert ewma([0.4] * 5, 0.3).tolist() == [0.4] * 5
    assert ewma([3.0, 1.0, 2.0], 1.0).tolist() == [3.0, 1.0, 2.0]
    assert ewma([0.0, 1.0], 0.5).tolist() == [0.0, 0.5]
    for bad in (0.0, 1.5, -0.1):
        with pytest.raises(ConfigurationError):
            ewma([1.0], bad)


def test_loss_series_matches_ewma():
    series = LossSeries(alpha=0.25)
    raw = [0.9, 0.7, 0.8, 0.5]
    for k, x in enumerate(raw, 1):
        series.append(k, x)
    assert series.smoothed == pytest.approx(ewma(raw, 0.25).tolist(), abs=0)
    with pytest.raises(ValueError):
        series.append(4, 0.1)


# -- fitting --------------------------------------------------------------------

def test_fig3_reference_recovery():
    t = np.arange(1, 401)
    fit = fit_curve(t, ref_curve(t), REFERENCE)
    rel = np.abs(fit(t) - ref_curve(t)) / ref_curve(t)
    assert rel.max() < 0.005
    assert all(th >= 0 for th in fit.theta)


def test_constant_series_is_degenerate():
    fit = fit_curve(range(1, 21), [0.7] * 20, SLOW)
    assert fit.degenerate
    assert fit.theta[:2] == (0.0, 0.0)
    assert fit.theta[3] == pytest.approx(0.7)
    assert fit(100.0) == pytest.approx(0.7)


def test_too_few_points():
    with pytest.raises(NotEnoughData):
        fit_curve(range(1, 8), np.linspace(1, 0.5, 7), REFERENCE)


def _grid_oracle(t, y):
    """Best SSE over a log-spaced lattice, with theta3 solved in closed form."""
    best = math.inf
    a_grid = np.concatenate([[0.0], np.logspace(-8, -2, 25)])
    b_grid = np.concatenate([[0.0], np.logspace(-5, 0, 25)])
    c_grid = np.logspace(-1, 1.5, 25)
    for a, b, c in itertools.product(a_grid, b_grid, c_grid):
        g = 1.0 / (a * t * t + b * t + c)
        d = max(0.0, float(np.mean(y - g)))
        r = g + d - y
        best = min(best, float(r @ r))
    return best


def test_slow_fit_against_grid_oracle():
    rng = np.random.default_rng(3)
    t = np.arange(100, 300, dtype=float)
    y = slow_curve(t, (2e-5, 3e-3, 1.2, 0.35)) * (1 + 0.01 * rng.standard_normal(t.size))
    fit = fit_curve(t, y, SLOW)
    assert fit.residual <= 1.05 * _grid_oracle(t, y)
    assert all(th >= 0 for th in fit.theta)


@settings(max_examples=15)
@given(st.integers(0, 2**32 - 1))
def test_prediction_error_with_noise(seed):
    rng = np.random.default_rng(seed)
    t = np.arange(1, 401)
    y = ref_curve(t) * (1 + 0.01 * rng.standard_normal(t.size))
    fit = fit_curve(t, ewma(y, 0.3), REFERENCE)
    ahead = np.arange(401, 601)
    err = np.abs(fit(ahead) - ref_curve(ahead)) / ref_curve(ahead)
    assert err.max() < 0.015


@settings(max_examples=20)
@given(st.integers(0, 2**32 - 1), st.sampled_from([REFERENCE, SLOW]))
def test_fits_are_nonnegative_and_reference_monotone(seed, family):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(8, 80))
    t = np.sort(rng.choice(np.arange(1, 500), n, replace=False)).astype(float)
    y = 1.0 / (rng.uniform(0.01, 1) * t ** rng.uniform(0.3, 2) + rng.uniform(0.2, 3))
    y = y + rng.uniform(0, 0.5) + 0.005 * rng.standard_normal(n)
    fit = fit_curve(t, y, family)
    assert all(th >= 0 for th in fit.theta)
    if family == REFERENCE and not fit.degenerate:
        grid = np.linspace(1, 2000, 500)
        assert np.all(np.diff(fit(grid)) <= 1e-15)


def test_curve_json():
    fit = CurveFit(SLOW, (1.0, 2.0, 3.0, 0.5), (1, 9), 0.25)
    data = json.loads(fit.to_json())
    assert data["family"] == SLOW and data["theta"] == [1.0, 2.0, 3.0, 0.5]
    assert evaluate_curve(SLOW, fit.theta, 1.0) == pytest.approx(1 / 6 + 0.5)


# -- knee -----------------------------------------------------------------------------

def test_knee_of_inverse_t():
    t = np.arange(1, 40)
    assert detect_knee(t, 1.0 / t, 0.01, window=1) == 11


def test_knee_linear_never():
    t = np.arange(1, 100)
    assert detect_knee(t, 10 - 0.5 * t, 0.01) is None


def test_knee_constant_series():
    t = np.arange(1, 20)
    for w in (1, 3, 5):
        # the w-th zero difference ends on the (w+1)-th point
        assert detect_knee(t, np.full(t.size, 0.3), 0.01, window=w) == w + 1


# -- projected deviation ----------------------------------------------------------------

def test_deviation_identical_curves_is_zero():
    ref = CurveFit(REFERENCE, FIG3, (1, 400), 0.0)
    assert projected_deviation(ref, ref, StepTiming(100.0, 100.0), 300, 5.0) == 0.0


def test_deviation_negative_when_current_is_lower():
    ref = CurveFit(REFERENCE, FIG3, (1, 400), 0.0)
    cur = CurveFit(SLOW, (0.0, 0.0, 100.0, 0.30), (1, 400), 0.0)
    assert projected_deviation(ref, cur, StepTiming(100.0, 100.0), 300, 5.0) < 0


def test_deviation_direct_evaluation_oracle():
    t = np.arange(1, 401)
    y = ref_curve(t)
    ref = CurveFit(REFERENCE, FIG3, (1, 400), 0.0)
    cur = fit_curve(t, y, SLOW)
    # d = 100 ms and horizon 5 s give 50 steps ahead on both sides
    s = projected_deviation(ref, cur, StepTiming(100.0, 100.0), 300, 5.0)
    big = 1.0 / (0.05 * 350 ** 1.58 + 0.58) + 0.49
    a, b, c, d = cur.theta
    small = 1.0 / (a * 350 * 350 + b * 350 + c) + d
    assert abs(s - (small - big) / big) <= 1e-12


@given(st.floats(1.0, 1e4), st.floats(1.0, 1e4), st.floats(0.01, 100))
def test_floor_steps_ordering(d_small, d_big, horizon_s):
    d_cur, d_ref = sorted((d_small, d_big))
    h = horizon_s * 1000.0
    assert math.floor(h / d_cur) >= math.floor(h / d_ref)


# -- decisions ---------------------------------------------------------------------------

def test_choose_victim():
    assert choose_victim({0: 0.3, 1: 0.5, 2: 0.4}) == 1
    assert choose_victim({0: 0.5, 3: 0.5, 1: 0.2}) == 3


def _run(sched, losses, start_wall=0.0, dt=1.0, pool=4, probes=None):
    decisions = []
    wall = start_wall
    for k, loss in enumerate(losses, 1):
        sched.observe(k, loss, dt * 1000.0)
        wall += dt
        d = sched.decide(wall, pool, probes or {w: 0.1 * w for w in range(pool)})
        if d.action == REMOVE:
            pool -= 1
        decisions.append(d)
    return decisions, pool


def test_no_removal_before_knee():
    sched = ScaleInScheduler(SchedulerConfig(enabled=True, knee_eps=1e-6, threshold=1.0))
    decisions, pool = _run(sched, [10.0 - k for k in range(50)])
    assert all(d.action == KEEP for d in decisions)
    assert pool == 4 and sched.knee_step is None


def _knee_then_threshold(threshold):
    cfg = SchedulerConfig(enabled=True, knee_eps=1e-2, threshold=threshold, epoch_s=10,
                          horizon_s=5, alpha=1.0)
    sched = ScaleInScheduler(cfg)
    t = np.arange(1, 200)
    return _run(sched, list(ref_curve(t)), pool=4)


def test_decide_removes_below_threshold():
    decisions, pool = _knee_then_threshold(threshold=1.0)
    removals = [d for d in decisions if d.action == REMOVE]
    assert removals[0].events == ["knee", "evict:3"]
    assert pool == 1
    assert len(removals) == 3


def test_decision_examples_by_deviation(monkeypatch):
    import isptrain.scheduler as sch
    for s, expected in ((-0.02, REMOVE), (0.2, KEEP)):
        monkeypatch.setattr(sch, "projected_deviation", lambda *a, s=s, **k: s)
        cfg = SchedulerConfig(enabled=True, knee_eps=1e-2, threshold=0.05, epoch_s=10,
                              horizon_s=5, alpha=1.0)
        sched = ScaleInScheduler(cfg)
        decisions, _ = _run(sched, list(ref_curve(np.arange(1, 60))), pool=6)
        later = [d for d in decisions if d.deviation is not None]
        assert later and later[0].action == expected


def test_never_below_one_worker():
    cfg = SchedulerConfig(enabled=True, knee_eps=1e-2, threshold=1.0, epoch_s=1, horizon_s=1,
                          alpha=1.0)
    decisions, pool = _run(ScaleInScheduler(cfg), list(ref_curve(np.arange(1, 300))), pool=2)
    assert pool == 1


def test_debug_dump(tmp_path):
    path = tmp_path / "fits.jsonl"
    cfg = SchedulerConfig(enabled=True, knee_eps=1e-2, threshold=1.0, epoch_s=10, horizon_s=5,
                          alpha=1.0, debug_path=str(path))
    sched = ScaleInScheduler(cfg)
    _run(sched, list(ref_curve(np.arange(1, 60))))
    sched.close()
    records = [json.loads(line) for line in path.read_text().splitlines()]
    assert records[0]["fit"]["family"] == REFERENCE
    assert any(r["fit"]["family"] == SLOW for r in records[1:])


def test_config_validation():
    for bad in (dict(epoch_s=0), dict(horizon_s=30), dict(threshold=2.0), dict(knee_eps=0.0),
                dict(knee_window=0), dict(alpha=0.0)):
        with pytest.raises(ConfigurationError):
            SchedulerConfig(**bad).validate()
