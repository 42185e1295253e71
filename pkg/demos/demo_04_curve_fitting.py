"""
Loss-curve models, knee detection and projected deviation
=========================================================

The scheduler fits ``1/(a t^b + c) + d`` to the loss curve up to its knee
and ``1/(a t^2 + b t + c) + d`` to the points gathered after each worker
removal, then compares where both curves will be a few seconds ahead.
"""
import numpy as np

from isptrain.scheduler import (REFERENCE, SLOW, StepTiming, detect_knee, ewma, fit_curve,
                                projected_deviation)

theta = (0.05, 1.58, 0.58, 0.49)
t = np.arange(1, 601, dtype=float)
truth = 1.0 / (theta[0] * t ** theta[1] + theta[2]) + theta[3]
noisy = truth * (1 + 0.01 * np.random.default_rng(0).standard_normal(t.size))
smooth = ewma(noisy, 0.3)

knee = detect_knee(t, smooth, epsilon=1e-3, window=5)
print("knee at step", knee)

ref = fit_curve(t[:400], smooth[:400], REFERENCE)
print("reference fit theta:", np.round(ref.theta, 4))
for ahead in (50, 100, 200):
    s = 400 + ahead
    err = abs(float(ref(s)) - truth[s - 1]) / truth[s - 1]
    print(f"  {ahead:3d} steps ahead: prediction error {100 * err:.3f}%")

# pretend two workers left at step 300 and steps now take 80 ms instead of 100 ms
slow = fit_curve(t[300:400], smooth[300:400], SLOW)
s = projected_deviation(ref, slow, StepTiming(d_ref_ms=100.0, d_cur_ms=80.0), t=400,
                        horizon_s=10.0)
print(f"projected deviation s = {s:+.4f} (remove another worker if s < 0.05)")
