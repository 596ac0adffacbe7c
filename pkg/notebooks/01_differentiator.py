"""
Robust exact differentiator on analytic signals
================================================

The differentiator needs one gain, L0, an upper bound on the second
derivative of the signal.  Its fixed-step error grows linearly with dt.
"""

import numpy as np

from stwobs.diffbench import halving_ratio, run_benchmark
from stwobs.sosm import run_differentiator

# derivative of sin(t) at dt = 1 ms with L0 = 1 (|sin''| <= 1)
dt = 1e-3
t = np.arange(20001) * dt
z1 = run_differentiator(np.sin(t), dt, L0=1.0)
late = t >= 10
print("steady error on sin:", np.max(np.abs(z1 - np.cos(t))[late]))

# the steady error is C * dt: halving dt halves it
print("halving ratio      :", halving_ratio("sine", 1.0, 1e-3, 20.0))

# a constant is a fixed point; a ramp has zero second derivative
for name in ("constant", "ramp"):
    res = run_benchmark(name, 1.0, 1e-3, 10.0)
    print(f"{name:8s} steady error: {res.steady_error:.3e}")

# with L0 below the second-derivative bound the benchmark flags the risk
print(run_benchmark("chirp", 0.5, 1e-3, 20.0).report())
