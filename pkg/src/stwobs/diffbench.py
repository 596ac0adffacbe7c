"""Benchmark of the robust differentiator on analytic signals."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sosm import run_differentiator

CHIRP_RATE = 0.1  # rad/s^2


def _constant(t):
    return np.ones_like(t), np.zeros_like(t)


def _ramp(t):
    return 2.0 * t, np.full_like(t, 2.0)


def _sine(t):
    return np.sin(t), np.cos(t)


def _chirp(t):
    ph = t + CHIRP_RATE * t * t
    return np.sin(ph), (1.0 + 2.0 * CHIRP_RATE * t) * np.cos(ph)


# name -> (signal and derivative, bound on |second derivative| over [0, T])
SIGNALS = {
    "constant": (_constant, lambda T: 0.0),
    "ramp": (_ramp, lambda T: 0.0),
    "sine": (_sine, lambda T: 1.0),
    "chirp": (_chirp, lambda T: 2.0 * CHIRP_RATE + (1.0 + 2.0 * CHIRP_RATE * T) ** 2),
}


@dataclass(frozen=True)
class BenchResult:
    signal: str
    L0: float
    dt: float
    duration: float
    max_error: float
    steady_error: float
    accel_bound: float

    @property
    def condition_ok(self):
        return self.accel_bound <= self.L0

    def report(self):
        lines = [
            f"signal          : {self.signal}",
            f"L0, dt, T       : {self.L0:g}, {self.dt:g}, {self.duration:g}",
            f"max error       : {self.max_error:.6e}",
            f"steady error    : {self.steady_error:.6e} (sup over second half)",
            f"steady / dt     : {self.steady_error / self.dt:.4f}",
        ]
        if self.condition_ok:
            lines.append(f"condition       : |f''| <= {self.accel_bound:g} <= L0 holds")
        else:
            lines.append(f"DIVERGENCE RISK : condition |f''| <= L0 violated "
                         f"(|f''| reaches {self.accel_bound:g} > L0 = {self.L0:g})")
        return "\n".join(lines)


def run_benchmark(signal, L0, dt, duration):
    if signal not in SIGNALS:
        raise ValueError(f"unknown signal {signal!r}")
    if not (L0 > 0 and dt > 0 and duration > 0):
        raise ValueError("L0, dt and duration must be positive")
    n = int(round(duration / dt))
    if n < 2:
        raise ValueError("duration must span at least two steps")
    fn, bound = SIGNALS[signal]
    t = np.arange(n + 1) * dt
    f, df = fn(t)
    z1 = run_differentiator(f, dt, L0)
    err = np.abs(z1 - df)
    steady = err[t >= 0.5 * duration]
    return BenchResult(signal, float(L0), float(dt), float(duration),
                       float(err.max()), float(steady.max()), float(bound(duration)))


def halving_ratio(signal, L0, dt, duration):
    """Steady error at ``dt`` divided by the steady error at ``dt / 2``."""
    a = run_benchmark(signal, L0, dt, duration).steady_error
    b = run_benchmark(signal, L0, dt / 2, duration).steady_error
    return a / b if b > 0 else math.inf
