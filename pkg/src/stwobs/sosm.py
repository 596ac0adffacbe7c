"""Super-twisting injection with adaptive gain, and Levant's robust differentiator.

The public functions work on small frozen dataclasses.  The arithmetic lives
in the ``*_kernel`` functions, which are jit-compiled so the simulation loop
can call exactly the same code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from numba import njit

# Differentiator constants recommended by Levant for the first-order case.
DIFF_LAMBDA0 = 1.0
DIFF_ALPHA0 = 1.1


@njit(cache=True)
def sgn(x):
    """Sign with sgn(0) = 0."""
    if x > 0.0:
        return 1.0
    if x < 0.0:
        return -1.0
    return 0.0


@njit(cache=True)
def stw_kernel(phi, L, e, dt):
    s = sgn(e)
    lam = 2.0 * math.sqrt(L)
    alpha = 4.0 * L
    mu = lam * math.sqrt(abs(e)) * s + phi
    return mu, phi + alpha * s * dt


@njit(cache=True)
def adapt_kernel(L, e, dead_zone, k_rate, L_max, dt):
    if abs(e) > dead_zone:
        return min(L + k_rate * dt, L_max)
    return L


@njit(cache=True)
def differentiator_kernel(z0, z1, L0, signal, dt):
    s = z0 - signal
    dz0 = -DIFF_LAMBDA0 * math.sqrt(L0) * math.sqrt(abs(s)) * sgn(s) + z1
    dz1 = -DIFF_ALPHA0 * L0 * sgn(s)
    return z0 + dt * dz0, z1 + dt * dz1


@dataclass(frozen=True)
class StwChannel:
    """One scalar super-twisting channel.

    ``phi`` is the integral state of the injection; ``L`` the adaptive gain
    from which both STW gains are derived.
    """

    phi: float = 0.0
    L: float = 5000.0
    dead_zone: float = 1e-3
    k_rate: float = 500.0
    L_max: float = 1e6

    def __post_init__(self):
        if not self.L > 0:
            raise ValueError(f"adaptive gain L must be positive, got {self.L}")
        if self.L > self.L_max:
            raise ValueError(f"L={self.L} exceeds L_max={self.L_max}")
        if self.dead_zone < 0:
            raise ValueError(f"dead_zone must be >= 0, got {self.dead_zone}")
        if not self.k_rate > 0:
            raise ValueError(f"k_rate must be positive, got {self.k_rate}")


@dataclass(frozen=True)
class DifferentiatorState:
    z0: float
    z1: float = 0.0
    L0: float = 1.0

    def __post_init__(self):
        if not self.L0 > 0:
            raise ValueError(f"differentiator L0 must be positive, got {self.L0}")


def gains_from_L(L):
    """Return the STW gain pair ``(lambda, alpha) = (2*sqrt(L), 4*L)``."""
    if not L > 0:
        raise ValueError(f"L must be positive, got {L}")
    return 2.0 * math.sqrt(L), 4.0 * L


def _check_dt(dt):
    if not dt > 0:
        raise ValueError(f"step dt must be positive, got {dt}")


def stw_step(ch, e, dt):
    """Evaluate the injection for sliding variable ``e`` and advance ``phi``.

    Returns ``(mu, channel')``.  The gain ``L`` is left untouched; see
    :func:`adapt_gain`.
    """
    _check_dt(dt)
    mu, phi = stw_kernel(ch.phi, ch.L, e, dt)
    return mu, replace(ch, phi=phi)


def adapt_gain(ch, e, dt):
    """Grow ``L`` at ``k_rate`` while ``|e|`` is outside the dead-zone."""
    _check_dt(dt)
    return replace(ch, L=adapt_kernel(ch.L, e, ch.dead_zone, ch.k_rate, ch.L_max, dt))


def differentiator_step(d, signal, dt):
    """One explicit Euler step of the first-order robust exact differentiator.

    ``d.z1`` converges in finite time to the derivative of ``signal``
    provided its second derivative is bounded by ``d.L0``.
    """
    _check_dt(dt)
    z0, z1 = differentiator_kernel(d.z0, d.z1, d.L0, signal, dt)
    return replace(d, z0=z0, z1=z1)


def run_differentiator(signal, dt, L0, z0=None, z1=0.0):
    """Differentiate a sampled signal; returns the array of derivative estimates."""
    _check_dt(dt)
    if not L0 > 0:
        raise ValueError(f"differentiator L0 must be positive, got {L0}")
    signal = np.asarray(signal, dtype=float)
    return _run_differentiator(signal, float(dt), float(L0),
                               float(signal[0] if z0 is None else z0), float(z1))


@njit(cache=True)
def _run_differentiator(signal, dt, L0, z0, z1):
    out = np.empty(signal.shape[0])
    for k in range(signal.shape[0]):
        out[k] = z1
        z0, z1 = differentiator_kernel(z0, z1, L0, signal[k], dt)
    return out
