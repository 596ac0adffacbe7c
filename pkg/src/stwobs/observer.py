"""Adaptive super-twisting observer for partitioned nonlinear systems.

The plant is described in observer coordinates ``z = T x`` split as
``(z_y1, z_y2, z2)`` with ``z_y = (z_y1, z_y2) = Tbar y``:

    dz_y1 = A11b y + A21b z2 + W_g1(y, z2, u) + Phi1(y, u) theta
    dz_y2 = A12b y + A22b z2 + W_g2(y, z2, u) + Phi2(y, u) f
    dz2   = A21 y  + A22 z2  + g2(y, z2, u)   + phi2(y, u) theta

``theta`` (q entries) is an unknown constant parameter and ``f`` (r entries)
an unknown fault.  The observer copies these dynamics, replaces the unknowns
by super-twisting injections on the output errors, estimates ``theta`` with
a gradient-type law driven by a differentiator of ``z_y1``, and reads the
fault off the equivalent injection of the ``z_y2`` channel.

Slot functions take ``(y, z2, u, params)`` (``W_g1``, ``W_g2``, ``g2``) or
``(y, u, params)`` (``Phi1``, ``Phi2``, ``phi2``) and return numpy arrays.
They may be plain Python callables; jit-compiled ones are required by the
fast simulation loop in :mod:`stwobs.simkit`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Any, Callable

import numpy as np
from numba.extending import register_jitable

from .linalg import is_hurwitz
from .sosm import (DifferentiatorState, StwChannel, adapt_gain, differentiator_step,
                   stw_step)

DEFAULT_WARMUP = 0.1        # s, adaptive law gated off while the differentiator settles
DEFAULT_FILTER_TAU = 0.01   # s
DEFAULT_INV_BOUND = 1e6     # largest admissible norm of Phi2^-1


# --- kernels shared with the jit-compiled simulation loop -------------------

@register_jitable
def matvec(A, x):
    out = np.zeros(A.shape[0])
    for i in range(A.shape[0]):
        s = 0.0
        for j in range(A.shape[1]):
            s += A[i, j] * x[j]
        out[i] = s
    return out


@register_jitable
def small_inv(M):
    """Gauss-Jordan inverse with partial pivoting; returns (inverse, ok)."""
    n = M.shape[0]
    a = M.copy()
    inv = np.eye(n)
    for col in range(n):
        piv = col
        for i in range(col + 1, n):
            if abs(a[i, col]) > abs(a[piv, col]):
                piv = i
        if a[piv, col] == 0.0:
            return inv, False
        if piv != col:
            for j in range(n):
                a[col, j], a[piv, j] = a[piv, j], a[col, j]
                inv[col, j], inv[piv, j] = inv[piv, j], inv[col, j]
        d = a[col, col]
        for j in range(n):
            a[col, j] /= d
            inv[col, j] /= d
        for i in range(n):
            if i != col:
                m = a[i, col]
                if m != 0.0:
                    for j in range(n):
                        a[i, j] -= m * a[col, j]
                        inv[i, j] -= m * inv[col, j]
    return inv, True


@register_jitable
def frob(M):
    s = 0.0
    for i in range(M.shape[0]):
        for j in range(M.shape[1]):
            s += M[i, j] * M[i, j]
    return math.sqrt(s)


@register_jitable
def observer_rates(y, z2, theta, u, mu1, mu2, A11b, A12b, A21b, A22b, A21, A22,
                   W_g1, W_g2, g2, Phi1, phi2, par):
    """Right-hand side of the observer with the injections ``mu1, mu2`` held fixed."""
    dzy1 = matvec(A11b, y) + matvec(A21b, z2) + W_g1(y, z2, u, par) \
        + matvec(Phi1(y, u, par), theta) + mu1
    dzy2 = matvec(A12b, y) + matvec(A22b, z2) + W_g2(y, z2, u, par) + mu2
    dz2 = matvec(A21, y) + matvec(A22, z2) + g2(y, z2, u, par) \
        + matvec(phi2(y, u, par), theta)
    return dzy1, dzy2, dz2


@register_jitable
def param_residual(y, z2, theta, u, zy1_dot, A11b, A21b, W_g1, Phi1, par):
    """Model prediction of ``dz_y1`` minus its differentiator estimate."""
    return (matvec(A11b, y) + matvec(A21b, z2) + W_g1(y, z2, u, par)
            + matvec(Phi1(y, u, par), theta) - zy1_dot)


@register_jitable
def scalar_gain(phi, gamma_g1, eps_k):
    """Scalar root of ``2 K phi - gamma^2 K^2 - eps = 0`` with the smaller magnitude."""
    g2 = gamma_g1 * gamma_g1
    if g2 == 0.0:
        return eps_k / (2.0 * phi)
    disc = phi * phi - g2 * eps_k
    if disc < 0.0:
        return math.nan
    return eps_k / (phi + math.copysign(math.sqrt(disc), phi))


# --- data types --------------------------------------------------------------

@dataclass
class SystemDescription:
    """Partitioned system plus the constants needed to run and certify an observer.

    ``output_scale`` (length ``p``) divides the output errors before they
    enter the super-twisting channels and multiplies the injections on the
    way out, so adaptive gains and dead-zones are in normalized units.
    """

    n: int
    p: int
    q: int
    r: int
    Tbar: np.ndarray
    T: np.ndarray
    H: float
    A11b: np.ndarray
    A12b: np.ndarray
    A21b: np.ndarray
    A22b: np.ndarray
    A21: np.ndarray
    A22: np.ndarray
    W_g1: Callable
    W_g2: Callable
    g2: Callable
    Phi1: Callable
    Phi2: Callable
    phi2: Callable
    params: Any = None
    gamma2: float = 0.0
    gamma_g1: float = 0.0
    gamma_g2: float = 0.0
    phi1_constant: bool = False
    output_scale: np.ndarray | None = None
    nominal: tuple | None = None
    state_names: tuple = ()
    output_names: tuple = ()
    cond_max: float = 1e8

    def __post_init__(self):
        n, p, q, r = self.n, self.p, self.q, self.r
        if p != q + r:
            raise ValueError(f"need p = q + r, got p={p}, q={q}, r={r}")
        if not (q >= 1 and r >= 1 and n > p):
            raise ValueError(f"need q >= 1, r >= 1 and n > p; got n={n}, p={p}, q={q}, r={r}")
        nz = n - p
        shapes = {"Tbar": (p, p), "T": (n, n), "A11b": (q, p), "A12b": (r, p),
                  "A21b": (q, nz), "A22b": (r, nz), "A21": (nz, p), "A22": (nz, nz)}
        for name, shape in shapes.items():
            M = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if M.shape != shape:
                raise ValueError(f"{name} has shape {M.shape}, expected {shape}")
            if not np.all(np.isfinite(M)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, np.ascontiguousarray(M))
        for name in ("Tbar", "T"):
            c = np.linalg.cond(getattr(self, name))
            if not c < self.cond_max:
                raise ValueError(f"{name} is singular or ill-conditioned (cond={c:.3g})")
        if not is_hurwitz(self.A22):
            raise ValueError("A22 is not Hurwitz")
        for name in ("gamma2", "gamma_g1", "gamma_g2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.output_scale is None:
            self.output_scale = np.ones(p)
        self.output_scale = np.asarray(self.output_scale, dtype=float)
        if self.output_scale.shape != (p,) or not np.all(self.output_scale > 0):
            raise ValueError("output_scale must hold p positive entries")
        self._Tinv = np.linalg.inv(self.T)
        self._Tbar_inv = np.linalg.inv(self.Tbar)

    @property
    def nz(self):
        return self.n - self.p

    def to_z(self, x):
        return self.T @ np.asarray(x, dtype=float)

    def from_z(self, z):
        return self._Tinv @ np.asarray(z, dtype=float)

    def output(self, x):
        """Measured output ``y`` of plant state ``x``."""
        return self._Tbar_inv @ self.to_z(x)[: self.p]


@dataclass(frozen=True)
class ObserverState:
    zhat_y1: np.ndarray
    zhat_y2: np.ndarray
    zhat2: np.ndarray
    theta_hat: np.ndarray
    ch_y1: tuple
    ch_y2: tuple
    diff: tuple
    K: np.ndarray
    steps: int = 0              # completed observer steps

    def check(self, sys):
        ok = (self.zhat_y1.shape == (sys.q,) and self.zhat_y2.shape == (sys.r,)
              and self.zhat2.shape == (sys.nz,) and self.theta_hat.shape == (sys.q,)
              and len(self.ch_y1) == sys.q and len(self.ch_y2) == sys.r
              and len(self.diff) == sys.q and np.shape(self.K) == (sys.q, sys.q))
        if not ok:
            raise ValueError("observer state dimensions do not match the system description")

    def zhat(self):
        return np.concatenate([self.zhat_y1, self.zhat_y2, self.zhat2])

    def xhat(self, sys):
        """Estimate in the original plant coordinates."""
        return sys.from_z(self.zhat())


@dataclass(frozen=True)
class FaultEstimate:
    f_hat: np.ndarray
    raw_injection: np.ndarray
    smoothed: np.ndarray
    valid: bool = True


@dataclass(frozen=True)
class FaultFilter:
    smoothed: np.ndarray
    tau: float = DEFAULT_FILTER_TAU
    inv_bound: float = DEFAULT_INV_BOUND


@dataclass(frozen=True)
class ErrorRecord:
    e_y1: np.ndarray
    e_y2: np.ndarray
    e2: np.ndarray
    theta_tilde: np.ndarray
    V1: float


class NonFiniteState(ArithmeticError):
    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


# --- operations ----------------------------------------------------------------

def split_outputs(y, sys):
    """Partition ``Tbar y`` into ``(z_y1, z_y2)``."""
    y = np.asarray(y, dtype=float)
    if y.shape != (sys.p,):
        raise ValueError(f"output has shape {y.shape}, expected ({sys.p},)")
    if not np.all(np.isfinite(y)):
        raise ValueError("output is not finite")
    zy = sys.Tbar @ y
    return zy[: sys.q], zy[sys.q:]


def init_observer(sys, y0, z2_0=None, theta0=None, K=None, L=5000.0, k_rate=500.0,
                  dead_zone=1e-3, L_max=1e6, diff_L0=1.0):
    """Observer state with the output estimates set to the first measurement."""
    zy1, zy2 = split_outputs(y0, sys)
    z2_0 = np.zeros(sys.nz) if z2_0 is None else np.asarray(z2_0, dtype=float).reshape(sys.nz)
    theta0 = np.zeros(sys.q) if theta0 is None else np.asarray(theta0, dtype=float).reshape(sys.q)
    K = np.zeros((sys.q, sys.q)) if K is None else np.atleast_2d(np.asarray(K, dtype=float))
    ch = StwChannel(phi=0.0, L=L, dead_zone=dead_zone, k_rate=k_rate, L_max=L_max)
    st = ObserverState(
        zhat_y1=zy1.copy(), zhat_y2=zy2.copy(), zhat2=z2_0, theta_hat=theta0,
        ch_y1=(ch,) * sys.q, ch_y2=(ch,) * sys.r,
        diff=tuple(DifferentiatorState(z0=float(v), z1=0.0, L0=diff_L0) for v in zy1),
        K=K,
    )
    st.check(sys)
    return st


def _u(u):
    return np.atleast_1d(np.asarray(u, dtype=float))


def _inject(channels, e, scale, dt):
    mu = np.empty(len(channels))
    out = []
    for i, ch in enumerate(channels):
        en = e[i] / scale[i]
        m, ch = stw_step(ch, en, dt)
        out.append(adapt_gain(ch, en, dt))
        mu[i] = m * scale[i]
    return mu, tuple(out)


def observer_step(st, y, u, dt, sys):
    """Advance the state estimates by one semi-implicit Euler step.

    Injections and nonlinearities are evaluated at the start of the step.
    ``theta_hat`` is not changed here (see :func:`adaptive_param_step`).
    Returns ``(st', mu_y1, mu_y2)`` with the injections in channel units.
    """
    if not dt > 0:
        raise ValueError(f"step dt must be positive, got {dt}")
    zy1, zy2 = split_outputs(y, sys)
    y = np.asarray(y, dtype=float)
    u = _u(u)
    scale = sys.output_scale
    mu1, ch1 = _inject(st.ch_y1, zy1 - st.zhat_y1, scale[: sys.q], dt)
    mu2, ch2 = _inject(st.ch_y2, zy2 - st.zhat_y2, scale[sys.q:], dt)
    d1, d2, d3 = observer_rates(y, st.zhat2, st.theta_hat, u, mu1, mu2,
                                sys.A11b, sys.A12b, sys.A21b, sys.A22b, sys.A21, sys.A22,
                                sys.W_g1, sys.W_g2, sys.g2, sys.Phi1, sys.phi2, sys.params)
    new = replace(st, zhat_y1=st.zhat_y1 + dt * d1, zhat_y2=st.zhat_y2 + dt * d2,
                  zhat2=st.zhat2 + dt * d3, ch_y1=ch1, ch_y2=ch2, steps=st.steps + 1)
    for v in (new.zhat_y1, new.zhat_y2, new.zhat2):
        if not np.all(np.isfinite(v)):
            raise NonFiniteState(f"observer state became non-finite at step {st.steps}",
                                 index=st.steps)
    return new, mu1, mu2


def gain_at(st, y, u, sys, eps_k):
    """``K`` to use at ``(y, u)``: the stored gain when ``Phi1`` is constant,
    otherwise a fresh solution of the gain equation."""
    if sys.phi1_constant:
        return st.K
    from .design import solve_gain_K
    return solve_gain_K(sys.Phi1(y, _u(u), sys.params), sys.gamma_g1, eps_k)


def adaptive_param_step(st, y, u, zy1_dot_est, dt, sys, eps_k=None):
    """``theta_hat' = theta_hat - dt K (model dz_y1 - zy1_dot_est)``.

    ``eps_k`` is only needed when ``Phi1`` varies and ``K`` must be re-solved.
    """
    y = np.asarray(y, dtype=float)
    u = _u(u)
    K = st.K if sys.phi1_constant or eps_k is None else gain_at(st, y, u, sys, eps_k)
    res = param_residual(y, st.zhat2, st.theta_hat, u, np.asarray(zy1_dot_est, dtype=float),
                         sys.A11b, sys.A21b, sys.W_g1, sys.Phi1, sys.params)
    return replace(st, theta_hat=st.theta_hat - dt * (np.asarray(K) @ res), K=K)


def reconstruct_fault(mu_y2, y, u, sys, filter_state, dt):
    """Fault estimate ``Phi2^-1 mu_y2`` and its first-order low-pass.

    The filter is discretized exactly for a held input.  When ``Phi2`` is
    singular or ``|Phi2^-1|`` exceeds ``filter_state.inv_bound`` the sample is
    flagged invalid and the smoothed value is held.
    """
    mu_y2 = np.asarray(mu_y2, dtype=float)
    M = np.atleast_2d(sys.Phi2(np.asarray(y, dtype=float), _u(u), sys.params))
    inv, ok = small_inv(M)
    if not ok or frob(inv) > filter_state.inv_bound:
        nan = np.full(sys.r, np.nan)
        return FaultEstimate(nan, mu_y2, filter_state.smoothed, valid=False), filter_state
    f_hat = inv @ mu_y2
    a = 1.0 - math.exp(-dt / filter_state.tau)
    sm = filter_state.smoothed + a * (f_hat - filter_state.smoothed)
    return FaultEstimate(f_hat, mu_y2, sm, valid=True), replace(filter_state, smoothed=sm)


def error_diagnostics(x, theta, st, sys, P1=None):
    """Error coordinates ``z - zhat`` and ``V1 = e2' P1 e2 + theta_tilde' theta_tilde``.

    ``theta_tilde = theta_hat - theta``.  ``V1`` is NaN when ``P1`` is not given.
    """
    z = sys.to_z(x)
    q, p = sys.q, sys.p
    e_y1 = z[:q] - st.zhat_y1
    e_y2 = z[q:p] - st.zhat_y2
    e2 = z[p:] - st.zhat2
    tt = st.theta_hat - np.atleast_1d(np.asarray(theta, dtype=float))
    V1 = float(e2 @ np.atleast_2d(P1) @ e2 + tt @ tt) if P1 is not None else math.nan
    return ErrorRecord(e_y1, e_y2, e2, tt, V1)


def differentiate_outputs(st, zy1, dt):
    diff = tuple(differentiator_step(d, float(v), dt) for d, v in zip(st.diff, zy1))
    return replace(st, diff=diff), np.array([d.z1 for d in diff])


def update(st, y, u, dt, sys, warmup=DEFAULT_WARMUP, eps_k=None):
    """One full observer update: differentiator, parameter law (after
    ``warmup`` seconds), then the state step.  Returns ``(st', mu_y1, mu_y2)``.

    This is the order used by the simulation loop.
    """
    zy1, _ = split_outputs(y, sys)
    st, zdot = differentiate_outputs(st, zy1, dt)
    if st.steps * dt >= warmup:
        st = adaptive_param_step(st, y, u, zdot, dt, sys, eps_k)
    return observer_step(st, y, u, dt, sys)
