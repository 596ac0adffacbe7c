"""Reduced-order PEM fuel cell air-supply model.

States ``x = (x1, x2, x3, x4)``: cathode total pressure [Pa], nitrogen partial
pressure [Pa], compressor speed [rad/s], supply-manifold pressure [Pa].
Inputs: motor current ``u`` [A], stack current ``xi`` [A] (the unknown
parameter of the observer) and the leak fault ``f`` [kg/s] leaving the supply
manifold.  Measured outputs are ``(x1, x4)``.

Constants ``c1 .. c20`` follow the usual lumped-parameter reduction of the
Pukrushpan model.  There is no ``c5`` constant (the fault weight depends on
``x4``, see :func:`fault_weight`) and ``c6``, ``c7`` do not occur.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np
from numba import njit

from .design import estimate_lipschitz
from .observer import SystemDescription


@dataclass(frozen=True)
class PhysicalParams:
    n_cells: float = 90.0
    R: float = 8.314                 # J/(mol K)
    R_a: float = 286.9               # J/(kg K), not used by the reduced model
    p_atm: float = 1.01325e5         # Pa
    T_atm: float = 298.15            # K
    T_fc: float = 353.15             # K
    F: float = 96485.0               # C/mol
    M_a: float = 28.9644e-3          # kg/mol
    M_O2: float = 32e-3
    M_N2: float = 28e-3
    M_v: float = 18.02e-3            # not used by the reduced model
    C_D: float = 0.0038
    A_T: float = 0.00138             # m^2
    gamma: float = 1.4
    J_cp: float = 671.9e-5           # kg m^2
    motor_friction: float = 0.00136  # not used by the reduced model
    k_t: float = 0.31                # N m/A
    C_p: float = 1004.0              # J/(kg K)
    eta_cp: float = 0.8
    eta_cm: float = 0.98
    V_ca: float = 0.0015             # m^3
    V_sm: float = 0.003              # m^3
    V_cpr: float = 5e-4              # m^3 per turn
    k_ca_in: float = 0.3629e-5       # kg/(Pa s)
    k_ca_out: float = 0.76e-4        # kg/(Pa s), not used by the reduced model
    rho_a: float = 1.23              # kg/m^3
    x_O2: float = 0.23
    # not tabulated; see README "Model gaps"
    P_sat: float = 3.14e3            # Pa, water saturation pressure near T_atm
    omega_atm: float = 0.0           # humidity ratio of inlet air
    eta_vc: float = 1.0              # compressor volumetric efficiency
    kappa: float = 28.9644e-3        # kg/mol, divisor of the cathode outflow term

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "omega_atm":
                if v < 0:
                    raise ValueError(f"omega_atm must be >= 0, got {v}")
            elif not v > 0:
                raise ValueError(f"{f.name} must be positive, got {v}")
        if not self.gamma > 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        for name in ("eta_cp", "eta_cm", "eta_vc", "x_O2"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in (0, 1], got {getattr(self, name)}")

    def as_dict(self):
        return asdict(self)


class PemfcConstants(NamedTuple):
    c1: float
    c2: float
    c3: float
    c4: float
    c8: float
    c9: float
    c10: float
    c11: float
    c12: float
    c13: float
    c14: float
    c15: float
    c16: float
    c17: float
    c18: float
    c19: float
    c20: float
    A: float
    kappa: float

    def c5(self, x4):
        return fault_weight(x4, self)


def derive_constants(pp: PhysicalParams) -> PemfcConstants:
    RT = pp.R * pp.T_fc
    g = pp.gamma
    nozzle = pp.C_D * pp.A_T / math.sqrt(RT)
    return PemfcConstants(
        c1=RT * pp.k_ca_in / (pp.M_O2 * pp.V_ca) * (pp.x_O2 / (1 + pp.omega_atm)),
        c2=pp.P_sat,
        c3=RT / pp.V_ca,
        c4=RT * pp.n_cells / (4 * pp.V_ca * pp.F),
        c8=RT * pp.k_ca_in / (pp.M_N2 * pp.V_ca) * ((1 - pp.x_O2) / (1 + pp.omega_atm)),
        c9=pp.eta_cm * pp.k_t / pp.J_cp,
        c10=pp.C_p * pp.T_atm / (pp.J_cp * pp.eta_cp),
        c11=pp.p_atm,
        c12=(g - 1) / g,
        c13=pp.eta_cm * pp.k_t / pp.J_cp,
        c14=g * pp.R * pp.T_atm / (pp.M_a * pp.V_sm),
        c15=1 / pp.eta_cp,
        c16=pp.k_ca_in,
        c17=nozzle * math.sqrt(2 * g / (g - 1)),
        c18=1 / g,
        c19=(2 / (g + 1)) ** (g / (g - 1)),
        c20=nozzle * math.sqrt(g) * (2 / (g + 1)) ** ((g + 1) / (2 * (g - 1))),
        A=pp.eta_vc * pp.V_cpr * pp.rho_a / (2 * math.pi),
        kappa=pp.kappa,
    )


# --- model equations (jit-compiled; NaN marks a domain violation) -----------

@njit(cache=True)
def _psi(x1, c):
    r = c.c11 / x1
    if r > c.c19:
        rad = 1.0 - r**c.c12
        if rad < 0.0 or x1 <= 0.0:
            return math.nan
        return c.c17 * x1 * r**c.c18 * math.sqrt(rad)
    return c.c20 * x1


def psi(x1, c):
    """Cathode exit mass flow [kg/s]: subsonic nozzle branch, or choked
    (linear in ``x1``) once ``c11/x1 <= c19``."""
    if not x1 >= c.c11:
        raise ValueError(f"psi undefined for cathode pressure x1={x1!r} Pa below c11={c.c11} Pa")
    return _psi(float(x1), c)


@njit(cache=True)
def compressor_flow(x3, c):
    return c.A * x3


@njit(cache=True)
def fault_weight(x4, c):
    """Input weight of the leak fault on the manifold pressure (negative)."""
    return -c.c14 * (1.0 + c.c15 * ((x4 / c.c11) ** c.c12 - 1.0))


@njit(cache=True)
def outflow_rate(x1, c):
    """``c3 psi(x1) / (kappa x1)``: the rate at which cathode gas is vented [1/s]."""
    return c.c3 * _psi(x1, c) / (c.kappa * x1)


@njit(cache=True)
def _compressor_load(x4, c):
    # c10/x3 * [(x4/c11)^c12 - 1] * h3(x3) with h3 linear, so the 1/x3 cancels
    return c.c10 * c.A * ((x4 / c.c11) ** c.c12 - 1.0)


@njit(cache=True)
def plant_deriv(x, u, xi, f, c):
    x1, x2, x3, x4 = x[0], x[1], x[2], x[3]
    out = outflow_rate(x1, c)
    dx = np.empty(4)
    dx[0] = -(c.c1 + c.c8) * (x1 - x4) - (x1 - c.c2) * out - c.c4 * xi
    dx[1] = -c.c8 * (x1 - x4) - x2 * out
    dx[2] = -c.c9 * x3 - _compressor_load(x4, c) + c.c13 * u
    dx[3] = (c.c14 * (1.0 + c.c15 * ((x4 / c.c11) ** c.c12 - 1.0))
             * (compressor_flow(x3, c) + c.c16 * (x1 - x4)) + fault_weight(x4, c) * f)
    return dx


@njit(cache=True)
def plant_rhs(x, u, theta, f, c):
    """Generic plant signature used by the simulation kernel."""
    return plant_deriv(x, u[0], theta[0], f[0], c)


@njit(cache=True)
def rk4_step(x, u, xi, f, c, dt):
    k1 = plant_deriv(x, u, xi, f, c)
    k2 = plant_deriv(x + 0.5 * dt * k1, u, xi, f, c)
    k3 = plant_deriv(x + 0.5 * dt * k2, u, xi, f, c)
    k4 = plant_deriv(x + dt * k3, u, xi, f, c)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


# --- profiles ----------------------------------------------------------------

FAULT_STEP_TIME = 50.0
FAULT_STEP_SIZE = 3e-3  # kg/s


@dataclass(frozen=True)
class Schedule:
    """Piecewise-constant signal: value ``values[i]`` holds from ``times[i]``
    until the next breakpoint.  ``times[0]`` must be 0."""

    times: tuple
    values: tuple

    def __post_init__(self):
        if len(self.times) == 0:
            raise ValueError("schedule is empty")
        if len(self.times) != len(self.values):
            raise ValueError("schedule times and values differ in length")
        if self.times[0] != 0:
            raise ValueError(f"schedule must start at t=0, starts at {self.times[0]}")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("schedule times must be strictly increasing")

    @classmethod
    def from_pairs(cls, pairs):
        pairs = list(pairs)
        return cls(tuple(float(t) for t, _ in pairs), tuple(float(v) for _, v in pairs))

    def pairs(self):
        return list(zip(self.times, self.values))

    def __call__(self, t):
        if t < 0:
            raise ValueError(f"time must be >= 0, got {t}")
        i = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[i]


DEFAULT_CURRENT = Schedule((0.0, 30.0, 70.0, 110.0), (100.0, 250.0, 450.0, 180.0))
DEFAULT_FAULT = Schedule((0.0, FAULT_STEP_TIME), (0.0, FAULT_STEP_SIZE))
CURRENT_LIMITS = (0.0, 500.0)


def fault_profile(t, schedule=DEFAULT_FAULT):
    """Leak fault [kg/s]; by default 0 before t = 50 s and 3e-3 from then on."""
    return schedule(t)


def current_profile(t, schedule=DEFAULT_CURRENT):
    """Stack current [A] from a piecewise-constant schedule."""
    return schedule(t)


def check_current_schedule(schedule):
    lo, hi = CURRENT_LIMITS
    bad = [v for v in schedule.values if not lo <= v <= hi]
    if bad:
        raise ValueError(f"stack current values {bad} outside [{lo}, {hi}] A")


# --- operating point ---------------------------------------------------------

def equilibrium(c, xi, u=None, x1=None, x_guess=None, tol=1e-10, max_iter=100):
    """Steady state of the plant at stack current ``xi`` without fault.

    Give exactly one of ``u`` (motor current, solve for all four states) or
    ``x1`` (cathode pressure set-point, solve for ``x2, x3, x4`` and ``u``).
    Damped Newton with a finite-difference Jacobian on a scaled residual.
    Returns ``(x, u)``.
    """
    if (u is None) == (x1 is None):
        raise ValueError("give exactly one of u or x1")
    scale_x = np.array([1e5, 1e5, 1e2, 1e5])
    scale_f = np.array([1e5, 1e5, 1e3, 1e6])

    if x_guess is None:
        p = 2e5 if x1 is None else x1
        x_guess = np.array([p, 0.75 * p, 200.0, p + 3e3])
    x_guess = np.asarray(x_guess, dtype=float)

    if u is not None:
        def unpack(v):
            return v * scale_x, u
        v = x_guess / scale_x
    else:
        def unpack(v):
            x = np.array([x1, v[0] * scale_x[1], v[1] * scale_x[2], v[2] * scale_x[3]])
            return x, v[3] * 100.0
        v = np.array([x_guess[1] / scale_x[1], x_guess[2] / scale_x[2], x_guess[3] / scale_x[3], 2.0])

    def resid(v):
        x, uu = unpack(v)
        return plant_deriv(x, uu, xi, 0.0, c) / scale_f

    r = resid(v)
    for _ in range(max_iter):
        if np.linalg.norm(r) < tol:
            break
        J = np.empty((4, 4))
        for j in range(4):
            h = 1e-7 * max(1.0, abs(v[j]))
            dv = np.zeros(4)
            dv[j] = h
            J[:, j] = (resid(v + dv) - resid(v - dv)) / (2 * h)
        step = np.linalg.solve(J, -r)
        lam = 1.0
        while lam > 1e-6:
            trial = v + lam * step
            x_t, _ = unpack(trial)
            if x_t[0] >= c.c11 and np.all(x_t > 0):
                r_t = resid(trial)
                if np.all(np.isfinite(r_t)) and np.linalg.norm(r_t) < np.linalg.norm(r):
                    break
            lam *= 0.5
        else:
            raise RuntimeError("equilibrium search stalled")
        v, r = trial, r_t
    else:
        raise RuntimeError(f"equilibrium search did not converge (|r|={np.linalg.norm(r):.3e})")
    return unpack(v)


# --- observer instantiation --------------------------------------------------

@njit(cache=True)
def _wg1(y, z2, u, par):
    c = par[0]
    return np.array([-(y[0] - c.c2) * outflow_rate(y[0], c)])


@njit(cache=True)
def _wg2(y, z2, u, par):
    c = par[0]
    return np.array([c.c14 * c.c15 * (y[1] / c.c11) ** c.c12
                     * (compressor_flow(z2[1], c) + c.c16 * (y[0] - y[1]))])


@njit(cache=True)
def _g2(y, z2, u, par):
    c, H = par[0], par[1]
    return np.array([z2[0] * (H - outflow_rate(y[0], c)),
                     -_compressor_load(y[1], c) + c.c13 * u[0]])


@njit(cache=True)
def _Phi1(y, u, par):
    return np.array([[-par[0].c4]])


@njit(cache=True)
def _Phi2(y, u, par):
    return np.array([[fault_weight(y[1], par[0])]])


@njit(cache=True)
def _phi2(y, u, par):
    return np.zeros((2, 1))


# x = (x1, x2, x3, x4) -> z = (z_y1, z_y2, z2) = (x1, x4, x2, x3)
STATE_PERMUTATION = np.array([[1.0, 0, 0, 0], [0, 0, 0, 1.0], [0, 1.0, 0, 0], [0, 0, 1.0, 0]])


@dataclass(frozen=True)
class OperatingBox:
    """Region over which Lipschitz constants are sampled."""

    p_min: float = 1.2e5
    p_max: float = 3.0e5
    speed_min: float = 100.0
    speed_max: float = 1257.0
    u_min: float = 0.0
    u_max: float = 400.0
    n_grid: int = 9


def lipschitz_constants(c, H, box=OperatingBox(), safety=1.2, seed=0):
    """Sampled Lipschitz constants ``(gamma2, gamma_g1, gamma_g2)`` in ``z2``."""
    grid = np.linspace(box.p_min, box.p_max, box.n_grid)
    ys = [np.array([a, b]) for a in grid for b in grid]
    us = [np.array([box.u_min]), np.array([box.u_max])]
    lo = np.array([0.0, box.speed_min])
    hi = np.array([box.p_max, box.speed_max])
    par = (c, float(H))
    kw = dict(params=par, safety=safety, seed=seed, n_dirs=8)
    return (estimate_lipschitz(_g2, ys, us, lo, hi, **kw),
            estimate_lipschitz(_wg1, ys, us, lo, hi, **kw),
            estimate_lipschitz(_wg2, ys, us, lo, hi, **kw))


def as_system_description(c, H, lipschitz=None, box=OperatingBox(), nominal=None):
    """Observer-form description of the plant with ``z_y1 = x1``,
    ``z_y2 = x4``, ``z2 = (x2, x3)`` and ``theta = xi``.

    ``lipschitz`` overrides the sampled ``(gamma2, gamma_g1, gamma_g2)``.
    """
    if not H > 0:
        raise ValueError(f"H must be positive, got {H}")
    if lipschitz is None:
        lipschitz = lipschitz_constants(c, H, box)
    g2, gg1, gg2 = lipschitz
    k = c.c14 * (1.0 - c.c15)
    if nominal is None:
        nominal = (np.array([2.5e5, 2.53e5]), np.array([200.0]))
    return SystemDescription(
        n=4, p=2, q=1, r=1,
        Tbar=np.eye(2),
        T=STATE_PERMUTATION.copy(),
        H=float(H),
        A11b=np.array([[-(c.c1 + c.c8), c.c1 + c.c8]]),
        A12b=np.array([[k * c.c16, -k * c.c16]]),
        A21b=np.zeros((1, 2)),
        A22b=np.array([[0.0, k * c.A]]),
        A21=np.array([[-c.c8, c.c8], [0.0, 0.0]]),
        A22=np.diag([-float(H), -c.c9]),
        W_g1=_wg1, W_g2=_wg2, g2=_g2, Phi1=_Phi1, Phi2=_Phi2, phi2=_phi2,
        params=(c, float(H)),
        gamma2=float(g2), gamma_g1=float(gg1), gamma_g2=float(gg2),
        phi1_constant=True,
        output_scale=np.array([1e3, 1e3]),
        nominal=nominal,
        state_names=("x1", "x2", "x3", "x4"),
        output_names=("y1", "y2"),
    )
