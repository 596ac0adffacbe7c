"""Fixed-step co-simulation of plant and observer, with trace I/O.

The plant is integrated with RK4 and the observer with semi-implicit Euler,
both at the same step.  One step ``k`` (time ``t = k dt``) does:

1. measure ``y`` (optionally with seeded uniform noise);
2. step the differentiator on ``z_y1``;
3. after the warm-up, step the parameter law using ``zhat2`` from the step start;
4. evaluate the injections from the output errors, then adapt the gains;
5. reconstruct and filter the fault;
6. log (every ``decimation`` steps) the step-start estimates, the injections,
   the gains in force and the fault estimate;
7. advance the observer with the new ``theta_hat`` and the plant with inputs
   held over the step.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numba import njit

from . import pemfc
from .config import ScenarioConfig, config_to_dict, dump_config
from .design import DesignCertificate, certify
from .observer import (frob, matvec, observer_rates, param_residual, scalar_gain,
                       small_inv)
from .sosm import adapt_kernel, differentiator_kernel, stw_kernel


class SimulationAbort(RuntimeError):
    def __init__(self, message, index):
        super().__init__(message)
        self.index = index


def _suffix(name, k, count):
    return name if count == 1 else f"{name}_{k + 1}"


def trace_columns(n, p, q, r, m):
    """Column names of a trace for the given dimensions (``m`` plant inputs)."""
    def group(name, count):
        return [_suffix(name, k, count) for k in range(count)]
    cols = ["t"]
    cols += [f"x{i + 1}" for i in range(n)]
    cols += [f"xhat{i + 1}" for i in range(n)]
    cols += group("theta", q) + group("theta_hat", q)
    cols += group("f", r) + group("fhat_raw", r) + group("fhat", r) + group("fhat_valid", r)
    cols += group("u", m)
    cols += [f"y{i + 1}" for i in range(p)]
    cols += group("mu_y1", q) + group("mu_y2", r)
    cols += group("L_y1", q) + group("L_y2", r)
    cols += group("e_y1", q) + group("e_y2", r)
    cols += [f"e2_{i + 1}" for i in range(n - p)]
    cols += group("theta_tilde", q)
    cols += ["V1"]
    return cols


@njit(cache=True)
def _rk4(rhs, x, u, th, f, cpar, dt):
    k1 = rhs(x, u, th, f, cpar)
    k2 = rhs(x + 0.5 * dt * k1, u, th, f, cpar)
    k3 = rhs(x + 0.5 * dt * k2, u, th, f, cpar)
    k4 = rhs(x + dt * k3, u, th, f, cpar)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _advance(times, idx, t):
    while idx + 1 < times.shape[0] and t >= times[idx + 1]:
        idx += 1
    return idx


@njit(cache=True)
def _all_finite(a):
    for v in a:
        if not math.isfinite(v):
            return False
    return True


@njit
def _simulate(x0, n_steps, dt, decim,
              u_t, u_v, th_t, th_v, f_t, f_v, noise,
              rhs, cpar,
              T, Tbar, Tbar_inv, Tinv, q,
              A11b, A12b, A21b, A22b, A21, A22,
              W_g1, W_g2, g2, Phi1, Phi2, phi2, par,
              zy1_0, zy2_0, z2_0, theta0, K0, P1,
              L_init, k_rate, dead_zone, L_max, scale,
              diff_L0, warmup, tau, inv_bound,
              phi1_constant, gamma_g1, eps_k, ncols):
    n = x0.shape[0]
    p = Tbar.shape[0]
    r = p - q
    nz = n - p
    n_log = n_steps // decim + 1
    out = np.full((n_log, ncols), np.nan)

    x = x0.copy()
    zh1 = zy1_0.copy()
    zh2 = zy2_0.copy()
    zh = z2_0.copy()
    theta = theta0.copy()
    K = K0.copy()
    phi_1 = np.zeros(q)
    phi_2 = np.zeros(r)
    L1 = np.full(q, L_init)
    L2 = np.full(r, L_init)
    d0 = zy1_0.copy()
    d1 = np.zeros(q)
    fs = np.zeros(r)
    fraw = np.zeros(r)
    fvalid = 1.0
    a_filt = 1.0 - math.exp(-dt / tau)
    iu = 0
    ith = 0
    ifl = 0
    status = -1
    row = 0

    for k in range(n_steps + 1):
        t = k * dt
        iu = _advance(u_t, iu, t)
        ith = _advance(th_t, ith, t)
        ifl = _advance(f_t, ifl, t)
        u = u_v[iu]
        th = th_v[ith]
        fl = f_v[ifl]

        z_true = matvec(T, x)
        y = matvec(Tbar_inv, z_true[:p])
        if noise.shape[0] > 0:
            y = y + noise[k]
        zy = matvec(Tbar, y)
        zy1 = zy[:q]
        zy2 = zy[q:]

        for i in range(q):
            d0[i], d1[i] = differentiator_kernel(d0[i], d1[i], diff_L0, zy1[i], dt)

        theta_next = theta
        if t >= warmup:
            if not phi1_constant:
                K[0, 0] = scalar_gain(Phi1(y, u, par)[0, 0], gamma_g1, eps_k)
            res = param_residual(y, zh, theta, u, d1, A11b, A21b, W_g1, Phi1, par)
            theta_next = theta - dt * matvec(K, res)

        mu1 = np.empty(q)
        mu2 = np.empty(r)
        L1n = L1.copy()
        L2n = L2.copy()
        for i in range(q):
            en = (zy1[i] - zh1[i]) / scale[i]
            m_, phi_1[i] = stw_kernel(phi_1[i], L1[i], en, dt)
            mu1[i] = m_ * scale[i]
            L1n[i] = adapt_kernel(L1[i], en, dead_zone, k_rate, L_max, dt)
        for i in range(r):
            en = (zy2[i] - zh2[i]) / scale[q + i]
            m_, phi_2[i] = stw_kernel(phi_2[i], L2[i], en, dt)
            mu2[i] = m_ * scale[q + i]
            L2n[i] = adapt_kernel(L2[i], en, dead_zone, k_rate, L_max, dt)

        inv, ok = small_inv(Phi2(y, u, par))
        if ok and frob(inv) <= inv_bound:
            fraw = matvec(inv, mu2)
            fs = fs + a_filt * (fraw - fs)
            fvalid = 1.0
        else:
            fraw = np.full(r, np.nan)
            fvalid = 0.0

        if k % decim == 0:
            c = 0
            out[row, c] = t
            c += 1
            for i in range(n):
                out[row, c + i] = x[i]
            c += n
            zhat = np.concatenate((zh1, zh2, zh))
            xhat = matvec(Tinv, zhat)
            for i in range(n):
                out[row, c + i] = xhat[i]
            c += n
            for i in range(q):
                out[row, c + i] = th[i]
                out[row, c + q + i] = theta[i]
            c += 2 * q
            for i in range(r):
                out[row, c + i] = fl[i]
                out[row, c + r + i] = fraw[i]
                out[row, c + 2 * r + i] = fs[i]
                out[row, c + 3 * r + i] = fvalid
            c += 4 * r
            for i in range(u.shape[0]):
                out[row, c + i] = u[i]
            c += u.shape[0]
            for i in range(p):
                out[row, c + i] = y[i]
            c += p
            for i in range(q):
                out[row, c + i] = mu1[i]
            c += q
            for i in range(r):
                out[row, c + i] = mu2[i]
            c += r
            for i in range(q):
                out[row, c + i] = L1[i]
            c += q
            for i in range(r):
                out[row, c + i] = L2[i]
            c += r
            for i in range(q):
                out[row, c + i] = z_true[i] - zh1[i]
            c += q
            for i in range(r):
                out[row, c + i] = z_true[q + i] - zh2[i]
            c += r
            V = 0.0
            e2 = np.empty(nz)
            for i in range(nz):
                e2[i] = z_true[p + i] - zh[i]
                out[row, c + i] = e2[i]
            c += nz
            for i in range(nz):
                for j in range(nz):
                    V += e2[i] * P1[i, j] * e2[j]
            for i in range(q):
                tt = theta[i] - th[i]
                out[row, c + i] = tt
                V += tt * tt
            c += q
            out[row, c] = V
            row += 1

        if k == n_steps:
            break

        r1, r2, r3 = observer_rates(y, zh, theta_next, u, mu1, mu2,
                                    A11b, A12b, A21b, A22b, A21, A22,
                                    W_g1, W_g2, g2, Phi1, phi2, par)
        zh1 = zh1 + dt * r1
        zh2 = zh2 + dt * r2
        zh = zh + dt * r3
        theta = theta_next
        L1 = L1n
        L2 = L2n
        x = _rk4(rhs, x, u, th, fl, cpar, dt)

        if not (_all_finite(x) and _all_finite(zh1) and _all_finite(zh2)
                and _all_finite(zh) and _all_finite(theta)):
            status = k + 1
            break

    return out[:row], status


@njit(cache=True)
def _simulate_pemfc(x0, n_steps, dt, decim, u_t, u_v, th_t, th_v, f_t, f_v, noise, cpar,
                    T, Tbar, Tbar_inv, Tinv, q, A11b, A12b, A21b, A22b, A21, A22, par,
                    zy1_0, zy2_0, z2_0, theta0, K0, P1,
                    L_init, k_rate, dead_zone, L_max, scale,
                    diff_L0, warmup, tau, inv_bound, phi1_constant, gamma_g1, eps_k, ncols):
    # The slot functions are globals here, so the on-disk cache key holds no
    # function types (numba cannot reliably pickle those).
    return _simulate(x0, n_steps, dt, decim, u_t, u_v, th_t, th_v, f_t, f_v, noise,
                     pemfc.plant_rhs, cpar, T, Tbar, Tbar_inv, Tinv, q,
                     A11b, A12b, A21b, A22b, A21, A22,
                     pemfc._wg1, pemfc._wg2, pemfc._g2, pemfc._Phi1, pemfc._Phi2, pemfc._phi2,
                     par, zy1_0, zy2_0, z2_0, theta0, K0, P1,
                     L_init, k_rate, dead_zone, L_max, scale,
                     diff_L0, warmup, tau, inv_bound, phi1_constant, gamma_g1, eps_k, ncols)


_PEMFC_SLOTS = (pemfc._wg1, pemfc._wg2, pemfc._g2, pemfc._Phi1, pemfc._Phi2, pemfc._phi2)


# --- traces ----------------------------------------------------------------------

@dataclass
class Trace:
    columns: list
    data: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).reshape(-1, len(self.columns))
        self._index = {c: i for i, c in enumerate(self.columns)}

    def __len__(self):
        return self.data.shape[0]

    def __getitem__(self, name):
        try:
            return self.data[:, self._index[name]]
        except KeyError:
            raise KeyError(f"trace has no column {name!r}") from None

    @property
    def t(self):
        return self["t"]

    def window(self, t0, t1):
        """Boolean mask of samples with ``t0 <= t <= t1``."""
        t = self.t
        return (t >= t0) & (t <= t1)


def meta_path(path):
    return Path(path).with_suffix(".meta")


def write_trace(tr, path):
    """CSV with a header line and 17 significant digits, plus a JSON ``.meta`` sidecar."""
    path = Path(path)
    buf = io.StringIO()
    buf.write(",".join(tr.columns) + "\n")
    if len(tr):
        np.savetxt(buf, tr.data, fmt="%.17g", delimiter=",")
    path.write_text(buf.getvalue(), encoding="utf-8")
    meta = dict(tr.meta)
    meta["columns"] = list(tr.columns)
    meta_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                               encoding="utf-8")


class TraceFormatError(ValueError):
    pass


def read_trace(path, required=()):
    """Read a trace written by :func:`write_trace`.

    Raises :class:`TraceFormatError` naming the line of a malformed row or
    any column of ``required`` missing from the header.
    """
    path = Path(path)
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise TraceFormatError(f"{path}: empty file (no header)")
    columns = rows[0]
    missing = [c for c in required if c not in columns]
    if missing:
        raise TraceFormatError(f"{path}: missing column(s) {', '.join(missing)}")
    data = np.empty((len(rows) - 1, len(columns)))
    for i, row in enumerate(rows[1:]):
        if len(row) != len(columns):
            raise TraceFormatError(f"{path}:{i + 2}: expected {len(columns)} fields, "
                                   f"got {len(row)}")
        try:
            data[i] = [float(v) for v in row]
        except ValueError:
            raise TraceFormatError(f"{path}:{i + 2}: non-numeric field") from None
    meta = {}
    mp = meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text(encoding="utf-8"))
        meta.pop("columns", None)
    return Trace(columns, data, meta)


# --- scenario ----------------------------------------------------------------------

@dataclass
class Scenario:
    """Everything resolved from a config before the loop runs."""

    cfg: ScenarioConfig
    constants: pemfc.PemfcConstants
    system: object
    certificate: DesignCertificate
    x0: np.ndarray
    motor_current: pemfc.Schedule


def _schedule_arrays(s):
    return np.asarray(s.times, dtype=float), np.asarray(s.values, dtype=float).reshape(-1, 1)


def prepare(cfg):
    """Derive constants, operating point and design certificate for ``cfg``."""
    c = pemfc.derive_constants(cfg.plant)
    prof = cfg.profiles
    xi0 = prof.current(0.0)
    if prof.motor_current is None:
        x_eq, u_eq = pemfc.equilibrium(c, xi0, x1=prof.x1_setpoint)
        motor = pemfc.Schedule((0.0,), (float(u_eq),))
    else:
        motor = prof.motor_current
        x_eq = None
    if prof.x0 is not None:
        x0 = np.array(prof.x0, dtype=float)
    elif x_eq is not None:
        x0 = x_eq
    else:
        x0, _ = pemfc.equilibrium(c, xi0, u=motor(0.0))
    d = cfg.design
    box = pemfc.OperatingBox()
    lip = pemfc.lipschitz_constants(c, d.H, box, safety=d.safety)
    y_nom = np.array([x0[0], x0[3]])
    sysd = pemfc.as_system_description(c, d.H, lipschitz=lip,
                                       nominal=(y_nom, np.array([motor(0.0)])))
    sysd.output_scale = np.asarray(cfg.observer.output_scale, dtype=float)
    cert = certify(sysd, d.eps_r, d.eps_k)
    return Scenario(cfg, c, sysd, cert, x0, motor)


def run_scenario(cfg, scenario=None, require_accepted=True):
    """Simulate ``cfg`` and return a :class:`Trace`.

    Raises :class:`stwobs.design.InfeasibleDesign` (from the solvers) or
    :class:`SimulationAbort` with the failing step index.
    """
    from .design import InfeasibleDesign

    sc = scenario if scenario is not None else prepare(cfg)
    cert = sc.certificate
    if require_accepted and not cert.accepted:
        raise InfeasibleDesign("design certificate rejected\n" + cert.report())
    sysd = sc.system
    s, o = cfg.simulation, cfg.observer
    n_steps = int(round(s.duration / s.dt))
    if n_steps < 1:
        raise ValueError("duration shorter than one step")

    if s.noise > 0:
        rng = np.random.default_rng(s.seed)
        noise = rng.uniform(-s.noise, s.noise, size=(n_steps + 1, sysd.p))
    else:
        noise = np.zeros((0, sysd.p))

    x0 = np.asarray(sc.x0, dtype=float)
    y0 = sysd.output(x0)
    if noise.shape[0]:
        y0 = y0 + noise[0]
    zy = sysd.Tbar @ y0
    cols = trace_columns(sysd.n, sysd.p, sysd.q, sysd.r, 1)
    u_t, u_v = _schedule_arrays(sc.motor_current)
    th_t, th_v = _schedule_arrays(cfg.profiles.current)
    f_t, f_v = _schedule_arrays(cfg.profiles.fault)

    head = (x0, n_steps, s.dt, s.decimation, u_t, u_v, th_t, th_v, f_t, f_v, noise)
    mats = (sysd.T, sysd.Tbar, np.linalg.inv(sysd.Tbar), np.linalg.inv(sysd.T), sysd.q,
            sysd.A11b, sysd.A12b, sysd.A21b, sysd.A22b, sysd.A21, sysd.A22)
    slots = (sysd.W_g1, sysd.W_g2, sysd.g2, sysd.Phi1, sysd.Phi2, sysd.phi2)
    tail = (
        zy[: sysd.q].copy(), zy[sysd.q:].copy(), np.asarray(o.z2_0, dtype=float),
        np.array([o.theta0], dtype=float), np.ascontiguousarray(cert.K, dtype=float),
        np.ascontiguousarray(cert.P1, dtype=float),
        o.L_init, o.k_rate, o.dead_zone, o.L_max, np.asarray(sysd.output_scale, dtype=float),
        o.diff_L0, o.warmup, o.filter_tau, o.inv_bound,
        bool(sysd.phi1_constant), float(sysd.gamma_g1), float(cfg.design.eps_k), len(cols),
    )
    if slots == _PEMFC_SLOTS:
        data, status = _simulate_pemfc(*head, sc.constants, *mats, sysd.params, *tail)
    else:
        data, status = _simulate(*head, pemfc.plant_rhs, sc.constants, *mats, *slots,
                                 sysd.params, *tail)
    meta = scenario_meta(sc)
    meta["status"] = "ok" if status < 0 else f"aborted at step {status}"
    tr = Trace(cols, data, meta)
    if status >= 0:
        raise _abort(f"non-finite state at step {status} (t = {status * s.dt:.6g} s)", status, tr)
    return tr


def _abort(message, index, trace):
    exc = SimulationAbort(message, index)
    exc.trace = trace
    return exc


def scenario_meta(sc):
    c = sc.constants
    cert = sc.certificate
    return {
        "config": config_to_dict(sc.cfg),
        "config_text": dump_config(sc.cfg),
        "constants": {k: float(v) for k, v in c._asdict().items()},
        "x0": [float(v) for v in sc.x0],
        "motor_current": [list(p) for p in sc.motor_current.pairs()],
        "certificate": {
            "P1": cert.P1.tolist(), "K": cert.K.tolist(), "H": cert.H,
            "eps_r": cert.eps_r, "eps_k": cert.eps_k, "gamma2": cert.gamma2,
            "gamma_g1": cert.gamma_g1, "gamma_g2": cert.gamma_g2,
            "residual_riccati": cert.residual_riccati, "residual_gain": cert.residual_gain,
            "q_min_eig": cert.q_min_eig, "accepted": bool(cert.accepted),
        },
    }


def trace_output_path(cfg, out_dir):
    out = Path(out_dir)
    os.makedirs(out, exist_ok=True)
    return out / cfg.output.trace
