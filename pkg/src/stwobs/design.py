"""Observer design conditions: Riccati margin, adaptive-law gain, Q matrix.

Everything here is a pure function of small dense matrices.  The PEMFC
case only ever needs the scalar or diagonal paths, but the general ones are
kept so that other plants can be certified with the same code.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import is_hurwitz, jacobi_eigh, lyapunov

RESIDUAL_RTOL = 1e-8


class InfeasibleDesign(ValueError):
    """A design equation has no admissible solution for the given margins."""


def riccati_residual(A22, gamma2, eps_r, P1):
    A22 = np.atleast_2d(A22)
    n = A22.shape[0]
    R = A22.T @ P1 + P1 @ A22 + gamma2**2 * P1 @ P1 + (2.0 + eps_r) * np.eye(n)
    return float(np.linalg.norm(R))


def gain_residual(Phi1, gamma_g1, eps_k, K):
    Phi1 = np.atleast_2d(Phi1)
    q = Phi1.shape[0]
    R = K @ Phi1 + Phi1.T @ K.T - gamma_g1**2 * K @ K.T - eps_k * np.eye(q)
    return float(np.linalg.norm(R))


def _stable_root(a, g2, c):
    """Smaller positive root of ``g2*P**2 + 2*a*P + c = 0`` for ``a < 0``.

    Written as ``c / (-a + sqrt(a**2 - g2*c))`` to avoid cancellation.
    """
    disc = a * a - g2 * c
    if disc < 0:
        return None, disc
    return c / (-a + np.sqrt(disc)), disc


def solve_riccati(A22, gamma2, eps_r=0.1, max_iter=100):
    """Symmetric positive-definite ``P1`` solving
    ``A22.T P1 + P1 A22 + gamma2**2 P1 P1 + (2 + eps_r) I = 0``.

    Lyapunov solve when ``gamma2 == 0``; entrywise stabilizing root when
    ``A22`` is diagonal; otherwise Newton's method from the Lyapunov solution.
    Raises :class:`InfeasibleDesign` when no positive-definite solution is found.
    """
    A22 = np.atleast_2d(np.asarray(A22, dtype=float))
    if gamma2 < 0:
        raise ValueError(f"gamma2 must be >= 0, got {gamma2}")
    if eps_r < 0:
        raise ValueError(f"eps_r must be >= 0, got {eps_r}")
    if not is_hurwitz(A22):
        raise InfeasibleDesign("A22 is not Hurwitz")
    n = A22.shape[0]
    c = 2.0 + eps_r
    g2 = gamma2**2

    if g2 == 0.0:
        P = lyapunov(A22, c * np.eye(n))
    elif np.count_nonzero(A22 - np.diag(np.diag(A22))) == 0:
        P = np.zeros((n, n))
        for i in range(n):
            a = A22[i, i]
            root, disc = _stable_root(a, g2, c)
            if root is None:
                raise InfeasibleDesign(
                    f"Riccati infeasible on entry {i}: A22[{i},{i}]^2 - gamma2^2*(2+eps_r)"
                    f" = {a * a:.6g} - {g2 * c:.6g} = {disc:.6g} < 0"
                )
            P[i, i] = root
    else:
        P = lyapunov(A22, c * np.eye(n))
        for _ in range(max_iter):
            R = A22.T @ P + P @ A22 + g2 * P @ P + c * np.eye(n)
            if np.linalg.norm(R) <= 1e-13 * max(1.0, np.linalg.norm(P)):
                break
            Acl = A22 + g2 * P
            if not is_hurwitz(Acl):
                raise InfeasibleDesign("Riccati Newton iterate lost stability of A22 + gamma2^2 P1")
            P = P + lyapunov(Acl, R)
            P = 0.5 * (P + P.T)
        else:
            raise InfeasibleDesign(f"Riccati Newton iteration did not converge in {max_iter} steps")

    if jacobi_eigh(P)[0][0] <= 0:
        raise InfeasibleDesign("Riccati solution is not positive definite")
    return P


def solve_gain_K(Phi1, gamma_g1, eps_k=0.01, max_iter=100):
    """Adaptive-law gain ``K`` solving
    ``K Phi1 + Phi1.T K.T - gamma_g1**2 K K.T - eps_k I = 0``.

    For ``q = 1`` the root of smaller magnitude is returned (it carries the
    sign of ``Phi1``).  For ``q > 1`` we look for ``K = S Phi1^{-1}`` with
    ``S`` symmetric and run Newton on ``2 S - gamma_g1**2 S M S = eps_k I``,
    ``M = Phi1^{-1} Phi1^{-T}``, starting from ``S = eps_k/2 I``.
    """
    Phi1 = np.atleast_2d(np.asarray(Phi1, dtype=float))
    q = Phi1.shape[0]
    if eps_k <= 0:
        raise ValueError(f"eps_k must be positive, got {eps_k}")
    if gamma_g1 < 0:
        raise ValueError(f"gamma_g1 must be >= 0, got {gamma_g1}")
    if abs(np.linalg.det(Phi1)) == 0.0:
        raise InfeasibleDesign("Phi1 is singular")
    g2 = gamma_g1**2

    if q == 1:
        phi = Phi1[0, 0]
        if g2 == 0.0:
            k = eps_k / (2.0 * phi)
        else:
            disc = phi * phi - g2 * eps_k
            if disc < 0:
                raise InfeasibleDesign(
                    f"gain equation infeasible: Phi1^2 - gamma_g1^2*eps_k"
                    f" = {phi * phi:.6g} - {g2 * eps_k:.6g} = {disc:.6g} < 0"
                )
            k = eps_k / (phi + np.copysign(np.sqrt(disc), phi))
        K = np.array([[k]])
    else:
        Pinv = np.linalg.inv(Phi1)
        M = Pinv @ Pinv.T
        S = 0.5 * eps_k * np.eye(q)
        for _ in range(max_iter):
            R = 2.0 * S - g2 * S @ M @ S - eps_k * np.eye(q)
            if np.linalg.norm(R) <= 1e-13 * max(1.0, np.linalg.norm(S)):
                break
            B = np.eye(q) - g2 * M @ S
            try:
                S = S + lyapunov(B, R)
            except np.linalg.LinAlgError as exc:
                raise InfeasibleDesign("gain equation Newton step is singular") from exc
            S = 0.5 * (S + S.T)
        else:
            raise InfeasibleDesign(f"gain equation Newton iteration did not converge in {max_iter} steps")
        K = S @ Pinv

    sym = K @ Phi1 + Phi1.T @ K.T
    if jacobi_eigh(sym)[0][0] <= 0:
        raise InfeasibleDesign("K Phi1 + Phi1^T K^T is not positive definite")
    return K


def build_Q(P1, phi2, A21bar, K, eps_r, eps_k):
    """Assemble the block matrix whose positive definiteness certifies the
    exponential decay of ``(e2, theta_tilde)``.  Returns ``(Q, min_eig)``."""
    P1 = np.atleast_2d(P1)
    K = np.atleast_2d(K)
    nz, q = P1.shape[0], K.shape[0]
    off = P1 @ np.reshape(phi2, (nz, q)) - np.reshape(A21bar, (q, nz)).T @ K.T
    Q = np.block([[eps_r * np.eye(nz), off], [off.T, eps_k * np.eye(q)]])
    return Q, float(jacobi_eigh(Q)[0][0])


def lyapunov_value(e2, theta_tilde, P1):
    """``e2' P1 e2 + theta_tilde' theta_tilde``."""
    e2 = np.atleast_1d(np.asarray(e2, dtype=float))
    th = np.atleast_1d(np.asarray(theta_tilde, dtype=float))
    return float(e2 @ np.atleast_2d(P1) @ e2 + th @ th)


@dataclass
class DesignCertificate:
    P1: np.ndarray
    K: np.ndarray
    H: float
    eps_r: float
    eps_k: float
    gamma2: float
    gamma_g1: float
    gamma_g2: float
    Q: np.ndarray
    residual_riccati: float
    residual_gain: float
    q_min_eig: float
    notes: list = field(default_factory=list)

    @property
    def riccati_ok(self):
        return self.residual_riccati < RESIDUAL_RTOL * max(1.0, np.linalg.norm(self.P1))

    @property
    def gain_ok(self):
        return self.residual_gain < RESIDUAL_RTOL * max(1.0, np.linalg.norm(self.K))

    @property
    def accepted(self):
        return (self.riccati_ok and self.gain_ok and self.q_min_eig > 0
                and jacobi_eigh(self.P1)[0][0] > 0)

    def report(self):
        fmt = lambda a: np.array2string(np.asarray(a), precision=10, separator=", ")
        P_eigs = jacobi_eigh(self.P1)[0]
        Q_eigs = jacobi_eigh(self.Q)[0]
        lines = [
            "design certificate",
            f"  H                 = {self.H:.10g}",
            f"  eps_r             = {self.eps_r:.10g}",
            f"  eps_k             = {self.eps_k:.10g}",
            f"  gamma2            = {self.gamma2:.10g}",
            f"  gamma_g1          = {self.gamma_g1:.10g}",
            f"  gamma_g2          = {self.gamma_g2:.10g}",
            f"  P1                = {fmt(self.P1)}",
            f"  eig(P1)           = {fmt(P_eigs)}",
            f"  K                 = {fmt(self.K)}",
            f"  Riccati residual  = {self.residual_riccati:.3e} ({'ok' if self.riccati_ok else 'FAIL'})",
            f"  gain residual     = {self.residual_gain:.3e} ({'ok' if self.gain_ok else 'FAIL'})",
            f"  Q                 = {fmt(self.Q)}",
            f"  eig(Q)            = {fmt(Q_eigs)}",
            f"  min eig(Q)        = {self.q_min_eig:.10g}",
            f"  verdict           : Q {'is' if self.q_min_eig > 0 else 'is NOT'} positive definite;"
            f" certificate {'ACCEPTED' if self.accepted else 'REJECTED'}",
        ]
        lines += [f"  note: {n}" for n in self.notes]
        return "\n".join(lines)


def certify(sys, eps_r=0.1, eps_k=0.01, points=None):
    """Solve and check all design conditions for a system description.

    ``points`` is an iterable of ``(y, u)`` pairs on which the pointwise
    conditions are evaluated; it defaults to ``[sys.nominal]``.  ``K`` and
    ``Q`` in the certificate are the values at the first point; the reported
    ``q_min_eig`` is the minimum over all points.
    """
    points = list(points) if points is not None else [sys.nominal]
    P1 = solve_riccati(sys.A22, sys.gamma2, eps_r)
    res_r = riccati_residual(sys.A22, sys.gamma2, eps_r, P1)

    K0 = Q0 = None
    res_k = 0.0
    qmin = np.inf
    for y, u in points:
        Phi1 = sys.Phi1(y, u, sys.params)
        K = solve_gain_K(Phi1, sys.gamma_g1, eps_k)
        res_k = max(res_k, gain_residual(Phi1, sys.gamma_g1, eps_k, K))
        Q, m = build_Q(P1, sys.phi2(y, u, sys.params), sys.A21b, K, eps_r, eps_k)
        if K0 is None:
            K0, Q0 = K, Q
        qmin = min(qmin, m)

    notes = []
    if len(points) > 1:
        notes.append(f"pointwise conditions checked on {len(points)} (y, u) samples")
    return DesignCertificate(
        P1=P1, K=K0, H=float(sys.H), eps_r=eps_r, eps_k=eps_k,
        gamma2=sys.gamma2, gamma_g1=sys.gamma_g1, gamma_g2=sys.gamma_g2,
        Q=Q0, residual_riccati=res_r, residual_gain=res_k, q_min_eig=float(qmin),
        notes=notes,
    )


def estimate_lipschitz(fn, ys, us, z2_lo, z2_hi, params=None, n_dirs=64, rel_step=1e-6,
                       safety=1.2, seed=0):
    """Estimate the Lipschitz constant of ``fn(y, z2, u, params)`` in ``z2``.

    Directional finite differences are sampled at random points of the box
    ``[z2_lo, z2_hi]`` for every ``(y, u)`` pair; the largest ratio, times
    ``safety``, is returned.
    """
    rng = np.random.default_rng(seed)
    lo = np.asarray(z2_lo, dtype=float)
    hi = np.asarray(z2_hi, dtype=float)
    width = hi - lo
    best = 0.0
    for y in ys:
        for u in us:
            for _ in range(n_dirs):
                z = lo + rng.random(lo.shape) * width
                d = rng.normal(size=lo.shape) * width
                d *= rel_step / np.linalg.norm(d / np.where(width > 0, width, 1.0))
                num = np.linalg.norm(fn(y, z + d, u, params) - fn(y, z - d, u, params))
                best = max(best, num / (2.0 * np.linalg.norm(d)))
            # axis directions catch slopes that random directions underweight
            for i in range(lo.size):
                z = lo + rng.random(lo.shape) * width
                d = np.zeros_like(lo)
                d[i] = rel_step * (width[i] if width[i] > 0 else 1.0)
                num = np.linalg.norm(fn(y, z + d, u, params) - fn(y, z - d, u, params))
                best = max(best, num / (2.0 * d[i]))
    return safety * best


def smallest_feasible_H(build, grid, eps_r=0.1):
    """First ``H`` in ``grid`` for which the Riccati equation is solvable.

    ``build(H)`` must return ``(A22, gamma2)`` for that gain.  Returns
    ``None`` when the whole grid is infeasible.
    """
    for H in grid:
        A22, gamma2 = build(H)
        try:
            solve_riccati(A22, gamma2, eps_r)
        except InfeasibleDesign:
            continue
        return float(H)
    return None
