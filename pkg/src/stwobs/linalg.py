"""Small dense linear algebra used by the design checks.

Matrices here are at most a handful of rows, so clarity wins over speed.
"""

import numpy as np


def jacobi_eigh(S, tol=1e-15, max_sweeps=100):
    """Eigen-decomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Returns ``(w, V)`` with eigenvalues ``w`` in ascending order and
    orthonormal eigenvectors in the columns of ``V``, so that
    ``S = V @ diag(w) @ V.T``.
    """
    A = np.array(S, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.allclose(A, A.T, rtol=1e-12, atol=1e-14 * max(1.0, np.abs(A).max())):
        raise ValueError("matrix is not symmetric")
    A = 0.5 * (A + A.T)
    n = A.shape[0]
    V = np.eye(n)
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)

    for _ in range(max_sweeps):
        off = np.sqrt(np.sum(np.tril(A, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                diff = A[q, q] - A[p, p]
                if abs(apq) < 1e-150 * abs(diff):
                    t = apq / diff  # theta**2 would overflow
                else:
                    theta = diff / (2.0 * apq)
                    t = np.sign(theta) / (abs(theta) + np.hypot(1.0, theta)) if theta != 0 else 1.0
                c = 1.0 / np.hypot(1.0, t)
                s = t * c
                # A <- J^T A J with J the (p, q) plane rotation
                Ap = A[:, p].copy()
                Aq = A[:, q].copy()
                A[:, p] = c * Ap - s * Aq
                A[:, q] = s * Ap + c * Aq
                Ap = A[p, :].copy()
                Aq = A[q, :].copy()
                A[p, :] = c * Ap - s * Aq
                A[q, :] = s * Ap + c * Aq
                A[p, q] = A[q, p] = 0.0
                Vp = V[:, p].copy()
                V[:, p] = c * Vp - s * V[:, q]
                V[:, q] = s * Vp + c * V[:, q]
    else:
        raise RuntimeError(f"Jacobi iteration did not converge in {max_sweeps} sweeps")

    w = np.diag(A).copy()
    order = np.argsort(w)
    return w[order], V[:, order]


def min_eig(S):
    return float(jacobi_eigh(S)[0][0])


def is_hurwitz(A):
    return bool(np.all(np.linalg.eigvals(np.atleast_2d(A)).real < 0))


def lyapunov(A, C):
    """Solve ``A.T @ X + X @ A + C = 0`` for ``X``.

    Vectorised (Kronecker) solve; unique when no two eigenvalues of ``A``
    sum to zero, in particular when ``A`` is Hurwitz.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    n = A.shape[0]
    I = np.eye(n)
    # vec(A^T X) = (I kron A^T) vec(X), vec(X A) = (A^T kron I) vec(X), column-major vec
    M = np.kron(I, A.T) + np.kron(A.T, I)
    x = np.linalg.solve(M, -C.reshape(-1, order="F"))
    X = x.reshape(n, n, order="F")
    return 0.5 * (X + X.T) if np.allclose(C, C.T) else X
