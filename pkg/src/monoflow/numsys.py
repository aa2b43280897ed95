"""Evaluation, Jacobian, Newton correction and dense solves.

Everything here is vectorized over leading batch axes: a point ``z`` may be a
single vector of length ``2(n-1)`` or a stack of shape ``(B, 2(n-1))``, and
susceptances may be a single vector or one vector per point. Per-row results
do not depend on what else is in the batch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from monoflow.network import PowerFlowSystem, _susceptance_matrix


class SingularMatrixError(np.linalg.LinAlgError):
    pass


def scaled_residual(F: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``|F|_inf / max(1, |z|_inf)**2``; roundoff in a quadratic system grows like ``|z|**2``."""
    scale = np.maximum(1.0, np.abs(z).max(axis=-1, initial=0.0))
    r = np.abs(F).max(axis=-1, initial=0.0) / scale**2
    return r if np.ndim(r) else float(r)


def equilibrated_sv_ratio(J: np.ndarray):
    """``sigma_min / sigma_max`` of ``J`` after scaling rows, then columns, to unit max-norm.

    Works on a stack of matrices; a zero row or column gives 0.
    """
    J = np.asarray(J)
    rmax = np.abs(J).max(axis=-1, keepdims=True)
    R = np.divide(J, rmax, out=np.zeros_like(J), where=rmax > 0)
    cmax = np.abs(R).max(axis=-2, keepdims=True)
    C = np.divide(R, cmax, out=np.zeros_like(R), where=cmax > 0)
    sv = np.linalg.svd(C, compute_uv=False)
    ratio = np.where(sv[..., 0] > 0, sv[..., -1] / np.where(sv[..., 0] > 0, sv[..., 0], 1.0), 0.0)
    ratio = np.where((rmax == 0).any(axis=(-2, -1)) | (cmax == 0).any(axis=(-2, -1)), 0.0, ratio)
    return float(ratio) if ratio.ndim == 0 else ratio


#: smallest equilibrated singular-value ratio at which a double-precision point
#: is still resolved to a relative 1e-6
RESOLVABLE_RATIO = float(np.finfo(float).eps) / 1e-6


def _split(z: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(x, y, X, Y)`` where ``X, Y`` include the reference node."""
    h = z.shape[-1] // 2
    x, y = z[..., :h], z[..., h:]
    one = np.ones(z.shape[:-1] + (1,), dtype=z.dtype)
    X = np.concatenate([one, x], axis=-1)
    Y = np.concatenate([np.zeros_like(one), y], axis=-1)
    return x, y, X, Y


def _matvec(M: np.ndarray, v: np.ndarray) -> np.ndarray:
    # plain einsum keeps the summation order independent of the batch size
    return np.einsum("...kj,...j->...k", M, v)


def balance_from_matrix(Bm: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Balance rows ``X*(B Y) - Y*(B X)`` for nodes ``1..n-1``."""
    _, _, X, Y = _split(z)
    bal = X * _matvec(Bm, Y) - Y * _matvec(Bm, X)
    return bal[..., 1:]


def evaluate_from_matrix(Bm: np.ndarray, z: np.ndarray) -> np.ndarray:
    x, y, X, Y = _split(z)
    unit = x * x + y * y - 1.0
    bal = X * _matvec(Bm, Y) - Y * _matvec(Bm, X)
    return np.concatenate([unit, bal[..., 1:]], axis=-1)


def _diag_view(J: np.ndarray, row: int, col: int, count: int) -> np.ndarray:
    """Writable view of ``J[..., row + i, col + i]`` for ``i < count``."""
    N = J.shape[-1]
    flat = J.reshape(J.shape[:-2] + (N * N,))
    start = row * N + col
    return flat[..., start : start + count * (N + 1) : N + 1]


def jacobian_from_matrix(Bm: np.ndarray, z: np.ndarray) -> np.ndarray:
    x, y, X, Y = _split(z)
    h = x.shape[-1]
    BX = _matvec(Bm, X)[..., 1:]
    BY = _matvec(Bm, Y)[..., 1:]
    Bsub = Bm[..., 1:, 1:]
    J = np.empty(z.shape[:-1] + (2 * h, 2 * h), dtype=np.result_type(Bm, z))
    J[..., :h, :] = 0.0
    _diag_view(J, 0, 0, h)[...] = 2.0 * x
    _diag_view(J, 0, h, h)[...] = 2.0 * y
    # d/dx_j and d/dy_j of x_k (BY)_k - y_k (BX)_k
    J[..., h:, :h] = -y[..., :, None] * Bsub
    J[..., h:, h:] = x[..., :, None] * Bsub
    _diag_view(J, h, 0, h)[...] += BY
    _diag_view(J, h, h, h)[...] -= BX
    return J


def _check_dims(sys: PowerFlowSystem, b, z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z)
    b = np.asarray(b)
    if z.shape[-1] != sys.num_vars:
        raise ValueError(f"point has length {z.shape[-1]}, system has {sys.num_vars} variables")
    if b.shape[-1] != sys.network.num_edges:
        raise ValueError(f"susceptance vector has length {b.shape[-1]}, network has {sys.network.num_edges} edges")
    return b, z


def evaluate(sys: PowerFlowSystem, b, z) -> np.ndarray:
    """Residual vector, unit-circle rows first then balance rows."""
    b, z = _check_dims(sys, b, z)
    return evaluate_from_matrix(_susceptance_matrix(sys.network, b), z)


def jacobian(sys: PowerFlowSystem, b, z) -> np.ndarray:
    b, z = _check_dims(sys, b, z)
    return jacobian_from_matrix(_susceptance_matrix(sys.network, b), z)


def linear_solve(A, rhs, pivot_tol: float = 1e-300) -> np.ndarray:
    """Solve ``A z = rhs`` by LU with partial pivoting.

    Raises :class:`SingularMatrixError` if a pivot falls below ``pivot_tol``.
    """
    A = np.asarray(A)
    rhs = np.asarray(rhs)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix must be square, got shape {A.shape}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A, check_finite=True)
    if np.min(np.abs(np.diag(lu)), initial=np.inf) < pivot_tol:
        raise SingularMatrixError("pivot below tolerance; matrix is singular")
    return scipy.linalg.lu_solve((lu, piv), rhs)


def solve_batch(A: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched solve that never raises; returns ``(solution, ok)``.

    Rows whose matrix is exactly singular or whose solution is not finite get
    ``ok = False`` and a NaN solution.
    """
    try:
        sol = np.linalg.solve(A, rhs[..., None])[..., 0]
    except np.linalg.LinAlgError:
        sol = np.full(rhs.shape, np.nan, dtype=np.result_type(A, rhs))
        for i in range(A.shape[0]):
            try:
                sol[i] = np.linalg.solve(A[i], rhs[i])
            except np.linalg.LinAlgError:
                pass
    ok = np.all(np.isfinite(sol), axis=-1)
    return sol, ok


def newton_batch(
    func,
    jac,
    z: np.ndarray,
    tol: float,
    max_iters: int,
    relative: bool = False,
    check_residual: bool = True,
):
    """Newton's method on a stack of points.

    ``func(z, rows)`` and ``jac(z, rows)`` evaluate the system and its
    Jacobian for the batch rows ``rows``. A row converges once its step
    satisfies ``|dz| <= tol`` and, if ``check_residual``, the residual at the
    new point is ``<= tol``. With ``relative`` the step is measured against
    ``max(1, |z|)`` and the residual against ``max(1, |z|)**2``, the natural
    scale of a quadratic system.
    A row fails when its Jacobian is singular or its step does not contract
    by at least a factor 2 between consecutive iterations.

    Returns ``(z, residual, converged, singular, iterations)``; ``residual``
    is the absolute residual, left at ``inf`` where it was not computed.
    """
    z = np.array(z, dtype=complex, copy=True)
    B = z.shape[0]
    converged = np.zeros(B, dtype=bool)
    singular = np.zeros(B, dtype=bool)
    failed = np.zeros(B, dtype=bool)
    residual = np.full(B, np.inf)
    iters = np.zeros(B, dtype=int)
    prev_step = np.full(B, np.inf)
    for _ in range(max_iters):
        rows = np.flatnonzero(~(converged | failed))
        if rows.size == 0:
            break
        zr = z[rows]
        F = func(zr, rows)
        dz, ok = solve_batch(jac(zr, rows), -F)
        iters[rows] += 1
        bad = rows[~ok]
        singular[bad] = True
        failed[bad] = True
        rows, zr, dz = rows[ok], zr[ok], dz[ok]
        znew = zr + dz
        step = np.abs(dz).max(axis=-1, initial=0.0)
        scale = np.maximum(1.0, np.abs(znew).max(axis=-1, initial=0.0)) if relative else 1.0
        small = step <= tol * scale
        if check_residual and np.any(small):
            res = np.abs(func(znew[small], rows[small])).max(axis=-1, initial=0.0)
            residual[rows[small]] = res
            ok_res = np.zeros_like(small)
            ok_res[small] = res <= tol * (scale[small] ** 2 if relative else 1.0)
            done = ok_res
        else:
            done = small
        stalled = ~done & (step > 0.5 * prev_step[rows])
        z[rows] = znew
        converged[rows[done]] = True
        failed[rows[stalled]] = True
        prev_step[rows] = step
    return z, residual, converged, singular, iters


@dataclass
class NewtonResult:
    z: np.ndarray
    residual: float
    converged: bool
    iterations: int
    message: str = ""

    def __iter__(self):
        # allows ``z, res, ok = newton_correct(...)``
        return iter((self.z, self.residual, self.converged))


def newton_correct(
    sys: PowerFlowSystem, b, z0, tol: float = 1e-10, max_iters: int = 30, relative: bool = False
) -> NewtonResult:
    """Newton-correct a single point for the system at fixed susceptances ``b``.

    Convergence means the last step and the residual are both below ``tol``
    (see :func:`newton_batch` for the ``relative`` scaling). Steps that fail
    to halve between iterations abort the iteration.
    """
    if tol <= 0 or max_iters < 1:
        raise ValueError("need tol > 0 and max_iters >= 1")
    b, z0 = _check_dims(sys, b, z0)
    Bm = _susceptance_matrix(sys.network, b)
    func = lambda z, rows: evaluate_from_matrix(Bm, z)  # noqa: E731
    jac = lambda z, rows: jacobian_from_matrix(Bm, z)  # noqa: E731
    z, res, conv, sing, it = newton_batch(
        func, jac, np.asarray(z0, dtype=complex)[None, :], tol, max_iters, relative=relative
    )
    if conv[0]:
        msg = "converged"
    elif sing[0]:
        msg = "singular Jacobian"
    else:
        msg = "no convergence"
    if not np.isfinite(res[0]) and np.all(np.isfinite(z[0])):
        res[0] = np.abs(evaluate_from_matrix(Bm, z[0])).max()
    return NewtonResult(z[0], float(res[0]), bool(conv[0]), int(it[0]), msg)


# ---------------------------------------------------------------------------
# homotopies

class ParameterHomotopy:
    """Fixed system structure with susceptances moving on a straight segment.

    ``b(s) = (1 - s) b_start + s b_end`` for ``s`` in ``[0, 1]``.
    """

    def __init__(self, system: PowerFlowSystem, b_start, b_end):
        self.system = system
        self.b_start = np.asarray(b_start, dtype=complex)
        self.b_end = np.asarray(b_end, dtype=complex)
        if not (np.all(np.isfinite(self.b_start)) and np.all(np.isfinite(self.b_end))):
            raise ValueError("homotopy endpoints must be finite")
        self.B0 = _susceptance_matrix(system.network, self.b_start)
        self.B1 = _susceptance_matrix(system.network, self.b_end)
        self.dB = self.B1 - self.B0

    def b(self, s: float) -> np.ndarray:
        return (1.0 - s) * self.b_start + s * self.b_end

    def _matrix(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        Bm = self.B0 + s[..., None, None] * self.dB
        # hit the endpoints exactly
        Bm = np.where((s == 1.0)[..., None, None], self.B1, Bm)
        return Bm

    def H(self, z, s):
        return evaluate_from_matrix(self._matrix(s), z)

    def Hz(self, z, s):
        return jacobian_from_matrix(self._matrix(s), z)

    def Hs(self, z, s):
        out = np.zeros(np.shape(z), dtype=complex)
        h = out.shape[-1] // 2
        out[..., h:] = balance_from_matrix(self.dB, z)
        return out


class TotalDegreeHomotopy:
    """``H(z, s) = (1 - s) gamma (z**2 - r) + s F_b(z)``."""

    def __init__(self, system: PowerFlowSystem, b, gamma: complex, r):
        self.system = system
        self.b_target = np.asarray(b, dtype=complex)
        self.gamma = complex(gamma)
        self.r = np.asarray(r, dtype=complex)
        self.Bm = _susceptance_matrix(system.network, self.b_target)

    def start_residual(self, z):
        return z * z - self.r

    def H(self, z, s):
        s = np.asarray(s, dtype=float)[..., None]
        return (1.0 - s) * self.gamma * (z * z - self.r) + s * evaluate_from_matrix(self.Bm, z)

    def Hz(self, z, s):
        s = np.asarray(s, dtype=float)
        J = jacobian_from_matrix(self.Bm, z)
        J *= s[..., None, None]
        _diag_view(J, 0, 0, z.shape[-1])[...] += ((1.0 - s)[..., None] * self.gamma) * 2.0 * z
        return J

    def Hs(self, z, s):
        return evaluate_from_matrix(self.Bm, z) - self.gamma * (z * z - self.r)
