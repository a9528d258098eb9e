"""
Minimum-norm linear least squares through a complete orthogonal decomposition.

Every block update of the three fitters and the lifting baseline goes
through `solve_ls`; the reported rank and extreme singular values of the
retained triangle tell whether a regression matrix had full column rank.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla

from core.errors import DomainError

DEFAULT_RCOND = 1e-12


@dataclass
class LstsqResult:
    x: np.ndarray
    rank: int
    n_cols: int
    sigma_min: float
    sigma_max: float
    residual: float

    @property
    def full_rank(self) -> bool:
        return self.rank == self.n_cols


def solve_ls(H, y, rcond: float = DEFAULT_RCOND) -> LstsqResult:
    """
    Minimum-norm solution of min ||H x - y||_2.

    Parameters
    ----------
    H : (m, c) array
    y : (m,) or (m, s) array
        Several right-hand sides are solved at once.
    rcond : float
        Diagonal entries of the pivoted R below ``rcond * |R[0, 0]|`` are
        treated as zero when deciding the numerical rank.

    Returns
    -------
    LstsqResult
        Solution, numerical rank, column count, smallest and largest
        retained singular value, and the residual 2-norm (Frobenius for
        several right-hand sides).
    """
    H = np.asarray(H, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if H.ndim != 2 or H.size == 0:
        raise DomainError(f"least-squares system is empty (H has shape {H.shape})")
    if y.shape[0] != H.shape[0]:
        raise DomainError(f"H has {H.shape[0]} rows but y has {y.shape[0]}")
    m, c = H.shape
    vector_rhs = y.ndim == 1
    Y = y[:, None] if vector_rhs else y

    Q, R, piv = spla.qr(H, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        x = np.zeros((c, Y.shape[1]))
        return _result(x, 0, c, 0.0, 0.0, H, Y, vector_rhs)
    rank = int(np.sum(diag > rcond * diag[0]))
    qty = Q[:, :rank].T @ Y

    if rank == c:
        z = spla.solve_triangular(R[:rank, :rank], qty)
    else:
        # R[:rank, :] = T Z^T with Z orthonormal; the min-norm z lives in range(Z)
        Q2, R2 = spla.qr(R[:rank, :].T, mode="economic")
        w = spla.solve_triangular(R2.T, qty, lower=True)
        z = Q2 @ w
    x = np.empty_like(z)
    x[piv] = z

    sv = spla.svdvals(R[:rank, :])
    return _result(x, rank, c, float(sv[-1]), float(sv[0]), H, Y, vector_rhs)


def _result(x, rank, c, smin, smax, H, Y, vector_rhs) -> LstsqResult:
    residual = float(np.linalg.norm(H @ x - Y))
    if vector_rhs:
        x = x[:, 0]
    return LstsqResult(x=x, rank=rank, n_cols=c, sigma_min=smin, sigma_max=smax, residual=residual)
