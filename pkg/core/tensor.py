"""
Dense tensors and the multilinear kernels every other module builds on.

All storage is column-major: entry (j_1, ..., j_k) of a tensor with dims
(n_1, ..., n_k) lives at flat position psi(j, n) - 1, where psi is
`index_map`. Matricizations are re-indexings of that one layout.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from core.errors import DomainError

# Generic 2-D value. Kept as a plain ndarray; column-major `vec` is
# `m.reshape(-1, order="F")`.
Matrix = np.ndarray


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Order-k real tensor stored as a flat column-major buffer."""

    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 1:
            raise DomainError("tensor order must be at least 1")
        if any(d < 1 for d in dims):
            raise DomainError(f"tensor dims must be positive, got {dims}")
        data = np.array(self.data, dtype=np.float64).reshape(-1)
        if data.size != math.prod(dims):
            raise DomainError(
                f"data length {data.size} does not match dims {dims} (product {math.prod(dims)})"
            )
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array) -> "DenseTensor":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return cls(arr.shape, arr.reshape(-1, order="F"))

    @classmethod
    def zeros(cls, dims: Sequence[int]) -> "DenseTensor":
        return cls(tuple(dims), np.zeros(math.prod(dims)))

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_cubical(self) -> bool:
        return len(set(self.dims)) == 1

    def to_array(self) -> np.ndarray:
        return self.data.reshape(self.dims, order="F")

    def entry(self, indices: Sequence[int]) -> float:
        """Entry at 1-based multi-index."""
        return float(self.data[index_map(indices, self.dims) - 1])

    def __repr__(self):
        return f"DenseTensor(dims={self.dims})"


def index_map(indices: Sequence[int], dims: Sequence[int]) -> int:
    """psi: 1-based multi-index -> 1-based flat position (first index fastest)."""
    if len(indices) != len(dims):
        raise DomainError(f"expected {len(dims)} indices, got {len(indices)}")
    flat = 0
    stride = 1
    for j, n in zip(indices, dims):
        if not 1 <= j <= n:
            raise DomainError(f"index {j} out of range 1..{n}")
        flat += (j - 1) * stride
        stride *= n
    return flat + 1


def outer_product(a, b) -> DenseTensor:
    """Outer product; a plain number acts as an order-0 scalar."""
    if not isinstance(a, DenseTensor) and np.isscalar(a):
        return DenseTensor(b.dims, float(a) * b.data)
    if not isinstance(b, DenseTensor) and np.isscalar(b):
        return DenseTensor(a.dims, float(b) * a.data)
    # column-major: a's modes vary fastest
    data = np.multiply.outer(b.data, a.data).reshape(-1)
    return DenseTensor(a.dims + b.dims, data)


def mode_vector_product(a: DenseTensor, p: int, v) -> DenseTensor:
    """Contract mode p (1-based) of `a` with vector `v`; mode p is dropped."""
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if not 1 <= p <= a.order:
        raise DomainError(f"mode {p} out of range 1..{a.order}")
    if v.size != a.dims[p - 1]:
        raise DomainError(f"vector length {v.size} does not match mode {p} size {a.dims[p - 1]}")
    out = np.tensordot(a.to_array(), v, axes=([p - 1], [0]))
    if a.order == 1:
        return DenseTensor((1,), np.atleast_1d(out))
    return DenseTensor.from_array(out)


def _check_hpds_tensor(a: DenseTensor) -> int:
    if a.order < 2:
        raise DomainError("an HPDS tensor must have order k >= 2")
    if not a.is_cubical:
        raise DomainError(f"an HPDS tensor must be cubical, got dims {a.dims}")
    return a.dims[0]


def hpds_apply(a: DenseTensor, x) -> np.ndarray:
    """
    Evaluate the vector field A x^{k-1}: modes 1..k-1 are contracted with x,
    mode k indexes the output.
    """
    n = _check_hpds_tensor(a)
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != n:
        raise DomainError(f"state has length {x.size}, tensor dimension is {n}")
    v = a.data
    for _ in range(a.order - 1):
        v = x @ v.reshape(n, -1, order="F")
    return np.array(v)


def hpds_apply_batch(a: DenseTensor, X) -> np.ndarray:
    """Column-wise `hpds_apply` for an n x T state matrix."""
    n = _check_hpds_tensor(a)
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != n:
        raise DomainError(f"state matrix must be {n} x T, got {X.shape}")
    unfolding = a.data.reshape(-1, n, order="F").T
    return unfolding @ khatri_rao_power(X, a.order - 1)


def kronecker(a: Matrix, b: Matrix) -> Matrix:
    return np.kron(np.atleast_2d(a), np.atleast_2d(b))


def khatri_rao(a: Matrix, b: Matrix) -> Matrix:
    """Column-wise Kronecker product."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if a.shape[1] != b.shape[1]:
        raise DomainError(f"column counts differ: {a.shape[1]} vs {b.shape[1]}")
    return (a[:, None, :] * b[None, :, :]).reshape(a.shape[0] * b.shape[0], a.shape[1])


def khatri_rao_power(X: Matrix, p: int) -> Matrix:
    """X ⊙ X ⊙ ... ⊙ X with p factors."""
    if p < 1:
        raise DomainError("Khatri-Rao power needs at least one factor")
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = X
    for _ in range(p - 1):
        out = khatri_rao(out, X)
    return out


def _split_modes(order: int, row_modes: Sequence[int]) -> tuple[list[int], list[int]]:
    rows = [int(m) for m in row_modes]
    if len(set(rows)) != len(rows) or any(not 1 <= m <= order for m in rows):
        raise DomainError(f"invalid row mode set {list(row_modes)} for order {order}")
    cols = [m for m in range(1, order + 1) if m not in rows]
    return rows, cols


def matricize(a: DenseTensor, row_modes: Sequence[int]) -> Matrix:
    """Mode-R matricization; rows indexed by psi over R (in the given order), columns by psi over the ascending complement."""
    rows, cols = _split_modes(a.order, row_modes)
    perm = [m - 1 for m in rows + cols]
    n_rows = math.prod(a.dims[m - 1] for m in rows)
    return np.transpose(a.to_array(), perm).reshape(n_rows, -1, order="F")


def dematricize(m: Matrix, row_modes: Sequence[int], dims: Sequence[int]) -> DenseTensor:
    """Inverse of `matricize`."""
    dims = tuple(int(d) for d in dims)
    rows, cols = _split_modes(len(dims), row_modes)
    perm = [r - 1 for r in rows + cols]
    m = np.asarray(m, dtype=np.float64)
    if m.size != math.prod(dims):
        raise DomainError(f"matrix of size {m.size} cannot fold into dims {dims}")
    permuted = m.reshape([dims[p] for p in perm], order="F")
    return DenseTensor.from_array(np.transpose(permuted, np.argsort(perm)))


def vec(m: Matrix) -> np.ndarray:
    return np.asarray(m).reshape(-1, order="F")


def vec_identity_check(a: Matrix, x: Matrix, b: Matrix, rtol: float = 1e-12) -> bool:
    """Check vec(AXB) = (B^T ⊗ A) vec(X)."""
    a, x, b = (np.atleast_2d(np.asarray(m, dtype=np.float64)) for m in (a, x, b))
    if a.shape[1] != x.shape[0] or x.shape[1] != b.shape[0]:
        raise DomainError(f"shapes {a.shape}, {x.shape}, {b.shape} are not conformable")
    lhs = vec(a @ x @ b)
    rhs = kronecker(b.T, a) @ vec(x)
    scale = max(np.linalg.norm(lhs), 1.0)
    return bool(np.linalg.norm(lhs - rhs) <= rtol * scale)


def almost_symmetrize(a: DenseTensor) -> DenseTensor:
    """Average over all permutations of the first k-1 modes."""
    if not a.is_cubical:
        raise DomainError(f"almost-symmetrization needs a cubical tensor, got dims {a.dims}")
    k = a.order
    if k <= 2:
        return a
    arr = a.to_array()
    acc = np.zeros_like(arr)
    perms = list(itertools.permutations(range(k - 1)))
    for perm in perms:
        acc += np.transpose(arr, perm + (k - 1,))
    return DenseTensor.from_array(acc / len(perms))


def frobenius_relative(reference, estimate) -> float:
    """||reference - estimate||_F / ||reference||_F."""
    ref = reference.data if isinstance(reference, DenseTensor) else np.asarray(reference)
    est = estimate.data if isinstance(estimate, DenseTensor) else np.asarray(estimate)
    if ref.shape != est.shape:
        raise DomainError(f"shape mismatch {ref.shape} vs {est.shape}")
    denom = np.linalg.norm(ref)
    diff = np.linalg.norm(ref - est)
    if denom == 0.0:
        return 0.0 if diff == 0.0 else float("inf")
    return float(diff / denom)
