"""
Low-rank representations of the dynamic tensor.

TTRep    tensor train, cores of shape (r_{p-1}, n_p, r_p) with r_0 = r_k = 1.
HTRep    hierarchical Tucker over a DimensionTree; V_P = (V_right ⊗ V_left) C_P.
CPRep    canonical polyadic, k-1 factors plus the weighted last factor.

Factored evaluation works on batches: states come in as an n x T matrix and
the vector field comes out as n x T, with mode k always the output mode.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import singledispatch
from typing import Sequence

import numpy as np
from loguru import logger

from core.errors import DomainError, NotDeskScaleError
from core.tensor import DenseTensor, hpds_apply_batch, khatri_rao
from core.tree import DimensionTree


def _as_batch(x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[:, None], True
    if x.ndim != 2:
        raise DomainError(f"states must be a vector or an n x T matrix, got shape {x.shape}")
    return x, False


def _check_cap(dims: Sequence[int], max_entries: int | None):
    entries = math.prod(dims)
    if max_entries is not None and entries > max_entries:
        raise NotDeskScaleError(f"full tensor with dims {tuple(dims)} has {entries} entries, cap is {max_entries}")


# --------------------------------------------------------------------------
# tensor train
# --------------------------------------------------------------------------

@dataclass
class TTRep:
    cores: list[np.ndarray]

    def __post_init__(self):
        self.cores = [np.array(c, dtype=np.float64) for c in self.cores]
        if not self.cores:
            raise DomainError("a tensor train needs at least one core")
        for p, core in enumerate(self.cores, start=1):
            if core.ndim != 3:
                raise DomainError(f"core {p} must be order 3, got shape {core.shape}")
        if self.cores[0].shape[0] != 1 or self.cores[-1].shape[2] != 1:
            raise DomainError(f"boundary ranks must be 1, got ranks {self.ranks}")
        for p in range(1, len(self.cores)):
            if self.cores[p - 1].shape[2] != self.cores[p].shape[0]:
                raise DomainError(
                    f"rank chain breaks between cores {p} and {p + 1}: "
                    f"{self.cores[p - 1].shape[2]} != {self.cores[p].shape[0]}"
                )

    @property
    def order(self) -> int:
        return len(self.cores)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(c.shape[1] for c in self.cores)

    @property
    def n(self) -> int:
        return self.cores[0].shape[1]

    @property
    def ranks(self) -> list[int]:
        return [self.cores[0].shape[0]] + [c.shape[2] for c in self.cores]

    def copy(self) -> "TTRep":
        return TTRep([c.copy() for c in self.cores])


def tt_to_full(t: TTRep, max_entries: int | None = None) -> DenseTensor:
    _check_cap(t.dims, max_entries)
    out = t.cores[0][0]
    for core in t.cores[1:]:
        out = np.tensordot(out, core, axes=([-1], [0]))
    return DenseTensor.from_array(out[..., 0])


def tt_eval_batch(t: TTRep, X) -> np.ndarray:
    X, _ = _as_batch(X)
    if X.shape[0] != t.n or len(set(t.dims)) != 1:
        raise DomainError(f"states of dimension {X.shape[0]} do not fit cores with dims {t.dims}")
    left = np.ones((X.shape[1], 1))
    for core in t.cores[:-1]:
        left = np.einsum("ta,aib,it->tb", left, core, X)
    return np.einsum("ta,ai->it", left, t.cores[-1][:, :, 0])


def tt_eval_f(t: TTRep, x) -> np.ndarray:
    """Vector field of the TT-parameterized system at a single state."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return tt_eval_batch(t, x[:, None])[:, 0]


def tt_orthonormalize_core(t: TTRep, p: int, delta: float = 0.0) -> TTRep:
    """
    Left-orthonormalize core p (0-based, p < k-1) and push the remainder into core p+1.

    With delta > 0 singular values below delta * s_max are dropped, which
    shrinks r_{p+1}.
    """
    cores = t.cores
    r0, n, r1 = cores[p].shape
    unfolding = cores[p].reshape(r0 * n, r1, order="F")
    if delta > 0.0:
        u, s, vt = np.linalg.svd(unfolding, full_matrices=False)
        keep = max(1, int(np.sum(s > delta * s[0]))) if s.size and s[0] > 0 else 1
        q, r = u[:, :keep], s[:keep, None] * vt[:keep]
    else:
        q, r = np.linalg.qr(unfolding)
    new_rank = q.shape[1]
    nxt = cores[p + 1]
    pushed = (r @ nxt.reshape(r1, -1, order="F")).reshape(new_rank, nxt.shape[1], nxt.shape[2], order="F")
    new_cores = list(cores)
    new_cores[p] = q.reshape(r0, n, new_rank, order="F")
    new_cores[p + 1] = pushed
    return TTRep(new_cores)


def tt_orthonormalize(t: TTRep, delta: float = 0.0) -> TTRep:
    """Left-to-right sweep making cores 1..k-1 left-orthogonal; delta > 0 also truncates."""
    if delta < 0:
        raise DomainError(f"truncation threshold must be non-negative, got {delta}")
    out = t
    for p in range(t.order - 1):
        out = tt_orthonormalize_core(out, p, delta)
    if out.ranks != t.ranks:
        logger.debug(f"TT ranks {t.ranks} -> {out.ranks}")
    return out


def random_tt(n: int, k: int, ranks: Sequence[int], rng: np.random.Generator) -> TTRep:
    ranks = [int(r) for r in ranks]
    if len(ranks) != k + 1:
        raise DomainError(f"a TT of order {k} needs {k + 1} ranks, got {len(ranks)}")
    if ranks[0] != 1 or ranks[-1] != 1 or min(ranks) < 1:
        raise DomainError(f"TT ranks must be positive with r_0 = r_k = 1, got {ranks}")
    return TTRep([
        rng.standard_normal((ranks[p], n, ranks[p + 1])) / math.sqrt(ranks[p] * n)
        for p in range(k)
    ])


# --------------------------------------------------------------------------
# hierarchical Tucker
# --------------------------------------------------------------------------

@dataclass
class HTRep:
    tree: DimensionTree
    leaf_factors: dict[int, np.ndarray]
    transfer: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        tree = self.tree
        self.leaf_factors = {int(i): np.array(v, dtype=np.float64) for i, v in self.leaf_factors.items()}
        self.transfer = {int(i): np.array(c, dtype=np.float64) for i, c in self.transfer.items()}
        if sorted(self.leaf_factors) != sorted(tree.leaves):
            raise DomainError("leaf factors must be given for exactly the tree leaves")
        if sorted(self.transfer) != sorted(tree.internal_nodes):
            raise DomainError("transfer matrices must be given for exactly the internal nodes")
        for i, v in self.leaf_factors.items():
            if v.ndim != 2 or v.shape[1] != tree.nodes[i].rank:
                raise DomainError(f"leaf {tree.nodes[i].modes} factor has shape {v.shape}, rank is {tree.nodes[i].rank}")
        for i, c in self.transfer.items():
            node = tree.nodes[i]
            rl, rr = tree.nodes[node.left].rank, tree.nodes[node.right].rank
            if c.shape != (rl * rr, node.rank):
                raise DomainError(f"transfer at {node.modes} has shape {c.shape}, expected {(rl * rr, node.rank)}")

    @property
    def order(self) -> int:
        return self.tree.order

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(self.leaf_factors[self.tree.leaf_of_mode(p)].shape[0] for p in range(1, self.order + 1))

    @property
    def n(self) -> int:
        return self.dims[0]

    @property
    def ranks(self) -> list[int]:
        return self.tree.ranks

    def transfer3(self, node_id: int) -> np.ndarray:
        """C_P as an (r_left, r_right, r_P) array."""
        node = self.tree.nodes[node_id]
        rl, rr = self.tree.nodes[node.left].rank, self.tree.nodes[node.right].rank
        return self.transfer[node_id].reshape(rl, rr, node.rank, order="F")

    def copy(self) -> "HTRep":
        return HTRep(
            self.tree,
            {i: v.copy() for i, v in self.leaf_factors.items()},
            {i: c.copy() for i, c in self.transfer.items()},
        )


def _ht_basis(h: HTRep, node_id: int) -> np.ndarray:
    node = h.tree.nodes[node_id]
    if node.is_leaf:
        return h.leaf_factors[node_id]
    return np.kron(_ht_basis(h, node.right), _ht_basis(h, node.left)) @ h.transfer[node_id]


def ht_to_full(h: HTRep, max_entries: int | None = None) -> DenseTensor:
    _check_cap(h.dims, max_entries)
    order = h.tree.mode_order
    vec = _ht_basis(h, 0)[:, 0]
    arr = vec.reshape([h.dims[m - 1] for m in order], order="F")
    return DenseTensor.from_array(np.transpose(arr, np.argsort(order)))


def ht_node_values(h: HTRep, X: np.ndarray, output_mode: int | None = None) -> dict[int, np.ndarray]:
    """
    Upward pass: per node a (T, rows, r_P) array. rows is n for the nodes whose
    subtree holds the output mode (their leaf keeps V instead of x^T V) and 1
    otherwise.
    """
    tree = h.tree
    k = output_mode or tree.order
    T = X.shape[1]
    values: dict[int, np.ndarray] = {}
    for node_id in reversed(range(len(tree.nodes))):
        node = tree.nodes[node_id]
        if node.is_leaf:
            v = h.leaf_factors[node_id]
            if node.modes[0] == k:
                values[node_id] = np.broadcast_to(v, (T,) + v.shape)
            else:
                values[node_id] = (X.T @ v)[:, None, :]
            continue
        vl, vr = values[node.left], values[node.right]
        parent = np.einsum("tia,tjb,abc->tjic", vl, vr, h.transfer3(node_id), optimize=True)
        values[node_id] = parent.reshape(T, -1, node.rank)
    return values


def ht_node_envs(h: HTRep, values: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    """
    Downward pass: per node a (T, erows, r_P) array holding everything outside
    the subtree, so that F[:, t] = sum_a values[P][t, :, a] * envs[P][t, :, a]
    after the row index of whichever side carries the output is kept.
    """
    tree = h.tree
    T = next(iter(values.values())).shape[0]
    envs: dict[int, np.ndarray] = {0: np.ones((T, 1, 1))}
    for node_id in range(len(tree.nodes)):
        node = tree.nodes[node_id]
        if node.is_leaf:
            continue
        c3 = h.transfer3(node_id)
        env = envs[node_id]
        w = np.einsum("abc,tec->tabe", c3, env, optimize=True)
        envs[node.left] = np.einsum("tabe,tjb->tjea", w, values[node.right], optimize=True).reshape(T, -1, c3.shape[0])
        envs[node.right] = np.einsum("tabe,tia->tieb", w, values[node.left], optimize=True).reshape(T, -1, c3.shape[1])
    return envs


def ht_eval_batch(h: HTRep, X) -> np.ndarray:
    X, _ = _as_batch(X)
    if X.shape[0] != h.n or len(set(h.dims)) != 1:
        raise DomainError(f"states of dimension {X.shape[0]} do not fit leaf dims {h.dims}")
    root = ht_node_values(h, X)[0]
    return root[:, :, 0].T.copy()


def ht_eval_f(h: HTRep, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return ht_eval_batch(h, x[:, None])[:, 0]


def ht_orthonormalize_leaves(h: HTRep) -> HTRep:
    """QR each leaf factor and absorb the triangular factor into the parent transfer."""
    out = h.copy()
    tree = h.tree
    for leaf in tree.leaves:
        node = tree.nodes[leaf]
        v = out.leaf_factors[leaf]
        if node.is_root or v.shape[1] > v.shape[0]:
            continue
        q, r = np.linalg.qr(v)
        parent = tree.nodes[node.parent]
        c3 = out.transfer3(parent.id)
        if parent.left == leaf:
            c3 = np.einsum("ia,abc->ibc", r, c3)
        else:
            c3 = np.einsum("jb,abc->ajc", r, c3)
        out.leaf_factors[leaf] = q
        out.transfer[parent.id] = c3.reshape(-1, parent.rank, order="F")
    return out


def random_ht(n: int, tree: DimensionTree, rng: np.random.Generator) -> HTRep:
    leaves = {}
    transfer = {}
    for node in tree.nodes:
        if node.is_leaf:
            leaves[node.id] = rng.standard_normal((n, node.rank)) / math.sqrt(n)
        else:
            rl, rr = tree.nodes[node.left].rank, tree.nodes[node.right].rank
            transfer[node.id] = rng.standard_normal((rl * rr, node.rank)) / math.sqrt(rl * rr)
    return HTRep(tree, leaves, transfer)


# --------------------------------------------------------------------------
# canonical polyadic
# --------------------------------------------------------------------------

@dataclass
class CPRep:
    factors: list[np.ndarray]
    last_factor: np.ndarray

    def __post_init__(self):
        self.factors = [np.array(u, dtype=np.float64) for u in self.factors]
        self.last_factor = np.array(self.last_factor, dtype=np.float64)
        r = self.last_factor.shape[1] if self.last_factor.ndim == 2 else -1
        if r < 1:
            raise DomainError(f"last factor must be an n x r matrix with r >= 1, got {self.last_factor.shape}")
        for p, u in enumerate(self.factors, start=1):
            if u.ndim != 2 or u.shape[1] != r:
                raise DomainError(f"factor {p} has shape {u.shape}, expected {r} columns")

    @property
    def order(self) -> int:
        return len(self.factors) + 1

    @property
    def rank(self) -> int:
        return self.last_factor.shape[1]

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(u.shape[0] for u in self.factors) + (self.last_factor.shape[0],)

    @property
    def n(self) -> int:
        return self.last_factor.shape[0]

    def copy(self) -> "CPRep":
        return CPRep([u.copy() for u in self.factors], self.last_factor.copy())


def cp_to_full(c: CPRep, max_entries: int | None = None) -> DenseTensor:
    _check_cap(c.dims, max_entries)
    kr = np.ones((1, c.rank))
    for u in c.factors:
        # earlier modes vary fastest
        kr = khatri_rao(u, kr)
    unfolding = c.last_factor @ kr.T
    return DenseTensor(c.dims, unfolding.T.reshape(-1, order="F"))


def cp_mode_products(c: CPRep, X: np.ndarray) -> list[np.ndarray]:
    """x(j)^T U^{(q)} for every factor, each a (T, r) array."""
    return [X.T @ u for u in c.factors]


def cp_eval_batch(c: CPRep, X) -> np.ndarray:
    X, _ = _as_batch(X)
    if X.shape[0] != c.n or len(set(c.dims)) != 1:
        raise DomainError(f"states of dimension {X.shape[0]} do not fit factors with dims {c.dims}")
    b = np.ones((X.shape[1], c.rank))
    for prod in cp_mode_products(c, X):
        b *= prod
    return c.last_factor @ b.T


def cp_eval_f(c: CPRep, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return cp_eval_batch(c, x[:, None])[:, 0]


def cp_normalize(c: CPRep, notes: list[str] | None = None, warn: bool = True) -> CPRep:
    """
    Scale factor columns to unit norm and fold the scales into the last factor.

    A column that is zero in any factor gets weight zero; `warn=False` leaves
    reporting to the caller.
    """
    factors = []
    scale = np.ones(c.rank)
    zero_cols: set[int] = set()
    for p, u in enumerate(c.factors, start=1):
        norms = np.linalg.norm(u, axis=0)
        zero = norms == 0.0
        zero_cols.update(np.flatnonzero(zero).tolist())
        safe = np.where(zero, 1.0, norms)
        factors.append(u / safe)
        scale *= np.where(zero, 0.0, norms)
    if zero_cols and warn:
        msg = f"CP columns {sorted(zero_cols)} vanished; their weights are zero"
        logger.warning(msg)
        if notes is not None:
            notes.append(msg)
    return CPRep(factors, c.last_factor * scale)


def cp_weights(c: CPRep) -> tuple[np.ndarray, np.ndarray]:
    """Split the last factor into nonnegative weights and unit-norm columns."""
    lam = np.linalg.norm(c.last_factor, axis=0)
    safe = np.where(lam == 0.0, 1.0, lam)
    return lam, c.last_factor / safe


def random_cp(n: int, k: int, r: int, rng: np.random.Generator) -> CPRep:
    if k < 2 or r < 1:
        raise DomainError(f"CP needs order >= 2 and rank >= 1, got k={k}, r={r}")
    factors = [rng.standard_normal((n, r)) / math.sqrt(n) for _ in range(k - 1)]
    return CPRep(factors, rng.standard_normal((n, r)) / math.sqrt(r))


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

@singledispatch
def eval_field(rep, X) -> np.ndarray:
    """Batched vector field: n x T states in, n x T derivatives out."""
    raise DomainError(f"cannot evaluate a vector field from {type(rep).__name__}")


@eval_field.register
def _(rep: DenseTensor, X) -> np.ndarray:
    X, single = _as_batch(X)
    out = hpds_apply_batch(rep, X)
    return out[:, 0] if single else out


@eval_field.register
def _(rep: TTRep, X) -> np.ndarray:
    X, single = _as_batch(X)
    out = tt_eval_batch(rep, X)
    return out[:, 0] if single else out


@eval_field.register
def _(rep: HTRep, X) -> np.ndarray:
    X, single = _as_batch(X)
    out = ht_eval_batch(rep, X)
    return out[:, 0] if single else out


@eval_field.register
def _(rep: CPRep, X) -> np.ndarray:
    X, single = _as_batch(X)
    out = cp_eval_batch(rep, X)
    return out[:, 0] if single else out


@singledispatch
def to_full(rep, max_entries: int | None = None) -> DenseTensor:
    raise DomainError(f"cannot reconstruct a full tensor from {type(rep).__name__}")


@to_full.register
def _(rep: DenseTensor, max_entries: int | None = None) -> DenseTensor:
    _check_cap(rep.dims, max_entries)
    return rep


to_full.register(TTRep, tt_to_full)
to_full.register(HTRep, ht_to_full)
to_full.register(CPRep, cp_to_full)


@singledispatch
def param_count(rep) -> int:
    raise DomainError(f"no parameter count for {type(rep).__name__}")


@param_count.register
def _(rep: DenseTensor) -> int:
    return rep.size


@param_count.register
def _(rep: TTRep) -> int:
    return sum(c.size for c in rep.cores)


@param_count.register
def _(rep: HTRep) -> int:
    return sum(v.size for v in rep.leaf_factors.values()) + sum(c.size for c in rep.transfer.values())


@param_count.register
def _(rep: CPRep) -> int:
    return sum(u.size for u in rep.factors) + rep.last_factor.size


def rescale_output(rep, factor: float):
    """Multiply the represented tensor by `factor` through its output-side block."""
    if isinstance(rep, TTRep):
        out = rep.copy()
        out.cores[-1] *= factor
    elif isinstance(rep, HTRep):
        out = rep.copy()
        if out.tree.root.is_leaf:
            out.leaf_factors[0] *= factor
        else:
            out.transfer[0] *= factor
    elif isinstance(rep, CPRep):
        out = rep.copy()
        out.last_factor *= factor
    elif isinstance(rep, DenseTensor):
        out = DenseTensor(rep.dims, rep.data * factor)
    else:
        raise DomainError(f"cannot rescale {type(rep).__name__}")
    return out
