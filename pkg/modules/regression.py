"""
Regression matrices for the block updates.

For every block B of a representation, the stacked matrix H built here
satisfies H @ vec(B) == vec(F0), where F0 is the n x T matrix of predicted
derivatives and vec is column-major (row j + n*t holds component j of
sample t). The permutations that reorder vec(I ⊗ V ⊗ I) into vec(V) are
folded into the einsum index order instead of being materialized.
"""
from __future__ import annotations

import numpy as np

from core.decomp import CPRep, HTRep, TTRep, cp_mode_products, ht_node_envs, ht_node_values
from core.errors import DomainError


def _stack(blocks: np.ndarray) -> np.ndarray:
    T, n, c = blocks.shape
    return blocks.reshape(T * n, c)


def _states(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    return X[:, None] if X.ndim == 1 else X


# --------------------------------------------------------------------------
# tensor train
# --------------------------------------------------------------------------

def tt_left_right(t: TTRep, p: int, X: np.ndarray) -> tuple[np.ndarray, np.ndarray | None]:
    """
    Left products L (T, r_{p-1}) and right products R (T, r_p, n) around core p (1-based).

    R is None for p = k, where the output mode sits in core p itself.
    """
    k = t.order
    T = X.shape[1]
    left = np.ones((T, 1))
    for core in t.cores[: p - 1]:
        left = np.einsum("ta,aib,it->tb", left, core, X)
    if p == k:
        return left, None
    right = np.broadcast_to(t.cores[-1][:, :, 0], (T,) + t.cores[-1].shape[:2])
    for core in reversed(t.cores[p : k - 1]):
        right = np.einsum("aib,it,tbm->tam", core, X, right)
    return left, right


def tt_regression_blocks(t: TTRep, p: int, X) -> np.ndarray:
    """Per-sample blocks H_p(j) as a (T, n, r_{p-1} n r_p) array."""
    X = _states(X)
    k = t.order
    if not 1 <= p <= k:
        raise DomainError(f"core index {p} out of range 1..{k}")
    if X.shape[0] != t.n:
        raise DomainError(f"states of dimension {X.shape[0]} do not fit mode size {t.n}")
    n, T = X.shape
    left, right = tt_left_right(t, p, X)
    if right is None:
        blocks = np.einsum("ta,mi->tmia", left, np.eye(n))
    else:
        blocks = np.einsum("ta,it,tbm->tmbia", left, X, right, optimize=True)
    return blocks.reshape(T, n, -1)


def tt_regression_block(t: TTRep, p: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return tt_regression_blocks(t, p, x[:, None])[0]


def tt_regression_matrix(t: TTRep, p: int, X) -> np.ndarray:
    return _stack(tt_regression_blocks(t, p, X))


# --------------------------------------------------------------------------
# hierarchical Tucker
# --------------------------------------------------------------------------

def ht_leaf_ls(h: HTRep, p: int, X0, values=None, envs=None) -> np.ndarray:
    """
    Stacked regression matrix for the leaf factor of mode p, (nT) x (n r_p).

    `values` and `envs` may be passed in when several blocks share one
    snapshot of the representation.
    """
    X0 = _states(X0)
    if not 1 <= p <= h.order:
        raise DomainError(f"leaf mode {p} out of range 1..{h.order}")
    if values is None:
        values = ht_node_values(h, X0)
    if envs is None:
        envs = ht_node_envs(h, values)
    n, T = X0.shape
    leaf = h.tree.leaf_of_mode(p)
    env = envs[leaf]
    if p == h.order:
        blocks = np.einsum("ta,jm->tjam", env[:, 0, :], np.eye(n))
    else:
        blocks = np.einsum("tja,mt->tjam", env, X0)
    return _stack(blocks.reshape(T, n, -1))


def ht_internal_ls(h: HTRep, node_id: int, X0, values=None, envs=None) -> np.ndarray:
    """Stacked regression matrix for the transfer matrix of an internal node, (nT) x (r_l r_r r_P)."""
    X0 = _states(X0)
    tree = h.tree
    if not 0 <= node_id < len(tree.nodes) or tree.nodes[node_id].is_leaf:
        raise DomainError(f"node {node_id} is not an internal node of the tree")
    if values is None:
        values = ht_node_values(h, X0)
    if envs is None:
        envs = ht_node_envs(h, values)
    node = tree.nodes[node_id]
    T = X0.shape[1]
    blocks = np.einsum(
        "tia,tjb,tec->tjiecba", values[node.left], values[node.right], envs[node_id], optimize=True
    )
    return _stack(blocks.reshape(T, X0.shape[0], -1))


# --------------------------------------------------------------------------
# canonical polyadic
# --------------------------------------------------------------------------

def cp_khatri_rao_rows(c: CPRep, X, skip: int | None = None) -> np.ndarray:
    """Elementwise product of x^T U^{(q)} over q != skip (1-based); a (T, r) array."""
    X = _states(X)
    b = np.ones((X.shape[1], c.rank))
    for q, prod in enumerate(cp_mode_products(c, X), start=1):
        if q != skip:
            b *= prod
    return b


def cp_regression_blocks(c: CPRep, p: int, X) -> np.ndarray:
    X = _states(X)
    k = c.order
    if p == k:
        raise DomainError("the last CP factor is updated by its own least-squares problem")
    if not 1 <= p < k:
        raise DomainError(f"factor index {p} out of range 1..{k - 1}")
    n, T = X.shape
    b = cp_khatri_rao_rows(c, X, skip=p)
    blocks = np.einsum("mc,tc,it->tmci", c.last_factor, b, X, optimize=True)
    return blocks.reshape(T, c.n, -1)


def cp_regression_block(c: CPRep, p: int, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    return cp_regression_blocks(c, p, x[:, None])[0]


def cp_regression_matrix(c: CPRep, p: int, X) -> np.ndarray:
    return _stack(cp_regression_blocks(c, p, X))
