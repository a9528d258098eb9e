"""
Alternating least squares identification of homogeneous polynomial systems.

Each fitter sweeps over the blocks of its representation and replaces one
block at a time by the exact minimizer of ||X1 - F0||_F^2 with all other
blocks fixed, so the objective recorded after every sweep never increases.
The lifting baseline solves for the full mode-k unfolding instead.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from loguru import logger

from core.config import IdentConfig
from core.decomp import (
    CPRep,
    HTRep,
    TTRep,
    cp_normalize,
    eval_field,
    ht_node_envs,
    ht_node_values,
    ht_orthonormalize_leaves,
    param_count,
    random_cp,
    random_ht,
    random_tt,
    rescale_output,
    to_full,
    tt_orthonormalize_core,
)
from core.errors import DomainError, NotDeskScaleError
from core.tensor import DenseTensor, almost_symmetrize, frobenius_relative, khatri_rao_power
from core.tree import DimensionTree
from modules.lstsq import LstsqResult, solve_ls
from modules.regression import (
    cp_khatri_rao_rows,
    cp_regression_matrix,
    ht_internal_ls,
    ht_leaf_ls,
    tt_regression_matrix,
)

DEFAULT_MAX_ENTRIES = 20_000_000
MONOTONE_SLACK = 1e-12


@dataclass
class FitReport:
    method: str
    objective_per_sweep: list[float] = field(default_factory=list)
    e_pred_per_sweep: list[float] = field(default_factory=list)
    e_ident_per_sweep: list[float] = field(default_factory=list)
    initial_objective: float = float("nan")
    e_pred: float = float("nan")
    e_ident: float | None = None
    sweeps_run: int = 0
    wall_time: float = 0.0
    converged: bool = False
    status: str = "max_sweeps"
    notes: list[str] = field(default_factory=list)
    block_ranks: dict[str, list[int]] = field(default_factory=dict)
    param_count: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def objective(rep, X0, X1) -> float:
    return float(np.sum((X1 - eval_field(rep, X0)) ** 2))


def prediction_error(rep, X0, X1) -> float:
    """E_pred = ||X1 - F0||_F / ||X1||_F."""
    return frobenius_relative(X1, eval_field(rep, X0))


def identification_error(truth, fitted, max_entries: int | None = DEFAULT_MAX_ENTRIES) -> float:
    """Relative Frobenius error between the almost-symmetric parts of truth and fit."""
    a = almost_symmetrize(to_full(truth, max_entries))
    b = almost_symmetrize(to_full(fitted, max_entries))
    return frobenius_relative(a, b)


class _SweepLog:
    """Collects block ranks and warnings for one fit, warning once per block."""

    def __init__(self, report: FitReport):
        self.report = report
        self._warned: set[str] = set()

    def solve(self, name: str, H, y, rcond: float) -> LstsqResult:
        res = solve_ls(H, y, rcond=rcond)
        self.report.block_ranks[name] = [res.rank, res.n_cols]
        if not res.full_rank:
            self.note_once(
                name, f"{name}: regression matrix rank {res.rank} < {res.n_cols} columns, using minimum-norm solution"
            )
        return res

    def note_once(self, key: str, message: str):
        if key not in self._warned:
            self._warned.add(key)
            self.note(message)

    def note(self, message: str):
        logger.warning(message)
        self.report.notes.append(message)


def _vec(X1) -> np.ndarray:
    return np.asarray(X1, dtype=np.float64).reshape(-1, order="F")


def _check_data(X0, X1) -> tuple[np.ndarray, np.ndarray]:
    X0 = np.asarray(X0, dtype=np.float64)
    X1 = np.asarray(X1, dtype=np.float64)
    if X0.ndim != 2 or X0.shape != X1.shape:
        raise DomainError(f"X0 and X1 must be n x T matrices of equal shape, got {X0.shape} and {X1.shape}")
    if X0.shape[1] < 1:
        raise DomainError("at least one sample is needed")
    return X0, X1


def _scale_to_data(rep, X0, X1):
    """Best single scalar for a random start, applied through the output block."""
    F0 = eval_field(rep, X0)
    denom = float(np.sum(F0 * F0))
    if denom == 0.0:
        return rep
    return rescale_output(rep, float(np.sum(F0 * X1)) / denom)


def _run_sweeps(
    method: str,
    rep,
    sweep: Callable,
    X0: np.ndarray,
    X1: np.ndarray,
    cfg: IdentConfig,
    truth=None,
    max_entries: int | None = DEFAULT_MAX_ENTRIES,
):
    report = FitReport(method=method)
    log = _SweepLog(report)
    start = time.perf_counter()
    x1_norm2 = float(np.sum(X1 * X1))
    floor = max((1e-14 ** 2) * x1_norm2, np.finfo(float).tiny)
    track_ident = truth is not None
    if track_ident and max_entries is not None and math.prod(truth.dims) > max_entries:
        log.note("ground truth exceeds the full-reconstruction cap, identification error not tracked")
        track_ident = False

    e_prev = objective(rep, X0, X1)
    report.initial_objective = e_prev
    logger.info(f"{method}: starting ALS, initial objective {e_prev:.6e}, {report_shape(X0)}")

    for sweep_no in range(1, cfg.max_sweeps + 1):
        rep = sweep(rep, log, e_prev)
        e = objective(rep, X0, X1)
        report.objective_per_sweep.append(e)
        report.e_pred_per_sweep.append(math.sqrt(e / x1_norm2) if x1_norm2 > 0 else math.sqrt(e))
        if track_ident:
            try:
                report.e_ident_per_sweep.append(identification_error(truth, rep, max_entries))
            except NotDeskScaleError as exc:
                log.note(f"identification error not tracked: {exc}")
                track_ident = False
        report.sweeps_run = sweep_no
        rel = abs(e_prev - e) / max(e_prev, floor)
        logger.debug(f"{method}: sweep {sweep_no} objective {e:.6e} relative change {rel:.3e}")

        if sweep_no >= cfg.min_sweeps and (e <= floor or rel < cfg.tol):
            report.status = "converged"
            break
        if cfg.max_time is not None and time.perf_counter() - start > cfg.max_time:
            report.status = "timeout"
            log.note(f"{method}: stopped after {sweep_no} sweeps, time budget {cfg.max_time:g}s exhausted")
            break
        e_prev = e

    report.wall_time = time.perf_counter() - start
    report.converged = report.status == "converged"
    report.e_pred = prediction_error(rep, X0, X1) if x1_norm2 > 0 else math.sqrt(objective(rep, X0, X1))
    if track_ident:
        report.e_ident = report.e_ident_per_sweep[-1] if report.e_ident_per_sweep else identification_error(truth, rep, max_entries)
    report.param_count = param_count(rep)
    logger.info(
        f"{method}: {report.status} after {report.sweeps_run} sweeps in {report.wall_time:.2f}s, "
        f"E_pred={report.e_pred:.3e}" + (f", E_ident={report.e_ident:.3e}" if report.e_ident is not None else "")
    )
    return rep, report


def report_shape(X0) -> str:
    return f"n={X0.shape[0]}, T={X0.shape[1]}"


# --------------------------------------------------------------------------
# tensor train
# --------------------------------------------------------------------------

def tt_als_fit(X0, X1, cfg: IdentConfig, ranks=None, init: TTRep | None = None, truth=None,
               max_entries: int | None = DEFAULT_MAX_ENTRIES) -> tuple[TTRep, FitReport]:
    """
    Fit a tensor-train dynamic tensor to (X0, X1).

    Cores are updated in place left to right; after each update the core is
    left-orthonormalized and its remainder pushed into the next core. With
    `cfg.rank_adapt` the orthonormalization truncates singular values below
    `cfg.trunc` (relative), which may shrink ranks.
    """
    X0, X1 = _check_data(X0, X1)
    n = X0.shape[0]
    if init is None:
        ranks = ranks or cfg.tt_ranks
        if ranks is None:
            raise DomainError("TT fit needs ranks (or an initial representation)")
        init = _scale_to_data(random_tt(n, len(ranks) - 1, ranks, np.random.default_rng(cfg.seed)), X0, X1)
    y = _vec(X1)
    delta = cfg.trunc if cfg.rank_adapt else 0.0

    def sweep(t: TTRep, log: _SweepLog, _e_prev: float) -> TTRep:
        k = t.order
        for p in range(1, k + 1):
            res = log.solve(f"tt.core{p}", tt_regression_matrix(t, p, X0), y, cfg.rcond)
            r0, _, r1 = t.cores[p - 1].shape
            cores = list(t.cores)
            cores[p - 1] = res.x.reshape(r0, n, r1, order="F")
            t = TTRep(cores)
            if p < k:
                t = tt_orthonormalize_core(t, p - 1, delta)
        return t

    return _run_sweeps("tt", init, sweep, X0, X1, cfg, truth, max_entries)


# --------------------------------------------------------------------------
# hierarchical Tucker
# --------------------------------------------------------------------------

def _ht_solve_leaf(h: HTRep, leaf: int, X0, y, log, rcond, values=None, envs=None) -> np.ndarray:
    node = h.tree.nodes[leaf]
    p = node.modes[0]
    res = log.solve(f"ht.leaf{p}", ht_leaf_ls(h, p, X0, values, envs), y, rcond)
    return res.x.reshape(X0.shape[0], node.rank, order="F")


def _ht_solve_internal(h: HTRep, node_id: int, X0, y, log, rcond, values=None, envs=None) -> np.ndarray:
    node = h.tree.nodes[node_id]
    name = "ht.node" + "".join(str(m) for m in node.modes)
    res = log.solve(name, ht_internal_ls(h, node_id, X0, values, envs), y, rcond)
    return res.x.reshape(-1, node.rank, order="F")


def _ht_group_update(h: HTRep, group: list[int], solve_one, X0, X1, e_before: float, mode: str, log) -> HTRep:
    """
    Update a group of disjoint blocks.

    In jacobi mode every block is solved against the same snapshot and the
    results applied together; if that raises the objective the group is redone
    one block at a time from the snapshot, where each step is an exact block
    minimization.
    """
    if mode == "jacobi" and len(group) > 1:
        values = ht_node_values(h, X0)
        envs = ht_node_envs(h, values)
        trial = h.copy()
        for node_id in group:
            _assign(trial, node_id, solve_one(h, node_id, values, envs))
        e_trial = objective(trial, X0, X1)
        if e_trial <= e_before * (1 + MONOTONE_SLACK) + np.finfo(float).tiny:
            return trial
        logger.debug(f"ht: simultaneous update of nodes {group} raised the objective, redoing sequentially")
    out = h.copy()
    for node_id in group:
        _assign(out, node_id, solve_one(out, node_id, None, None))
    return out


def _assign(h: HTRep, node_id: int, block: np.ndarray):
    if h.tree.nodes[node_id].is_leaf:
        h.leaf_factors[node_id] = block
    else:
        h.transfer[node_id] = block


def ht_als_fit(X0, X1, tree: DimensionTree | None, cfg: IdentConfig, init: HTRep | None = None, truth=None,
               max_entries: int | None = DEFAULT_MAX_ENTRIES) -> tuple[HTRep, FitReport]:
    """
    Fit a hierarchical Tucker dynamic tensor over `tree`.

    One sweep updates all leaf factors against the previous sweep's values,
    orthonormalizes the leaves, then walks the internal levels from the
    deepest one up to the root, updating the transfer matrices of each level
    against that level's snapshot.
    """
    X0, X1 = _check_data(X0, X1)
    n = X0.shape[0]
    if init is None:
        if tree is None:
            raise DomainError("HT fit needs a dimension tree (or an initial representation)")
        init = _scale_to_data(random_ht(n, tree, np.random.default_rng(cfg.seed)), X0, X1)
    tree = init.tree
    tree.check_ranks(n)
    y = _vec(X1)

    def leaf_solver(log):
        return lambda h, node_id, values, envs: _ht_solve_leaf(h, node_id, X0, y, log, cfg.rcond, values, envs)

    def internal_solver(log):
        return lambda h, node_id, values, envs: _ht_solve_internal(h, node_id, X0, y, log, cfg.rcond, values, envs)

    def sweep(h: HTRep, log: _SweepLog, e_prev: float) -> HTRep:
        h = _ht_group_update(h, tree.leaves, leaf_solver(log), X0, X1, e_prev, cfg.ht_update, log)
        h = ht_orthonormalize_leaves(h)
        for level in reversed(tree.internal_levels()):
            if not level:
                continue
            e_level = objective(h, X0, X1)
            h = _ht_group_update(h, level, internal_solver(log), X0, X1, e_level, cfg.ht_update, log)
        return h

    return _run_sweeps("ht", init, sweep, X0, X1, cfg, truth, max_entries)


# --------------------------------------------------------------------------
# canonical polyadic
# --------------------------------------------------------------------------

def cp_als_fit(X0, X1, cfg: IdentConfig, k: int | None = None, rank: int | None = None, init: CPRep | None = None,
               truth=None, max_entries: int | None = DEFAULT_MAX_ENTRIES) -> tuple[CPRep, FitReport]:
    """
    Fit a CP dynamic tensor with the weights absorbed into the last factor.

    Factors 1..k-1 are solved from the stacked regression matrices and
    normalized to unit columns; the last factor is then solved directly from
    B^T U_k^T = X1^T with B the Khatri-Rao rows of all k-1 factors.
    """
    X0, X1 = _check_data(X0, X1)
    n = X0.shape[0]
    if init is None:
        k = k or (truth.order if truth is not None else None)
        rank = rank or cfg.cp_rank
        if k is None or rank is None:
            raise DomainError("CP fit needs the order k and a rank (or an initial representation)")
        init = _scale_to_data(random_cp(n, k, rank, np.random.default_rng(cfg.seed)), X0, X1)
    y = _vec(X1)

    def sweep(c: CPRep, log: _SweepLog, _e_prev: float) -> CPRep:
        for p in range(1, c.order):
            res = log.solve(f"cp.factor{p}", cp_regression_matrix(c, p, X0), y, cfg.rcond)
            factors = list(c.factors)
            factors[p - 1] = res.x.reshape(n, c.rank, order="F")
            for col in np.flatnonzero(~factors[p - 1].any(axis=0)):
                log.note_once(f"cp.column{col}", f"CP column {col} vanished; its weight is zero")
            c = cp_normalize(CPRep(factors, c.last_factor), warn=False)
        B = cp_khatri_rao_rows(c, X0)
        if np.any(np.all(B == 0.0, axis=0)):
            log.note_once("cp.khatri_rao", "cp: a Khatri-Rao column is identically zero, last factor solved with min norm")
        res = log.solve(f"cp.factor{c.order}", B, X1.T, cfg.rcond)
        return CPRep(c.factors, res.x.T)

    return _run_sweeps("cp", init, sweep, X0, X1, cfg, truth, max_entries)


# --------------------------------------------------------------------------
# lifting baseline and informativity
# --------------------------------------------------------------------------

@dataclass
class InformativityResult:
    rank: int
    required: int
    satisfied: bool


def required_rank(n: int, k: int) -> int:
    """Number of distinct degree-(k-1) monomials in n variables."""
    if k < 2:
        raise DomainError(f"informativity needs k >= 2, got {k}")
    return sum(math.comb(n, j) * math.comb(k - 2, j - 1) for j in range(1, min(n, k - 1) + 1))


def informativity_check(X0, k: int) -> InformativityResult:
    X0 = np.asarray(X0, dtype=np.float64)
    required = required_rank(X0.shape[0], k)
    rank = int(np.linalg.matrix_rank(khatri_rao_power(X0, k - 1)))
    return InformativityResult(rank=rank, required=required, satisfied=rank >= required)


def lifting_memory_estimate(n: int, k: int) -> int:
    """Bytes for k float64 unfoldings of a full n^k tensor."""
    return 8 * k * n ** k


def lifting_identify(X0, X1, k: int, rcond: float = 1e-12, notes: list[str] | None = None) -> DenseTensor:
    """
    Full-tensor baseline: minimum-norm solve of X1 = A_(k) (X0 ⊙ ... ⊙ X0), then
    almost-symmetrize the folded tensor.
    """
    X0, X1 = _check_data(X0, X1)
    n = X0.shape[0]
    lifted = khatri_rao_power(X0, k - 1)
    res = solve_ls(lifted.T, X1.T, rcond=rcond)
    required = required_rank(n, k)
    if res.rank < required:
        message = f"lift: lifted data rank {res.rank} below the {required} needed for a unique tensor"
        logger.warning(message)
        if notes is not None:
            notes.append(message)
    full = DenseTensor((n,) * k, res.x.reshape(-1, order="F"))
    return almost_symmetrize(full)


def lifting_fit(X0, X1, k: int, cfg: IdentConfig | None = None, truth=None,
                max_entries: int | None = DEFAULT_MAX_ENTRIES) -> tuple[DenseTensor, FitReport]:
    """`lifting_identify` wrapped with a FitReport so it sits next to the ALS fitters."""
    cfg = cfg or IdentConfig()
    X0, X1 = _check_data(X0, X1)
    report = FitReport(method="lift", status="converged", converged=True)
    start = time.perf_counter()
    tensor = lifting_identify(X0, X1, k, cfg.rcond, report.notes)
    report.wall_time = time.perf_counter() - start
    e = objective(tensor, X0, X1)
    report.initial_objective = float(np.sum(X1 * X1))
    report.objective_per_sweep = [e]
    report.e_pred = prediction_error(tensor, X0, X1)
    report.e_pred_per_sweep = [report.e_pred]
    report.sweeps_run = 1
    report.param_count = param_count(tensor)
    if truth is not None:
        try:
            report.e_ident = identification_error(truth, tensor, max_entries)
            report.e_ident_per_sweep = [report.e_ident]
        except NotDeskScaleError as exc:
            report.notes.append(str(exc))
    return tensor, report

