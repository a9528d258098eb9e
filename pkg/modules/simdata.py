"""
Synthetic ground truths, trajectory simulation and noisy data sets.

Derivatives are never differenced: X1 is the model's own vector field
evaluated at the sampled states.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from loguru import logger

from core.config import DatasetSpec, NoiseSpec
from core.decomp import eval_field, random_cp, random_ht, random_tt, rescale_output
from core.errors import DatasetError, DomainError, NotDeskScaleError
from core.tensor import DenseTensor, almost_symmetrize
from core.tree import DimensionTree, balanced_tree, tree_from_nested
from utils.io_helpers import read_json, read_matrix_csv, write_json, write_matrix_csv

SPHERE_SAMPLES = 256


@dataclass
class TrajectoryData:
    X0: np.ndarray
    X1: np.ndarray
    tau: float
    t0: float = 0.0
    segments: list[tuple[int, int]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    seed: int | None = None
    noise: dict | None = None

    def __post_init__(self):
        self.X0 = np.asarray(self.X0, dtype=np.float64)
        self.X1 = np.asarray(self.X1, dtype=np.float64)
        if self.X0.ndim != 2 or self.X0.shape != self.X1.shape:
            raise DatasetError(f"X0 and X1 must be equal-shape matrices, got {self.X0.shape} and {self.X1.shape}")
        if not self.segments:
            self.segments = [(0, self.X0.shape[1])]

    @property
    def n(self) -> int:
        return self.X0.shape[0]

    @property
    def T(self) -> int:
        return self.X0.shape[1]

    def sidecar(self) -> dict:
        return {
            "n": self.n,
            "T": self.T,
            "tau": self.tau,
            "t0": self.t0,
            "segments": [list(s) for s in self.segments],
            "seed": self.seed,
            "noise": self.noise,
            "notes": self.notes,
        }


# --------------------------------------------------------------------------
# ground truths
# --------------------------------------------------------------------------

def _unit_sphere_scale(model, n: int, rng: np.random.Generator):
    X = rng.standard_normal((n, SPHERE_SAMPLES))
    X /= np.linalg.norm(X, axis=0)
    med = float(np.median(np.linalg.norm(eval_field(model, X), axis=0)))
    return model if med == 0.0 else rescale_output(model, 1.0 / med)


def gen_tt_model(n: int, k: int, ranks, seed: int):
    ranks = [int(r) for r in ranks]
    if len(ranks) != k + 1 or ranks[0] != 1 or ranks[-1] != 1:
        raise DomainError(f"TT ranks for k={k} must be r_0..r_{k} with r_0 = r_k = 1, got {ranks}")
    for p in range(1, k):
        if not 1 <= ranks[p] <= min(ranks[p - 1] * n, n * ranks[p + 1]):
            raise DomainError(f"TT rank r_{p} = {ranks[p]} is not attainable with n={n} and ranks {ranks}")
    rng = np.random.default_rng(seed)
    return _unit_sphere_scale(random_tt(n, k, ranks, rng), n, rng)


def gen_ht_model(n: int, k: int, ranks, seed: int, tree=None):
    if isinstance(tree, DimensionTree):
        tree = tree.with_ranks(ranks) if ranks is not None else tree
    elif tree is not None:
        tree = tree_from_nested(tree, ranks)
    else:
        tree = balanced_tree(k, ranks)
    if tree.order != k:
        raise DomainError(f"tree covers {tree.order} modes, expected {k}")
    for node in tree.nodes:
        if not node.is_leaf:
            rl, rr = tree.nodes[node.left].rank, tree.nodes[node.right].rank
            if node.rank > rl * rr:
                raise DomainError(f"HT rank {node.rank} at {node.modes} exceeds child rank product {rl * rr}")
    tree.check_ranks(n)
    rng = np.random.default_rng(seed)
    return _unit_sphere_scale(random_ht(n, tree, rng), n, rng)


def gen_cp_model(n: int, k: int, r: int, seed: int):
    rng = np.random.default_rng(seed)
    return _unit_sphere_scale(random_cp(n, k, int(r), rng), n, rng)


def gen_sparse_model(n: int, k: int, sparsity: float, seed: int, max_entries: int | None = None) -> DenseTensor:
    """Gaussian entries kept independently with probability `sparsity`, then almost-symmetrized."""
    if not 0 < sparsity <= 1:
        raise DomainError(f"sparsity must lie in (0, 1], got {sparsity}")
    entries = n ** k
    if max_entries is not None and entries > max_entries:
        raise NotDeskScaleError(f"sparse model with {entries} entries exceeds the cap {max_entries}")
    rng = np.random.default_rng(seed)
    mask = rng.random(entries) < sparsity
    data = np.zeros(entries)
    data[mask] = rng.standard_normal(int(mask.sum()))
    if not mask.any():
        logger.warning(f"sparse model n={n}, k={k}, sparsity={sparsity} drew no nonzeros; the tensor is zero")
    return almost_symmetrize(DenseTensor((n,) * k, data))


# --------------------------------------------------------------------------
# simulation
# --------------------------------------------------------------------------

def rk4_step(model, x: np.ndarray, tau: float) -> np.ndarray:
    k1 = eval_field(model, x)
    k2 = eval_field(model, x + 0.5 * tau * k1)
    k3 = eval_field(model, x + 0.5 * tau * k2)
    k4 = eval_field(model, x + tau * k3)
    return x + (tau / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(model, x0, tau: float, steps: int, blowup: float = 1e3, t0: float = 0.0) -> TrajectoryData:
    """
    Classical RK4 from x0; `steps` samples at t0, t0 + tau, ...

    The segment stops early, keeping the samples so far, once the state
    leaves the ball of radius `blowup` or turns non-finite.
    """
    if tau <= 0:
        raise DomainError(f"sampling period must be positive, got {tau}")
    x = np.asarray(x0, dtype=np.float64).reshape(-1)
    states = []
    notes = []
    for j in range(steps):
        if not np.all(np.isfinite(x)) or np.linalg.norm(x) > blowup:
            notes.append(f"segment truncated at step {j} of {steps} (|x| left the bound {blowup:g})")
            logger.warning(notes[-1])
            break
        states.append(x)
        if j + 1 < steps:
            with np.errstate(over="ignore", invalid="ignore"):
                x = rk4_step(model, x, tau)
    n = x.size
    X0 = np.stack(states, axis=1) if states else np.zeros((n, 0))
    X1 = eval_field(model, X0) if states else np.zeros((n, 0))
    return TrajectoryData(X0, X1, tau=tau, t0=t0, segments=[(0, X0.shape[1])], notes=notes)


def sample_dataset(model, num_trajectories: int = 30, steps: int = 10, tau: float = 0.01,
                   half_width: float = 0.5, seed: int = 0, blowup: float = 1e3) -> TrajectoryData:
    """
    Concatenate M short trajectories with initial states uniform on the cube
    [-half_width, half_width]^n. Segment i draws from the stream (seed, i).
    """
    n = model.dims[0]
    X0_parts, X1_parts, segments, notes = [], [], [], []
    start = 0
    for idx in range(num_trajectories):
        rng = np.random.default_rng([seed, idx])
        x0 = rng.uniform(-half_width, half_width, n)
        seg = integrate(model, x0, tau, steps, blowup)
        notes.extend(f"trajectory {idx}: {note}" for note in seg.notes)
        if seg.T == 0:
            continue
        X0_parts.append(seg.X0)
        X1_parts.append(seg.X1)
        segments.append((start, start + seg.T))
        start += seg.T
    if not X0_parts:
        raise DatasetError(f"all {num_trajectories} trajectories left the blow-up bound before the first sample")
    return TrajectoryData(
        np.concatenate(X0_parts, axis=1),
        np.concatenate(X1_parts, axis=1),
        tau=tau,
        segments=segments,
        notes=notes,
        seed=seed,
    )


def sample_from_spec(model, spec: DatasetSpec, seed: int) -> TrajectoryData:
    return sample_dataset(
        model,
        num_trajectories=spec.num_trajectories,
        steps=spec.steps,
        tau=spec.tau,
        half_width=spec.half_width,
        seed=spec.seed if spec.seed is not None else seed,
        blowup=spec.blowup,
    )


def add_noise(data: TrajectoryData, spec: NoiseSpec) -> TrajectoryData:
    """X1 + W with W i.i.d. Gaussian; X0 is left untouched."""
    if spec.sigma == 0.0:
        return replace(data, X1=data.X1.copy(), noise=asdict_noise(spec))
    n, T = data.X1.shape
    if spec.mode == "relative":
        std = spec.sigma * float(np.linalg.norm(data.X1)) / math.sqrt(n * T)
    else:
        std = spec.sigma
    seed = spec.seed if spec.seed is not None else (data.seed or 0)
    W = np.random.default_rng([seed, 7919]).normal(0.0, std, size=(n, T))
    return replace(data, X1=data.X1 + W, noise=asdict_noise(spec))


def asdict_noise(spec: NoiseSpec) -> dict:
    return {"sigma": spec.sigma, "mode": spec.mode, "seed": spec.seed}


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------

def save_dataset(data: TrajectoryData, directory, extra: dict | None = None):
    directory = Path(directory)
    write_matrix_csv(directory / "X0.csv", data.X0)
    write_matrix_csv(directory / "X1.csv", data.X1)
    sidecar = data.sidecar()
    sidecar.update(extra or {})
    write_json(directory / "dataset.json", sidecar)


def load_dataset(directory) -> TrajectoryData:
    directory = Path(directory)
    try:
        meta = read_json(directory / "dataset.json")
        X0 = read_matrix_csv(directory / "X0.csv")
        X1 = read_matrix_csv(directory / "X1.csv")
    except FileNotFoundError as e:
        raise DatasetError(f"dataset incomplete in {directory}: {e.filename} is missing") from None
    except ValueError as e:
        raise DatasetError(f"dataset in {directory} is malformed: {e}") from None
    if X0.shape != (meta["n"], meta["T"]):
        raise DatasetError(f"X0.csv has shape {X0.shape}, sidecar says {(meta['n'], meta['T'])}")
    return TrajectoryData(
        X0,
        X1,
        tau=meta.get("tau", 0.0),
        t0=meta.get("t0", 0.0),
        segments=[tuple(s) for s in meta.get("segments", [])],
        notes=list(meta.get("notes", [])),
        seed=meta.get("seed"),
        noise=meta.get("noise"),
    )
