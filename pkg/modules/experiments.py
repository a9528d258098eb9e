"""
Experiment commands behind the CLI: generate, identify, compare,
noise-sweep, scaling and convergence.

Each command takes a resolved ExperimentConfig, writes plain CSV / JSON
into the run directory and returns what it wrote so tests can inspect it.
"""
from __future__ import annotations

import csv
import math
import statistics
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List

from loguru import logger
from rich.console import Console
from rich.table import Table

from core.config import ExperimentConfig, IdentConfig, NoiseSpec
from core.errors import ConfigError, DatasetError
from core.fitters.tt import default_tt_ranks
from core.registry import registry
from core.serialize import load_rep, read_tensor_text, save_rep
from core.task_manager import Cell, run_cells
from modules.ident import FitReport, informativity_check, lifting_memory_estimate
from modules.simdata import (
    TrajectoryData,
    add_noise,
    gen_cp_model,
    gen_ht_model,
    gen_sparse_model,
    gen_tt_model,
    load_dataset,
    sample_dataset,
    sample_from_spec,
    save_dataset,
)
from utils.io_helpers import atomic_open, read_json, write_json

console = Console()

ALS_METHODS = ("tt", "ht", "cp")
RECOVERY_E_PRED = 1e-5
RECOVERY_E_IDENT = 1e-3

RESULT_FIELDS = [
    "method", "seed", "sigma", "n", "k", "T", "e_pred", "e_ident",
    "wall_time", "sweeps", "status", "param_count",
]


# --------------------------------------------------------------------------
# shared plumbing
# --------------------------------------------------------------------------

def prepare_run_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.resolved.json", cfg.to_dict())
    return out


def write_csv(path, rows: List[Dict[str, Any]], fieldnames: List[str]):
    with atomic_open(path) as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _fmt(row.get(k)) for k in fieldnames})


def read_csv(path) -> List[Dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def _fmt(value):
    if isinstance(value, float):
        return "" if math.isnan(value) else f"{value:.10g}"
    return "" if value is None else value


def build_model(cfg: ExperimentConfig, seed: int, scheme: str | None = None):
    """Ground-truth model for `scheme` (defaults to the configured one)."""
    spec = cfg.model
    scheme = scheme or spec.scheme
    n, k = spec.n, spec.k
    same = scheme == spec.scheme
    if scheme == "tt":
        ranks = (spec.ranks if same and spec.ranks is not None else None) or cfg.ident.tt_ranks or default_tt_ranks(n, k)
        return gen_tt_model(n, k, ranks, seed)
    if scheme == "ht":
        ranks = (spec.ranks if same else None) or cfg.ident.ht_ranks or 3
        tree = (spec.tree if same else None) or cfg.ident.ht_tree
        return gen_ht_model(n, k, ranks, seed, tree=tree)
    if scheme == "cp":
        rank = (spec.ranks if same else None) or cfg.ident.cp_rank or 3
        return gen_cp_model(n, k, rank, seed)
    if scheme == "sparse":
        return gen_sparse_model(n, k, spec.sparsity, seed, cfg.max_entries)
    if scheme == "file":
        path = Path(spec.path)
        if not path.exists():
            raise DatasetError(f"model file not found: {path}")
        return read_tensor_text(path) if path.suffix == ".txt" else load_rep(path)
    raise ConfigError(f"model.scheme: unsupported scheme {scheme!r}")


def _fit_row(method: str, report: FitReport, seed: int, sigma: float, data: TrajectoryData, k: int) -> dict:
    return {
        "method": method,
        "seed": seed,
        "sigma": sigma,
        "n": data.n,
        "k": k,
        "T": data.T,
        "e_pred": report.e_pred,
        "e_ident": report.e_ident if report.e_ident is not None else float("nan"),
        "wall_time": report.wall_time,
        "sweeps": report.sweeps_run,
        "status": report.status,
        "param_count": report.param_count,
    }


def _fit_cell(method: str, data: TrajectoryData, k: int, ident: IdentConfig, truth, seed: int, sigma: float):
    def run():
        fitter = registry.get_fitter(method)
        _, report = fitter.fit(data.X0, data.X1, k, ident, truth=truth)
        return _fit_row(method, report, seed, sigma, data, k)
    return run


def _rows_from(results, fallback: Dict[str, dict]) -> List[dict]:
    rows = []
    for result in results:
        if result.status == "ok":
            rows.append(result.value)
        else:
            row = dict(fallback[result.name])
            row.update(status=result.status, e_pred=float("nan"), e_ident=float("nan"), wall_time=result.elapsed)
            rows.append(row)
    return rows


def _median(values) -> float:
    finite = [v for v in values if v is not None and isinstance(v, (int, float)) and not math.isnan(v)]
    return statistics.median(finite) if finite else float("nan")


def summarize(rows: List[dict], keys=("method", "sigma")) -> List[dict]:
    groups: Dict[tuple, List[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row[k] for k in keys), []).append(row)
    summary = []
    for key, members in groups.items():
        entry = dict(zip(keys, key))
        entry.update(
            runs=len(members),
            ok=sum(m["status"] in ("converged", "max_sweeps") for m in members),
            e_pred_median=_median([m["e_pred"] for m in members]),
            e_ident_median=_median([m["e_ident"] for m in members]),
            wall_time_median=_median([m["wall_time"] for m in members]),
        )
        summary.append(entry)
    return summary


def print_summary(title: str, summary: List[dict], columns: List[str]):
    table = Table(title=title)
    for col in columns:
        table.add_column(col, justify="right" if col not in ("method", "status") else "left")
    for entry in summary:
        table.add_row(*[_cell_text(entry.get(col)) for col in columns])
    console.print(table)


def _cell_text(value) -> str:
    if isinstance(value, float):
        return "-" if math.isnan(value) else f"{value:.3e}"
    return str(value)


def _ident_for(cfg: ExperimentConfig, index: int) -> IdentConfig:
    return cfg.ident.replace(seed=cfg.ident.seed + index)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_generate(cfg: ExperimentConfig) -> Dict[str, Path]:
    """Ground truth plus a sampled (and optionally noisy) dataset."""
    model = build_model(cfg, cfg.seed)
    data = sample_from_spec(model, cfg.dataset, cfg.seed)
    if cfg.noise and cfg.noise[0].sigma > 0:
        data = add_noise(data, cfg.noise[0])
    info = informativity_check(data.X0, model.order) if _lift_fits(data.n, model.order, cfg) else None
    if info is not None and not info.satisfied:
        logger.warning(f"dataset rank {info.rank} below the {info.required} needed for a unique full tensor")

    out = prepare_run_dir(cfg)
    model_path = out / "model.json"
    dataset_dir = out / "dataset"
    save_rep(model, model_path)
    extra = {"k": model.order, "model": "../model.json", "scheme": cfg.model.scheme}
    if info is not None:
        extra["informativity"] = {"rank": info.rank, "required": info.required, "satisfied": info.satisfied}
    save_dataset(data, dataset_dir, extra)
    console.print(f"[bold green][+] Model written to {model_path}, dataset to {dataset_dir} (T={data.T}).[/bold green]")
    return {"model": model_path, "dataset": dataset_dir}


def _lift_fits(n: int, k: int, cfg: ExperimentConfig) -> bool:
    return lifting_memory_estimate(n, k) <= cfg.lifting_mem_cap


def _dataset_dir(cfg: ExperimentConfig) -> Path:
    if cfg.dataset.path:
        return Path(cfg.dataset.path)
    return Path(cfg.out_dir) / "dataset"


def cmd_identify(cfg: ExperimentConfig) -> Dict[str, FitReport]:
    """Fit the selected methods to a stored dataset."""
    dataset_dir = _dataset_dir(cfg)
    if not (dataset_dir / "dataset.json").exists():
        raise DatasetError(f"no dataset found in {dataset_dir} (run 'generate' first or set dataset.path)")
    data = load_dataset(dataset_dir)
    meta = read_json(dataset_dir / "dataset.json")
    k = int(meta.get("k", cfg.model.k))
    truth = None
    if meta.get("model"):
        model_path = (dataset_dir / meta["model"]).resolve()
        if model_path.exists():
            truth = load_rep(model_path)

    out = prepare_run_dir(cfg)
    reports: Dict[str, FitReport] = {}
    for method in cfg.methods:
        if method == "lift" and not _lift_fits(data.n, k, cfg):
            logger.warning(f"lift: memory estimate {lifting_memory_estimate(data.n, k)} bytes exceeds cap, skipped")
            continue
        console.print(f"[bold cyan][*] STARTING FIT: {method} (n={data.n}, k={k}, T={data.T})[/bold cyan]")
        rep, report = registry.get_fitter(method).fit(data.X0, data.X1, k, cfg.ident, truth=truth)
        method_dir = out / "identify" / method
        save_rep(rep, method_dir / "model.json")
        write_json(method_dir / "report.json", report.to_dict())
        trace = [
            {
                "sweep": i + 1,
                "objective": e,
                "e_pred": report.e_pred_per_sweep[i],
                "e_ident": report.e_ident_per_sweep[i] if i < len(report.e_ident_per_sweep) else float("nan"),
            }
            for i, e in enumerate(report.objective_per_sweep)
        ]
        write_csv(method_dir / "objective.csv", trace, ["sweep", "objective", "e_pred", "e_ident"])
        reports[method] = report
    print_summary(
        "Identification",
        [{"method": m, "status": r.status, "sweeps": r.sweeps_run, "e_pred": r.e_pred,
          "e_ident": r.e_ident if r.e_ident is not None else float("nan"), "wall_time": r.wall_time}
         for m, r in reports.items()],
        ["method", "status", "sweeps", "e_pred", "e_ident", "wall_time"],
    )
    return reports


def _run_comparison(cfg: ExperimentConfig, noise_levels: List[NoiseSpec], description: str) -> List[dict]:
    cells: List[Cell] = []
    fallback: Dict[str, dict] = {}
    for i in range(cfg.seeds):
        seed = cfg.seed + i
        truth = build_model(cfg, seed)
        k = truth.order
        clean = sample_from_spec(truth, cfg.dataset, seed)
        ident = _ident_for(cfg, i)
        for noise in noise_levels:
            spec = noise if noise.seed is not None else replace(noise, seed=seed)
            data = add_noise(clean, spec)
            for method in cfg.methods:
                name = f"{method}/sigma={noise.sigma:g}/seed={seed}"
                base = {"method": method, "seed": seed, "sigma": noise.sigma, "n": data.n, "k": k, "T": data.T,
                        "sweeps": 0, "param_count": 0}
                fallback[name] = base
                if method == "lift" and not _lift_fits(data.n, k, cfg):
                    cells.append(Cell(name, lambda b=base: dict(b, status="skipped_oom", e_pred=float("nan"),
                                                                  e_ident=float("nan"), wall_time=0.0)))
                    continue
                cells.append(Cell(name, _fit_cell(method, data, k, ident, truth, seed, noise.sigma)))
    results = run_cells(cells, parallel=cfg.parallel, timeout=None, description=description)
    return _rows_from(results, fallback)


def cmd_compare(cfg: ExperimentConfig) -> Path:
    """Lifting baseline against the ALS fitters on identical data, repeated over seeds."""
    out = prepare_run_dir(cfg)
    noise = cfg.noise[:1] or [NoiseSpec(0.0)]
    rows = _run_comparison(cfg, noise, "Comparing identification methods...")
    path = out / "compare.csv"
    write_csv(path, rows, RESULT_FIELDS)
    summary = summarize(rows)
    write_csv(out / "compare_summary.csv", summary,
              ["method", "sigma", "runs", "ok", "e_pred_median", "e_ident_median", "wall_time_median"])
    print_summary("Method comparison (medians over seeds)", summary,
                  ["method", "sigma", "runs", "e_pred_median", "e_ident_median", "wall_time_median"])
    return path


def cmd_noise_sweep(cfg: ExperimentConfig) -> Path:
    """cmd_compare repeated over every configured noise level."""
    out = prepare_run_dir(cfg)
    rows = _run_comparison(cfg, cfg.noise, "Sweeping noise levels...")
    path = out / "noise_sweep.csv"
    write_csv(path, rows, RESULT_FIELDS)
    summary = sorted(summarize(rows), key=lambda e: (e["method"], e["sigma"]))
    write_csv(out / "noise_sweep_summary.csv", summary,
              ["method", "sigma", "runs", "ok", "e_pred_median", "e_ident_median", "wall_time_median"])
    print_summary("Noise sweep (medians over seeds)", summary,
                  ["method", "sigma", "runs", "e_pred_median", "e_ident_median"])
    return path


def scaling_ident(cfg: ExperimentConfig, n: int) -> IdentConfig:
    k, r = cfg.scaling_k, cfg.scaling_rank
    return cfg.ident.replace(
        max_sweeps=cfg.scaling_sweeps,
        min_sweeps=cfg.scaling_sweeps,
        max_time=cfg.timeout,
        tt_ranks=default_tt_ranks(n, k, r),
        ht_ranks=r,
        ht_tree=None,
        cp_rank=r,
    )


def cmd_scaling(cfg: ExperimentConfig) -> Path:
    """
    Wall time of each method over the n grid at fixed k with a CP ground truth.

    Initial states are drawn with half-width 0.5 * sqrt(3 / n) so that |x0|
    stays near 0.5 as n grows; otherwise the degree-(k-1) field escapes within
    the first step.
    """
    out = prepare_run_dir(cfg)
    k = cfg.scaling_k
    cells: List[Cell] = []
    fallback: Dict[str, dict] = {}
    for n in cfg.grid:
        truth = gen_cp_model(n, k, cfg.scaling_rank, cfg.seed)
        data = sample_dataset(
            truth,
            num_trajectories=cfg.scaling_trajectories,
            steps=cfg.scaling_steps,
            tau=cfg.dataset.tau,
            half_width=0.5 * math.sqrt(3.0 / n),
            seed=cfg.seed,
            blowup=cfg.dataset.blowup,
        )
        ident = scaling_ident(cfg, n)
        for method in cfg.methods:
            name = f"{method}/n={n}"
            base = {"method": method, "n": n, "k": k, "T": data.T, "seed": cfg.seed, "sigma": 0.0,
                    "sweeps": 0, "param_count": 0}
            fallback[name] = base
            if method == "lift" and not _lift_fits(n, k, cfg):
                logger.info(f"lift at n={n}: estimate {lifting_memory_estimate(n, k)} bytes above cap, skipped")
                cells.append(Cell(name, lambda b=base: dict(b, status="skipped_oom", e_pred=float("nan"),
                                                              e_ident=float("nan"), wall_time=0.0)))
                continue
            cells.append(Cell(name, _fit_cell(method, data, k, ident, None, cfg.seed, 0.0)))
    results = run_cells(cells, parallel=cfg.parallel, timeout=2 * cfg.timeout, description="Timing methods over n...")
    rows = _rows_from(results, fallback)
    path = out / "scaling.csv"
    write_csv(path, rows, ["method", "n", "k", "T", "wall_time", "sweeps", "status", "e_pred", "param_count"])
    print_summary("Scaling", rows, ["method", "n", "status", "sweeps", "wall_time"])
    return path


def cmd_convergence(cfg: ExperimentConfig) -> Path:
    """Per-sweep objective and error traces for structure-matched fits."""
    out = prepare_run_dir(cfg)
    methods = [m for m in cfg.methods if m in ALS_METHODS]
    cells: List[Cell] = []
    for method in methods:
        for i in range(cfg.seeds):
            seed = cfg.seed + i
            truth = build_model(cfg, seed, scheme=method)
            data = sample_from_spec(truth, cfg.dataset, seed)
            if cfg.noise and cfg.noise[0].sigma > 0:
                data = add_noise(data, cfg.noise[0])
            cells.append(Cell(f"{method}/seed={seed}", _trace_cell(method, data, truth, _ident_for(cfg, i), seed)))
    results = run_cells(cells, parallel=cfg.parallel, timeout=None, description="Tracing ALS convergence...")

    trace_rows, summary = [], []
    for result in results:
        if result.status != "ok":
            continue
        trace_rows.extend(result.value)
    for method in methods:
        finals = [rows[-1] for rows in (r.value for r in results if r.status == "ok") if rows and rows[0]["method"] == method]
        recovered = sum(
            row["e_pred"] <= RECOVERY_E_PRED and not math.isnan(row["e_ident"]) and row["e_ident"] <= RECOVERY_E_IDENT
            for row in finals
        )
        summary.append({
            "method": method,
            "runs": len(finals),
            "recovered": recovered,
            "e_pred_median": _median([row["e_pred"] for row in finals]),
            "e_ident_median": _median([row["e_ident"] for row in finals]),
        })
    path = out / "convergence.csv"
    write_csv(path, trace_rows, ["method", "seed", "sweep", "objective", "e_pred", "e_ident"])
    write_csv(out / "convergence_summary.csv", summary, ["method", "runs", "recovered", "e_pred_median", "e_ident_median"])
    print_summary("Convergence", summary, ["method", "runs", "recovered", "e_pred_median", "e_ident_median"])
    return path


def _trace_cell(method: str, data: TrajectoryData, truth, ident: IdentConfig, seed: int):
    def run():
        _, report = registry.get_fitter(method).fit(data.X0, data.X1, truth.order, ident, truth=truth)
        return [
            {
                "method": method,
                "seed": seed,
                "sweep": i + 1,
                "objective": e,
                "e_pred": report.e_pred_per_sweep[i],
                "e_ident": report.e_ident_per_sweep[i] if i < len(report.e_ident_per_sweep) else float("nan"),
            }
            for i, e in enumerate(report.objective_per_sweep)
        ]
    return run


COMMANDS = {
    "generate": cmd_generate,
    "identify": cmd_identify,
    "compare": cmd_compare,
    "noise-sweep": cmd_noise_sweep,
    "scaling": cmd_scaling,
    "convergence": cmd_convergence,
}

# experiment kind in the config -> command run when none is given on the CLI
KIND_COMMANDS = {
    "single-fit": "identify",
    "compare": "compare",
    "noise": "noise-sweep",
    "scaling": "scaling",
    "convergence": "convergence",
}


def command_for(cfg: ExperimentConfig) -> str:
    return KIND_COMMANDS[cfg.kind]


def run_command(name: str, cfg: ExperimentConfig):
    try:
        command = COMMANDS[name]
    except KeyError:
        raise ConfigError(f"unknown command {name!r}") from None
    logger.info(f"STARTING COMMAND: {name} (out={cfg.out_dir}, seed={cfg.seed})")
    result = command(cfg)
    logger.info(f"COMMAND COMPLETE: {name}")
    return result
