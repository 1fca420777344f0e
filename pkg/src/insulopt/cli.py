"""Configuration-driven command line entry point.

One executable, one JSON config.  The config selects the task (solve, sweep,
verify, oracle-compare), the geometry, the obstacles and the numerical
parameters; the CLI writes all artifacts (summary JSON, field dumps, contour
CSV, property report) into the output directory.  Re-running an identical
config reproduces the summary byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from insulopt.domain import DomainSpec, build_grid, domain_from_config, rasterize
from insulopt.energy import PenaltyParams, energy_breakdown
from insulopt.freeboundary import estimate_lambda, extract_free_boundary, support_radius
from insulopt.oracle import radial_solution
from insulopt.solver import SolveParams, solve_penalized
from insulopt.verify import (
    PropertyReport,
    check_harmonicity,
    check_max_principle,
    check_volume_bound,
    epsilon_sweep,
)

__all__ = ["ConfigError", "RunConfig", "load_config", "run", "main"]


class ConfigError(ValueError):
    """Invalid run configuration; carries the JSON path of the offending key."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


@dataclass
class RunConfig:
    task: str
    spec: DomainSpec
    obstacles: object
    resolution: int
    resolutions: list[int]
    penalty: PenaltyParams
    solve_params: SolveParams
    eps_list: list[float]
    out_dir: Path
    seed: int
    raw: dict


def _require(cfg: dict, key: str, path: str):
    if key not in cfg:
        raise ConfigError(f"{path}.{key}", "missing required key")
    return cfg[key]


def _positive(value, path: str) -> float:
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(path, f"expected a number, got {value!r}") from None
    if v <= 0 or not math.isfinite(v):
        raise ConfigError(path, f"must be a positive finite number, got {v}")
    return v


def load_config(cfg: dict, out_override: str | None = None, seed_override: int | None = None) -> RunConfig:
    """Validate the raw config dict; errors name the offending JSON path."""
    task = cfg.get("task", "solve")
    if task not in ("solve", "sweep", "verify", "oracle-compare"):
        raise ConfigError("task", f"unknown task {task!r}")

    dom = _require(cfg, "domain", "")
    _positive(dom.get("R"), "domain.R")
    _positive(dom.get("mu"), "domain.mu")
    try:
        spec, obstacles = domain_from_config(dom)
    except (KeyError, ValueError) as exc:
        raise ConfigError("domain", str(exc)) from None

    grid_cfg = cfg.get("grid", {})
    resolution = int(grid_cfg.get("resolution", 129))
    if resolution < 6:
        raise ConfigError("grid.resolution", f"too coarse: {resolution}")
    resolutions = [int(r) for r in grid_cfg.get("resolutions", [])]

    pen = cfg.get("penalty", {})
    eps = _positive(pen.get("eps", 0.05), "penalty.eps")
    if eps >= 1.0:
        raise ConfigError("penalty.eps", f"must be below 1, got {eps}")
    # tau and threshold defaults are tied to sup(phi), resolved after binding
    tau = pen.get("tau")
    pos_threshold = pen.get("pos_threshold")

    sol = cfg.get("solve", {})
    seed = int(sol.get("seed", 0)) if seed_override is None else seed_override
    try:
        solve_params = SolveParams(
            max_iters=int(sol.get("max_iters", 60000)),
            tol=float(sol.get("tol", 1e-11)),
            step0=sol.get("step0"),
            tau_schedule=tuple(sol["tau_schedule"]) if "tau_schedule" in sol else None,
            seed=seed,
            init=sol.get("init", "harmonic"),
            step_rule=sol.get("step_rule", "backtracking"),
        )
    except ValueError as exc:
        raise ConfigError("solve", str(exc)) from None

    sweep_cfg = cfg.get("sweep", {})
    eps_list = [float(e) for e in sweep_cfg.get("eps_list", [])]
    if task == "sweep" and not eps_list:
        raise ConfigError("sweep.eps_list", "required for task=sweep")

    out_dir = Path(out_override or cfg.get("output", "out"))

    # Bind obstacles once to get sup(phi)-scaled penalty defaults.
    grid = build_grid(spec, resolution)
    masks = rasterize(spec, grid)
    bound = obstacles.on_grid(masks)
    penalty = PenaltyParams.for_scale(
        eps=eps,
        mu=spec.mu,
        sup_phi=bound.sup_phi,
        tau=float(tau) if tau is not None else None,
        pos_threshold=float(pos_threshold) if pos_threshold is not None else None,
    )
    return RunConfig(
        task=task,
        spec=spec,
        obstacles=obstacles,
        resolution=resolution,
        resolutions=resolutions,
        penalty=penalty,
        solve_params=solve_params,
        eps_list=eps_list,
        out_dir=out_dir,
        seed=seed,
        raw=cfg,
    )


def _json_dump(obj, path: Path):
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _contours_geojson(fb):
    return {
        "type": "MultiLineString",
        "coordinates": [[[float(x), float(y)] for x, y in chain] for chain in fb.polylines],
    }


def _write_contours_csv(fb, path: Path):
    with open(path, "w") as f:
        f.write("chain_id,x,y\n")
        for cid, chain in enumerate(fb.polylines):
            for x, y in chain:
                f.write(f"{cid},{x:.17g},{y:.17g}\n")


def _solve_artifacts(rc: RunConfig, out: Path, resolution: int | None = None, tag: str = ""):
    resolution = resolution or rc.resolution
    grid = build_grid(rc.spec, resolution)
    masks = rasterize(rc.spec, grid)
    result = solve_penalized(rc.spec, masks, rc.obstacles, rc.penalty, rc.solve_params)
    fb = extract_free_boundary(result.u, masks, rc.penalty)
    breakdown = energy_breakdown(result.u, masks, rc.penalty)
    lam = None
    if fb.n_chains > 0:
        est = estimate_lambda(result.u, fb)
        lam = {"mean": est.mean, "cv": est.cv, "n_samples": est.n_samples, "n_skipped": est.n_skipped}
    summary = {
        "task": rc.task,
        "seed": rc.seed,
        "grid": {"resolution": resolution, "h": grid.h},
        "energy": result.energy,
        "penalized_energy": result.penalized_energy,
        "smoothed_penalized_energy": breakdown.penalized_smoothed,
        "exterior_volume": result.exterior_volume,
        "support_radius": support_radius(result.u, rc.penalty),
        "iterations": result.iterations,
        "converged": result.converged,
        "free_boundary": {
            "status": fb.status,
            "chains": fb.n_chains,
            "length": fb.total_length,
            "lines": _contours_geojson(fb),
        },
        "lambda": lam,
    }
    result.u.write_csv(out / f"u{tag}.csv")
    result.u.write_binary(out / f"u{tag}.bin")
    _write_contours_csv(fb, out / f"contours{tag}.csv")
    return summary, result.converged, result, masks


def _task_solve(rc: RunConfig, out: Path, jobs: int) -> int:
    if rc.resolutions:
        # independent resolutions fan out over a shared-nothing worker pool
        with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
            futures = [
                pool.submit(_solve_artifacts, rc, out, res, f"_{res}") for res in rc.resolutions
            ]
            summaries = [f.result()[0] for f in futures]
        _json_dump({"task": "solve", "runs": summaries}, out / "summary.json")
        return 0
    summary, _, _, _ = _solve_artifacts(rc, out)
    _json_dump(summary, out / "summary.json")
    return 0


def _task_sweep(rc: RunConfig, out: Path, jobs: int) -> int:
    grid = build_grid(rc.spec, rc.resolution)
    masks = rasterize(rc.spec, grid)
    sweep = epsilon_sweep(rc.spec, masks, rc.obstacles, rc.eps_list, rc.penalty, rc.solve_params)
    with open(out / "sweep.csv", "w") as f:
        f.write("eps,exterior_volume,energy,lambda_mean,lambda_cv,support_radius,iterations,converged\n")
        for r in sweep.rows:
            f.write(
                f"{r.eps},{r.exterior_volume:.17g},{r.energy:.17g},{r.lambda_mean:.17g},"
                f"{r.lambda_cv:.17g},{r.support_radius:.17g},{r.iterations},{int(r.converged)}\n"
            )
    if sweep.results:
        sweep.results[-1].u.write_csv(out / "u.csv")
        sweep.results[-1].u.write_binary(out / "u.bin")
    summary = {"task": "sweep", "seed": rc.seed, "sweep": sweep.to_dict()}
    _json_dump(summary, out / "summary.json")
    return 0


def _task_verify(rc: RunConfig, out: Path, jobs: int) -> int:
    summary, converged, result, masks = _solve_artifacts(rc, out)
    records = [
        check_max_principle(result),
        check_harmonicity(result, masks),
        check_volume_bound(result, rc.penalty),
    ]
    report = PropertyReport(records)
    _json_dump(report.to_dict(), out / "report.json")
    summary["report"] = report.to_dict()
    _json_dump(summary, out / "summary.json")
    print(report.table())
    return 0 if (report.overall and converged) else 1


def _task_oracle_compare(rc: RunConfig, out: Path, jobs: int) -> int:
    if rc.spec.shape != "disk" or rc.obstacles.kind != "constant":
        raise ConfigError("task", "oracle-compare needs a disk domain with constant obstacles")
    summary, _, result, masks = _solve_artifacts(rc, out)
    oracle = radial_solution(
        a=float(rc.spec.params["a"]),
        c=float(rc.obstacles.params["lower"]),
        mu=rc.spec.mu,
    )
    lam = summary["lambda"]
    comparison = {
        "energy": {"solver": result.energy, "oracle": oracle.energy,
                   "rel_err": abs(result.energy - oracle.energy) / oracle.energy},
        "volume": {"solver": result.exterior_volume, "oracle": oracle.volume,
                   "rel_err": abs(result.exterior_volume - oracle.volume) / oracle.volume},
        "lambda": {
            "solver": None if lam is None else lam["mean"],
            "oracle": oracle.gradient_jump,
            "rel_err": None
            if lam is None
            else abs(lam["mean"] - oracle.gradient_jump) / oracle.gradient_jump,
        },
        "tolerances": {"energy": 0.03, "volume": 0.03, "lambda": 0.08},
    }
    comparison["within_tolerance"] = bool(
        comparison["energy"]["rel_err"] <= 0.03
        and comparison["volume"]["rel_err"] <= 0.03
        and lam is not None
        and comparison["lambda"]["rel_err"] <= 0.08
    )
    summary["oracle_comparison"] = comparison
    _json_dump(summary, out / "summary.json")
    return 0


_TASKS = {
    "solve": _task_solve,
    "sweep": _task_sweep,
    "verify": _task_verify,
    "oracle-compare": _task_oracle_compare,
}


def run(config: dict, out_dir: str | None = None, seed: int | None = None,
        jobs: int = 1, quiet: bool = False) -> int:
    """Execute one configured task; returns the process exit status."""
    rc = load_config(config, out_override=out_dir, seed_override=seed)
    rc.out_dir.mkdir(parents=True, exist_ok=True)
    if not quiet:
        print(f"task={rc.task} resolution={rc.resolution} out={rc.out_dir}")
    return _TASKS[rc.task](rc, rc.out_dir, jobs)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="insulopt",
        description="Volume-constrained double-obstacle energy minimization harness",
    )
    parser.add_argument("--config", required=True, help="path to the JSON run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--jobs", type=int, default=1, help="worker pool size for independent sub-solves")
    parser.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)

    try:
        config = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    try:
        return run(config, out_dir=args.out, seed=args.seed, jobs=args.jobs, quiet=args.quiet)
    except ConfigError as exc:
        print(f"error: invalid config at {exc.path}: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
