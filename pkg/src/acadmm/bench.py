"""Experiment configuration, metrics emission, and the benchmark driver.

``run_experiment`` builds a problem (from a LIBSVM file or a synthetic
generator), runs the selected policy through the distributed runtime, and
writes a per-iteration metrics stream (CSV plus a JSON-lines mirror) and a
JSON summary.  Exit codes: 0 converged, 2 iteration cap reached, 1 error.
"""

from __future__ import annotations

import dataclasses
import json
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .adaptation import POLICY_KINDS, PolicyConfig
from .datagen import (
    Dataset,
    build_problem,
    gen_synthetic1,
    gen_synthetic2,
    PARTITION_MODES,
)
from .engine import EngineConfig, IterationRecord, RunResult
from .errors import InvalidInputError, ParseError, ProtocolError, SubproblemError
from .libsvm import load_libsvm
from .problem import ConsensusProblem, ElasticNet, L1, Ridge
from .runtime import RunTopology, run_distributed
from .subproblems import InnerSolverConfig

METRICS_HEADER = "iter,primal_res_sq,dual_res_sq,tau_min,tau_mean,tau_max,objective,h_progress,wall_ms"

PROBLEM_KINDS = ("enet", "logistic", "svm")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_MAXITER = 2


@dataclass(frozen=True)
class MetricsRow:
    """One emitted line of the per-iteration metrics stream."""

    iter: int
    primal_res_sq: float
    dual_res_sq: float
    tau_min: float
    tau_mean: float
    tau_max: float
    objective: float
    h_progress: float
    wall_ms: float


def row_from_record(rec: IterationRecord, wall_clock: bool = True) -> MetricsRow:
    return MetricsRow(
        iter=rec.k,
        primal_res_sq=rec.residuals.primal_sq,
        dual_res_sq=rec.residuals.dual_sq,
        tau_min=rec.tau_min,
        tau_mean=rec.tau_mean,
        tau_max=rec.tau_max,
        objective=rec.objective,
        h_progress=rec.h_progress,
        wall_ms=rec.wall_ms if wall_clock else 0.0,
    )


def write_metrics_csv(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(METRICS_HEADER + "\n")
        for r in rows:
            fh.write(
                f"{r.iter},{r.primal_res_sq!r},{r.dual_res_sq!r},{r.tau_min!r},"
                f"{r.tau_mean!r},{r.tau_max!r},{r.objective!r},{r.h_progress!r},{r.wall_ms!r}\n"
            )


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if header != METRICS_HEADER:
            raise ParseError(f"unexpected metrics header {header!r}")
        rows = []
        for line in fh:
            parts = line.rstrip("\n").split(",")
            rows.append(MetricsRow(int(parts[0]), *(float(p) for p in parts[1:])))
    return rows


def write_metrics_jsonl(path, rows: list[MetricsRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(dataclasses.asdict(r)) + "\n")


def read_metrics_jsonl(path) -> list[MetricsRow]:
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(MetricsRow(**json.loads(line)))
    return rows


@dataclass
class ExperimentConfig:
    """Everything one benchmark run needs; flags override config-file keys."""

    problem: str = "enet"
    data: Optional[str] = None          # LIBSVM file path; overrides the generator
    gen: str = "synthetic1"             # synthetic1 | synthetic2
    samples: int = 512
    features: int = 10
    workers: int = 4
    partition: str = "contiguous-blocks"
    policy: str = "acadmm"
    tau0: float = 1.0
    tol: float = 1e-5
    maxiter: int = 1000
    rho1: Optional[float] = None
    rho2: Optional[float] = None
    rho: float = 10.0
    svm_c: float = 1.0
    tf: int = 2
    eps_cor: float = 0.2
    c_cg: float = 1e10
    rb_mu: float = 10.0
    rb_factor: float = 2.0
    seed: int = 0
    metrics: Optional[str] = None
    summary: Optional[str] = None
    mode: str = "sequential"            # sequential | parallel-threads
    threads: int = 1
    wall_clock: bool = True             # False zeroes wall_ms for bit-stable files
    compare: bool = False

    def __post_init__(self):
        if self.problem not in PROBLEM_KINDS:
            raise InvalidInputError(f"problem must be one of {PROBLEM_KINDS}, got {self.problem!r}")
        if self.partition not in PARTITION_MODES:
            raise InvalidInputError(f"partition must be one of {PARTITION_MODES}")
        if self.policy not in POLICY_KINDS:
            raise InvalidInputError(f"policy must be one of {POLICY_KINDS}")
        if self.gen not in ("synthetic1", "synthetic2"):
            raise InvalidInputError("gen must be synthetic1 or synthetic2")

    @property
    def task(self) -> str:
        return "regression" if self.problem == "enet" else "classification"


# Desk-scale presets, one per synthetic benchmark row.
PRESETS: dict[str, dict] = {
    "synthetic1-enet": dict(problem="enet", gen="synthetic1", samples=512, features=10, workers=4),
    "synthetic2-enet": dict(problem="enet", gen="synthetic2", samples=800, features=10, workers=8),
    "synthetic1-logistic": dict(problem="logistic", gen="synthetic1", samples=512, features=10,
                                workers=4, rho=0.5),
    "synthetic2-logistic": dict(problem="logistic", gen="synthetic2", samples=800, features=10,
                                workers=8, rho=0.5),
    "synthetic1-svm": dict(problem="svm", gen="synthetic1", samples=512, features=10, workers=4,
                           svm_c=1.0),
    "synthetic2-svm": dict(problem="svm", gen="synthetic2", samples=800, features=10, workers=8,
                           svm_c=1.0),
}

_BOOL_KEYS = {"wall_clock", "compare"}
_INT_KEYS = {"samples", "features", "workers", "maxiter", "tf", "seed", "threads"}
_FLOAT_KEYS = {"tau0", "tol", "rho1", "rho2", "rho", "svm_c", "eps_cor", "c_cg",
               "rb_mu", "rb_factor"}


def config_from_items(items: dict) -> ExperimentConfig:
    """Build a config from string-or-typed key/value pairs."""
    known = {f.name for f in fields(ExperimentConfig)}
    kwargs = {}
    for key, value in items.items():
        key = key.replace("-", "_")
        if key not in known:
            raise InvalidInputError(f"unknown config key {key!r}")
        if isinstance(value, str):
            if key in _BOOL_KEYS:
                value = value.strip().lower() in ("1", "true", "yes", "on")
            elif key in _INT_KEYS:
                value = int(value)
            elif key in _FLOAT_KEYS:
                value = float(value)
        kwargs[key] = value
    return ExperimentConfig(**kwargs)


def read_config_file(path) -> dict:
    """Flat ``key=value`` text; blank lines and ``#`` comments ignored."""
    items: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError(f"expected key=value, got {line!r}", lineno)
            key, value = line.split("=", 1)
            items[key.strip()] = value.strip()
    return items


def _regularizer(cfg: ExperimentConfig):
    if cfg.problem == "enet":
        rho1 = cfg.rho if cfg.rho1 is None else cfg.rho1
        rho2 = cfg.rho if cfg.rho2 is None else cfg.rho2
        return ElasticNet(rho1=rho1, rho2=rho2)
    if cfg.problem == "logistic":
        return L1(rho=cfg.rho)
    return Ridge()


def build_dataset(cfg: ExperimentConfig) -> Dataset:
    if cfg.data is not None:
        matrix, targets = load_libsvm(cfg.data)
        rows = np.zeros((matrix.n_rows, matrix.n_cols))
        for i in range(matrix.n_rows):
            cols, vals = matrix.row_slice(i)
            rows[i, cols] = vals
        return Dataset(rows=rows, targets=targets)
    if cfg.gen == "synthetic1":
        return gen_synthetic1(cfg.samples, cfg.features, cfg.seed, task=cfg.task)
    return gen_synthetic2(cfg.samples, cfg.features, cfg.workers, cfg.seed, task=cfg.task)


def build_problem_from_config(cfg: ExperimentConfig, dataset: Dataset) -> ConsensusProblem:
    loss = {"enet": "squared", "logistic": "logistic", "svm": "hinge"}[cfg.problem]
    return build_problem(dataset.rows, dataset.targets, cfg.workers, cfg.partition,
                         loss, _regularizer(cfg), svm_c=cfg.svm_c)


def engine_config(cfg: ExperimentConfig, policy: Optional[str] = None) -> EngineConfig:
    return EngineConfig(
        tol=cfg.tol,
        maxiter=cfg.maxiter,
        policy=PolicyConfig(
            kind=policy or cfg.policy,
            t_f=cfg.tf,
            eps_cor=cfg.eps_cor,
            c_cg=cfg.c_cg,
            rb_mu=cfg.rb_mu,
            rb_factor=cfg.rb_factor,
            tau0=cfg.tau0,
        ),
        seed=cfg.seed,
        inner=InnerSolverConfig(),
    )


def _metrics_paths(base: str) -> tuple[Path, Path]:
    p = Path(base)
    if p.suffix == ".csv":
        return p, p.with_suffix(".jsonl")
    return Path(str(p) + ".csv"), Path(str(p) + ".jsonl")


def _summary_dict(cfg: ExperimentConfig, policy: str, result: RunResult,
                  total_wall_ms: float) -> dict:
    final = result.records[-1] if result.records else None
    return {
        "policy": policy,
        "iterations": result.iterations,
        "converged": result.converged,
        "stop_reason": result.reason,
        "final_primal_res_sq": final.residuals.primal_sq if final else 0.0,
        "final_dual_res_sq": final.residuals.dual_sq if final else 0.0,
        "final_objective": final.objective if final else 0.0,
        "final_h_progress": final.h_progress if final else 0.0,
        "inner_solver_warnings": result.inner_warnings,
        "total_wall_ms": total_wall_ms if cfg.wall_clock else 0.0,
        "seed": cfg.seed,
        "workers": cfg.workers,
    }


def _execute(problem: ConsensusProblem, cfg: ExperimentConfig,
             policy: str) -> tuple[RunResult, float]:
    topology = RunTopology(mode=cfg.mode, threads=cfg.threads)
    t0 = time.perf_counter()
    result = run_distributed(problem, engine_config(cfg, policy), topology)
    return result, (time.perf_counter() - t0) * 1e3


def run_experiment(cfg: ExperimentConfig, out=sys.stdout) -> tuple[int, dict]:
    """Run one experiment (or a five-policy comparison); returns (exit code, summary)."""
    try:
        dataset = build_dataset(cfg)
        problem = build_problem_from_config(cfg, dataset)
        if cfg.compare:
            return _run_comparison(problem, cfg, out)
        result, wall = _execute(problem, cfg, cfg.policy)
    except (InvalidInputError, ParseError, ProtocolError, SubproblemError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR, {"error": str(exc)}
    rows = [row_from_record(r, cfg.wall_clock) for r in result.records]
    if cfg.metrics:
        csv_path, jsonl_path = _metrics_paths(cfg.metrics)
        write_metrics_csv(csv_path, rows)
        write_metrics_jsonl(jsonl_path, rows)
    summary = _summary_dict(cfg, cfg.policy, result, wall)
    if cfg.summary:
        with open(cfg.summary, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    print(
        f"{cfg.policy}: {summary['iterations']} iterations, "
        f"reason={summary['stop_reason']}, objective={summary['final_objective']:.6g}",
        file=out,
    )
    return (EXIT_OK if result.converged else EXIT_MAXITER), summary


def _run_comparison(problem: ConsensusProblem, cfg: ExperimentConfig, out) -> tuple[int, dict]:
    table = {}
    all_converged = True
    for policy in POLICY_KINDS:
        result, wall = _execute(problem, cfg, policy)
        table[policy] = _summary_dict(cfg, policy, result, wall)
        all_converged = all_converged and result.converged
        if cfg.metrics:
            base, _ = _metrics_paths(cfg.metrics)
            stem = base.with_name(f"{base.stem}.{policy}{base.suffix}")
            rows = [row_from_record(r, cfg.wall_clock) for r in result.records]
            write_metrics_csv(stem, rows)
            write_metrics_jsonl(stem.with_suffix(".jsonl"), rows)
    print(f"{'policy':>8} {'iterations':>12} {'seconds':>10}", file=out)
    for policy, s in table.items():
        iters = f"{s['iterations']}" + ("" if s["converged"] else "+")
        print(f"{policy:>8} {iters:>12} {s['total_wall_ms'] / 1e3:>10.3f}", file=out)
    summary = {"comparison": table}
    if cfg.summary:
        with open(cfg.summary, "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2)
            fh.write("\n")
    return (EXIT_OK if all_converged else EXIT_MAXITER), summary
