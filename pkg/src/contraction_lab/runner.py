"""Pipeline orchestration, result records and serialization.

Each pipeline turns one validated config into one or more columnar tables.
Cell seeds are derived from the master seed by (pipeline id, cell index), so
per-cell work may run on any number of workers without changing a single
byte of output; tables are assembled in cell order.
"""

from __future__ import annotations

import csv
import datetime
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import assumptions, posterior, rates
from .config import ExperimentConfig, build_findim, build_plan, build_problem, build_truth
from .errors import ConfigInvariantError
from .rng import derive_seed
from .spectral import (
    BandedCoupling,
    ExpSkewCoupling,
    InverseProblem,
    ReflectionCoupling,
    simulate_data,
)

EXPLORATORY_LABEL = "exploratory - no rate claim for severely ill-posed spectra"


@dataclass(frozen=True)
class Table:
    """One named columnar block carrying its provenance and config digest."""

    name: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    provenance: dict
    config_digest: str
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "rows", tuple(tuple(r) for r in self.rows))
        for row in self.rows:
            if len(row) != len(self.columns):
                raise ValueError(f"table {self.name}: row width {len(row)} != {len(self.columns)}")


@dataclass(frozen=True)
class ResultRecord:
    config_digest: str
    created_at: str
    tables: tuple[Table, ...]
    failures: dict = field(default_factory=dict)

    def table(self, name: str) -> Table:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


def _map_cells(fn, items, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _f(x) -> float:
    return float(x)


def _n(x):
    """Grid value as int when integral, float otherwise (lossless CSV)."""
    v = float(x)
    return int(v) if v.is_integer() else v


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def _pipe_simulate(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    u0 = build_truth(config)
    run = config.run
    seed = run["master_seed"]

    def cell(item):
        i, n = item
        data = simulate_data(problem, u0, n, derive_seed(seed, "simulate", i))
        return [(_n(n), k + 1, _f(data.y[k])) for k in range(problem.n_dim)]

    rows = [r for block in _map_cells(cell, list(enumerate(run["n_grid"])), workers) for r in block]
    return [Table("simulate", ("n_level", "coord", "y"), rows,
                  {"operation": "simulate_data", "seed": seed}, config.digest)]


def _default_xi_grid(problem: InverseProblem, n_level: float) -> list[float]:
    _, cov_chol = posterior._covariance_factor(problem, n_level)
    scale = math.sqrt(float(np.sum(cov_chol**2)))
    return [scale * m for m in (0.5, 1.0, 2.0, 4.0)]


def _pipe_posterior(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    u0 = build_truth(config)
    run = config.run
    seed = run["master_seed"]
    mc = max(run["mc"], 100)

    def cell(item):
        i, n = item
        data = simulate_data(problem, u0, n, derive_seed(seed, "posterior", i, "data"))
        post = posterior.conjugate_posterior(problem, data)
        xis = run.get("xi_grid") or _default_xi_grid(problem, n)
        ests = posterior.posterior_exceedance_grid(post, u0, xis, mc,
                                                   derive_seed(seed, "posterior", i, "mc"))
        return [(_n(n), _f(e.xi), _f(e.value), _f(e.std_error)) for e in ests]

    rows = [r for block in _map_cells(cell, list(enumerate(run["n_grid"])), workers) for r in block]
    return [Table("posterior_exceedance", ("n_level", "xi", "estimate", "std_error"), rows,
                  {"operation": "posterior_exceedance", "seed": seed}, config.digest)]


def _pipe_rate_fit(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    u0 = build_truth(config)
    run = config.run
    fit = rates.fit_contraction_rate(problem, u0, run["n_grid"], run["delta_level"],
                                     run["y_replicates"], run["mc"],
                                     seed=derive_seed(run["master_seed"], "rate-fit"),
                                     workers=workers)
    rows = [(_n(n), _f(x), _f(frac), _f(fit.slope), _f(fit.slope_ci[0]), _f(fit.slope_ci[1]))
            for n, x, frac in zip(fit.n_grid, fit.xi_hat, fit.exceedance_frac)]
    label = EXPLORATORY_LABEL if fit.exploratory else ""
    return [Table("rate_fit", ("n", "xi_hat", "exceedance_frac", "slope", "slope_lo", "slope_hi"),
                  rows, {"operation": "fit_contraction_rate", "seed": run["master_seed"],
                         "failures": list(fit.failures)}, config.digest, label=label)]


def _pipe_check(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    u0 = build_truth(config)
    run = config.run
    plan = build_plan(config)
    report = assumptions.verify_assumptions(problem, plan, u0, max(run["mc"], 1000),
                                            derive_seed(run["master_seed"], "check"))
    rows = [
        ("small_ball", _f(report.small_ball.measured), _f(report.small_ball.bound), report.small_ball.ok),
        ("projection_tail", _f(report.tail.measured), _f(report.tail.bound), report.tail.ok),
        ("g", _f(report.g.measured), _f(report.g.bound), report.g.ok),
        ("k_n", _f(report.kn.measured), _f(report.kn.bound), report.kn.ok),
        ("truth_ratio", _f(report.truth_ratio), None, True),
    ]
    label = "finite-r evidence only" if report.finite_r_evidence else ""
    return [Table("assumption_checks", ("check", "measured", "bound", "ok"), rows,
                  {"operation": "verify_assumptions", "seed": run["master_seed"],
                   "plan": {"eps_n": plan.eps_n, "xi_n": plan.xi_n, "k_n": plan.k_n,
                            "r_n": plan.r_n if plan.r_n is not None else "inf",
                            "n_level": plan.n_level}},
                  config.digest, label=label)]


def _pipe_gn(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    run = config.run
    n = problem.n_dim
    k_values = list(range(1, min(run["k_max"], n) + 1))
    r_values = run.get("r_values") or [max(1, n // 4), max(1, n // 2), n, "inf"]

    def cell(k):
        out = []
        for r in r_values:
            r_eff = n if r == "inf" else int(r)
            g = assumptions.compute_g_kr(problem, k, r_eff)
            out.append((k, "inf" if r == "inf" else int(r), _f(g)))
        return out

    rows = [r for block in _map_cells(cell, k_values, workers) for r in block]
    return [Table("g_table", ("k", "r", "g"), rows,
                  {"operation": "compute_g_kr", "seed": run["master_seed"]}, config.digest)]


def _pipe_smallball(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    u0 = build_truth(config)
    run = config.run
    seed = run["master_seed"]
    mc = max(run["mc"], 1000)
    eps_grid = run.get("eps_grid")
    if not eps_grid:
        scale = math.sqrt(float(np.sum(problem.prior.variances *
                                       np.sum(problem.whitened_forward**2, axis=0))))
        eps_grid = [scale * m for m in (0.25, 0.5, 1.0, 2.0)]

    def cell(item):
        i, eps = item
        rep = assumptions.small_ball_log_prob(problem, u0, eps, mc,
                                              derive_seed(seed, "smallball", i))
        return (_f(eps), _f(rep.log_prob), _f(rep.ci_halfwidth), _f(rep.centered_log_prob),
                _f(rep.shift_cost), rep.upper_bound_only)

    rows = _map_cells(cell, list(enumerate(eps_grid)), workers)
    return [Table("small_ball", ("eps", "log_prob", "ci_halfwidth", "centered_log_prob",
                                 "shift_cost", "upper_bound_only"), rows,
                  {"operation": "small_ball_log_prob", "seed": seed}, config.digest)]


def _pipe_minmax(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    run = config.run
    j_max = run.get("j_max") or max(1, (3 * problem.n_dim) // 4)
    table = assumptions.minmax_compare(assumptions.coupled_pushforward_cov(problem),
                                       assumptions.diagonal_pushforward_cov(problem),
                                       j_max)
    rows = [(j + 1, _f(a), _f(b), _f(r))
            for j, (a, b, r) in enumerate(zip(table.alphas, table.betas, table.ratios))]
    return [Table("minmax_ratios", ("j", "alpha", "beta", "ratio"), rows,
                  {"operation": "minmax_compare", "seed": run["master_seed"],
                   "min_ratio": table.min_ratio, "max_ratio": table.max_ratio},
                  config.digest)]


def _pipe_hs(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    run = config.run
    target = run.get("hs_target")
    if target is None:
        if isinstance(problem.coupling.kind, ReflectionCoupling):
            target = "reflection_pair"
        elif isinstance(problem.coupling.kind, ExpSkewCoupling):
            target = "exp_pair"
        else:
            target = "gn_bound"
    report = assumptions.hs_diagnostic(problem, target)
    rows = [(report.target, int(m), _f(v), report.verdict)
            for m, v in zip(report.truncations, report.values)]
    return [Table("hs_diagnostic", ("target", "truncation", "value", "verdict"), rows,
                  {"operation": "hs_diagnostic", "seed": run["master_seed"],
                   "details": {k: v for k, v in report.details.items() if k != "small_ball_report"}},
                  config.digest)]


def _pipe_concentration(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    u0 = build_truth(config)
    run = config.run
    n_level = float(run["n_grid"][-1])
    k = run.get("plug_k") or min(8, problem.n_dim)
    r = run.get("plug_r") or problem.n_dim
    mc = max(run["mc"], 1000)
    sigma0 = math.sqrt(assumptions.compute_g_kr(problem, k, r) / n_level)
    x_grid = run.get("x_grid") or [sigma0 * m for m in (0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0)]
    rep = assumptions.concentration_check(problem, u0, k, r, n_level, x_grid, mc,
                                          derive_seed(run["master_seed"], "concentration"))
    ok = rep.empirical <= rep.bound + 4.0 * rep.std_error
    rows = [(_f(x), _f(e), _f(b), _f(s), bool(o))
            for x, e, b, s, o in zip(rep.x_grid, rep.empirical, rep.bound, rep.std_error, ok)]
    return [Table("concentration", ("x", "empirical", "bound", "std_error", "ok"), rows,
                  {"operation": "concentration_check", "seed": run["master_seed"],
                   "sigma0_sq": rep.sigma0_sq, "mean_deviation": rep.mean_deviation,
                   "mean_deviation_bound": rep.mean_deviation_bound,
                   "mean_dev_ok": rep.mean_dev_ok, "k": k, "r": r},
                  config.digest)]


def _pipe_findim(config: ExperimentConfig, problem: InverseProblem, workers: int) -> list[Table]:
    run = config.run
    exp = build_findim(config)
    u0 = np.zeros(exp.p)
    n_grid = [n for n in run["n_grid"] if n >= 3]
    if len(n_grid) < 1:
        raise ConfigInvariantError("run.n_grid", "findim needs grid entries >= 3")
    table = rates.finite_dim_rate_run(exp, u0, n_grid, max(run["mc"], 1000),
                                      run["y_replicates"],
                                      derive_seed(run["master_seed"], "findim"))
    rows = [(_n(n), _f(m), None if math.isnan(r) else _f(r), int(c))
            for n, m, r, c in zip(table.n_grid, table.mean_exceedance,
                                  table.max_ratio, table.diagnostic_counts)]
    return [Table("findim_rate", ("n", "mean_exceedance", "max_ratio", "diagnostic_count"),
                  rows, {"operation": "finite_dim_rate_run", "seed": run["master_seed"],
                         "method": table.method}, config.digest)]


PIPELINE_FUNCS = {
    "simulate": _pipe_simulate,
    "posterior": _pipe_posterior,
    "rate-fit": _pipe_rate_fit,
    "check": _pipe_check,
    "gn": _pipe_gn,
    "smallball": _pipe_smallball,
    "minmax": _pipe_minmax,
    "hs": _pipe_hs,
    "concentration": _pipe_concentration,
    "findim": _pipe_findim,
}


def run_experiment(config: ExperimentConfig, pipelines: list[str] | None = None,
                   workers: int = 1) -> ResultRecord:
    """Execute the requested pipelines; module errors become per-pipeline
    failure entries and never abort the remaining work."""
    requested = pipelines if pipelines is not None else config.run["pipelines"]
    tables: list[Table] = []
    failures: dict[str, str] = {}
    problem = build_problem(config)
    for name in requested:
        if name not in PIPELINE_FUNCS:
            raise ConfigInvariantError("run.pipelines", f"unknown pipeline {name!r}")
        try:
            tables.extend(PIPELINE_FUNCS[name](config, problem, workers))
        except Exception as exc:  # noqa: BLE001 - failures are data here
            failures[name] = f"{type(exc).__name__}: {exc}"
    created = datetime.datetime.now(datetime.timezone.utc).isoformat()
    return ResultRecord(config_digest=config.digest, created_at=created,
                        tables=tuple(tables), failures=failures)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def record_to_dict(record: ResultRecord) -> dict:
    return {
        "config_digest": record.config_digest,
        "created_at": record.created_at,
        "failures": dict(record.failures),
        "tables": [
            {"name": t.name, "columns": list(t.columns),
             "rows": [list(r) for r in t.rows], "provenance": t.provenance,
             "config_digest": t.config_digest, "label": t.label}
            for t in record.tables
        ],
    }


def record_from_dict(doc: dict) -> ResultRecord:
    tables = tuple(Table(name=t["name"], columns=tuple(t["columns"]),
                         rows=tuple(tuple(r) for r in t["rows"]),
                         provenance=t["provenance"], config_digest=t["config_digest"],
                         label=t.get("label", ""))
                   for t in doc["tables"])
    return ResultRecord(config_digest=doc["config_digest"], created_at=doc["created_at"],
                        tables=tables, failures=doc.get("failures", {}))


def emit_results(record: ResultRecord, format: str, out_dir) -> list[Path]:
    """Write the record to disk; timestamps stay out of the data tables so
    reruns of one config are byte-identical."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    if format == "csv":
        for t in record.tables:
            path = out / f"{t.name}.csv"
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(t.columns)
                writer.writerows(t.rows)
            written.append(path)
        meta = out / "metadata.json"
        with open(meta, "w") as fh:
            json.dump({"config_digest": record.config_digest,
                       "created_at": record.created_at,
                       "failures": record.failures,
                       "tables": {t.name: {"provenance": t.provenance, "label": t.label}
                                  for t in record.tables}}, fh, indent=2, sort_keys=True)
            fh.write("\n")
        written.append(meta)
        return written
    if format == "json":
        path = out / "result.json"
        with open(path, "w") as fh:
            json.dump(record_to_dict(record), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return [path]
    if format == "plotdata":
        for t in record.tables:
            if len(t.columns) < 2:
                continue
            x_col = 0
            for j, col in enumerate(t.columns):
                if j == x_col:
                    continue
                if not all(isinstance(r[j], (int, float)) and not isinstance(r[j], bool)
                           for r in t.rows):
                    continue
                path = out / f"{t.name}.{col}.plotdata"
                with open(path, "w") as fh:
                    for r in t.rows:
                        fh.write(f"{r[x_col]} {r[j]}\n")
                written.append(path)
        return written
    raise ConfigInvariantError("outputs.formats", f"unknown format {format!r}")
