"""Experiment orchestration: sweeps, CSV emission, aggregation, reporting.

Three experiment kinds share the (n, held-out fraction, trial) sweep
structure:

* ``choice``  — full HPO plus retraining at fixed tolerance pairs; logs the
  three deployment policies (always retrain, never retrain, data-driven
  choice) and the post-hoc oracle comparison.
* ``tol``     — inner-tolerance sweep driven by the closed-form rule; logs
  excess risks and speedups of tolerance-stopped HPO against the exact
  reference pass under both step-accounting modes.
* ``h3``      — the iterative outer-tolerance controller on the retraining
  phase; logs its trace, exit level, and speedup against exact retraining.

Every cell's rows are a pure function of the plan: seeds are derived from
``(base_seed, n_index, mu_index, trial)``, work units run in a thread pool,
and a single writer emits rows in sorted key order, so output bytes do not
depend on the thread count.  Row files start with a ``# schema=v1`` comment.
"""

from __future__ import annotations

import csv
import io
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, CsvFormatError
from .heuristics import (
    CHOICE_RETRAINED,
    h1_choose,
    h1_threshold,
    h2_rho_in,
    h3_init,
    h3_kappa,
    h3_step,
)
from .hpo_core import (
    HpoConfig,
    HpoOutcome,
    Selection,
    improvement,
    inner_references,
    risk_report,
    select_from_references,
)
from .model_core import HpGrid, LossSpec, empirical_risk, grid18, grid36, linear_grid
from .plots import render_excess_risk_lines
from .seeds import DOMAIN_DATA, derive
from .synth_data import DataSpec, Dataset, generate
from .trainer import TrainBudget, TrainResult, approx_erm, erm_with_schedule, exact_erm

SCHEMA_LINE = "# schema=v1"

CHOICE_COLUMNS = [
    "n", "mu_fraction", "trial", "rho_in", "rho_out",
    "excess_risk_holdin", "excess_risk_retrained", "excess_risk_choice",
    "improvement_i", "h1_threshold", "choice_made", "matched_oracle",
    "delta_tilde", "e_mcm_hat", "excess_risk_oracle",
    "zo_excess_holdin", "zo_excess_retrained",
    "steps_exact", "steps_approx", "speedup", "error",
]
TOL_COLUMNS = [
    "n", "mu_fraction", "trial", "gamma", "rho_in",
    "excess_risk_exact", "excess_risk_approx", "zo_excess_exact", "zo_excess_approx",
    "steps_exact_oracle", "steps_exact_full", "steps_approx",
    "speedup", "speedup_honest", "error",
]
H3_COLUMNS = [
    "n", "mu_fraction", "trial", "gamma", "rho_in", "rho_out_final",
    "exit_iteration", "terminated", "excess_risk_h3", "excess_risk_exact_retrain",
    "zo_excess_h3", "zo_excess_exact_retrain",
    "steps_exact_retrain", "steps_h3", "speedup", "error",
]
H3_TRACE_COLUMNS = ["n", "mu_fraction", "trial", "gamma", "T", "rho_out", "gamma_value", "decision"]

_EXPERIMENT_BY_HEADER = {
    tuple(CHOICE_COLUMNS): "choice",
    tuple(TOL_COLUMNS): "tol",
    tuple(H3_COLUMNS): "h3",
}

_AGG_KEYS = {
    "choice": ["n", "mu_fraction", "rho_in", "rho_out"],
    "tol": ["n", "mu_fraction", "gamma"],
    "h3": ["n", "mu_fraction", "gamma"],
}
_AGG_METRICS = {
    "choice": [
        "excess_risk_holdin", "excess_risk_retrained", "excess_risk_choice",
        "improvement_i", "delta_tilde", "e_mcm_hat", "excess_risk_oracle",
        "zo_excess_holdin", "zo_excess_retrained", "steps_exact", "steps_approx",
        "speedup", "matched_oracle", "choice_retrained",
    ],
    "tol": [
        "excess_risk_exact", "excess_risk_approx", "zo_excess_exact", "zo_excess_approx",
        "steps_exact_oracle", "steps_exact_full", "steps_approx",
        "speedup", "speedup_honest",
    ],
    "h3": [
        "rho_in", "rho_out_final", "exit_iteration", "excess_risk_h3",
        "excess_risk_exact_retrain", "zo_excess_h3", "zo_excess_exact_retrain",
        "steps_exact_retrain", "steps_h3", "speedup",
    ],
}

# Desk-scale compute-bound budget: sub-epoch checkpoints make tolerance
# stops land at their thresholds instead of overshooting them by an epoch.
_EXPERIMENT_BUDGET = TrainBudget(
    max_epochs=12,
    restarts=5,
    checkpoint_subdivisions=8,
    plateau_patience=40,
    min_improvement=1e-5,
)


@dataclass(frozen=True)
class ExperimentPlan:
    """Full description of one sweep; the CSVs are a pure function of it."""

    n_values: tuple[int, ...] = (512, 1024, 2048, 4096, 8192, 16384)
    mu_fractions: tuple[float, ...] = (0.1, 0.3, 0.5)
    grid_name: str = "grid18"
    trials: int = 10
    delta: float = 0.05
    gamma_values: tuple[float, ...] = (0.1, 1.0, 10.0)
    rho_mode: str = "fixed"
    rho_pairs: tuple[tuple[float, float], ...] = ((0.01, 0.01), (0.01, 0.1))
    nu: float = 0.5
    rho_in_gamma: float = 0.1
    h3_max_levels: int = 12
    base_seed: int = 0
    test_count: int = 100_000
    data_spec: DataSpec = field(default_factory=DataSpec)
    loss: LossSpec = field(default_factory=LossSpec)
    budget: TrainBudget = field(default_factory=lambda: _EXPERIMENT_BUDGET)

    def __post_init__(self) -> None:
        if not self.n_values or not self.mu_fractions or not self.gamma_values:
            raise ConfigurationError("n_values, mu_fractions, gamma_values must be non-empty")
        if self.trials < 1:
            raise ConfigurationError("trials must be >= 1")
        if self.grid_name not in ("grid18", "grid36", "linear"):
            raise ConfigurationError("grid_name must be grid18, grid36, or linear")
        if self.rho_mode not in ("fixed", "h2_driven", "h3_driven"):
            raise ConfigurationError("rho_mode must be fixed, h2_driven, or h3_driven")
        if any(not 0.0 < f < 1.0 for f in self.mu_fractions):
            raise ConfigurationError("mu_fractions must lie in (0, 1)")
        if not self.rho_pairs or any(a < 0 or b < 0 for a, b in self.rho_pairs):
            raise ConfigurationError("rho_pairs must be non-empty and non-negative")
        if not 0.0 < self.nu < 1.0:
            raise ConfigurationError("nu must lie in (0, 1)")
        if self.h3_max_levels < 2:
            raise ConfigurationError("h3_max_levels must be >= 2")

    def grid(self) -> HpGrid:
        if self.grid_name == "linear":
            return linear_grid()
        return grid18() if self.grid_name == "grid18" else grid36()

    def to_json(self) -> dict:
        return {
            "n_values": list(self.n_values),
            "mu_fractions": list(self.mu_fractions),
            "grid_name": self.grid_name,
            "trials": self.trials,
            "delta": self.delta,
            "gamma_values": list(self.gamma_values),
            "rho_mode": self.rho_mode,
            "rho_pairs": [list(p) for p in self.rho_pairs],
            "nu": self.nu,
            "rho_in_gamma": self.rho_in_gamma,
            "h3_max_levels": self.h3_max_levels,
            "base_seed": self.base_seed,
            "test_count": self.test_count,
            "data_spec": self.data_spec.to_json(),
            "loss": self.loss.to_json(),
            "budget": self.budget.to_json(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentPlan":
        kw = dict(obj)
        for key in ("n_values", "mu_fractions", "gamma_values"):
            if key in kw:
                kw[key] = tuple(kw[key])
        if "rho_pairs" in kw:
            kw["rho_pairs"] = tuple((float(a), float(b)) for a, b in kw["rho_pairs"])
        if "data_spec" in kw:
            kw["data_spec"] = DataSpec.from_json(kw["data_spec"])
        if "loss" in kw:
            kw["loss"] = LossSpec.from_json(kw["loss"])
        if "budget" in kw:
            kw["budget"] = TrainBudget.from_json(kw["budget"])
        return cls(**kw)


def _cell_sizes(n: int, frac: float) -> tuple[int, int]:
    mu = int(round(n * frac))
    mu = max(1, min(mu, n - 1))
    return n - mu, mu


def _first_attainment_steps(result: TrainResult, threshold: float) -> int:
    """Step count at the first checkpoint whose risk is within the threshold."""
    for step, risk in result.trajectory:
        if risk <= threshold:
            return step
    return result.steps_used


def _zero_one(loss: LossSpec) -> LossSpec:
    return LossSpec(kind="zero_one", bound=loss.bound, lipschitz=loss.lipschitz)


@dataclass
class _CellContext:
    n: int
    frac: float
    m: int
    mu: int
    cell_seed: int
    data: Dataset
    sample: Dataset  # shared fresh evaluation sample
    cfg0: HpoConfig  # tolerance fields are placeholders


def _cell_context(plan: ExperimentPlan, n_idx: int, mu_idx: int, trial: int) -> _CellContext:
    n = plan.n_values[n_idx]
    frac = plan.mu_fractions[mu_idx]
    m, mu = _cell_sizes(n, frac)
    cell_seed = derive(plan.base_seed, n_idx, mu_idx, trial)
    data = generate(plan.data_spec, n, derive(cell_seed, DOMAIN_DATA))
    cfg0 = HpoConfig(
        grid=plan.grid(), m=m, mu=mu, rho_in=0.0, rho_out=0.0,
        delta=plan.delta, budget=plan.budget, base_seed=cell_seed,
    )
    sample = generate(plan.data_spec, plan.test_count, cfg0.eval_seed(0))
    return _CellContext(n, frac, m, mu, cell_seed, data, sample, cfg0)


def _error_rows(columns: list[str], base: dict, slots: list[dict], message: str) -> list[dict]:
    rows = []
    for slot in slots:
        row = {c: "" for c in columns}
        row.update(base)
        row.update(slot)
        row["error"] = message
        rows.append(row)
    return rows


def _choice_unit(plan: ExperimentPlan, n_idx: int, mu_idx: int, trial: int) -> list[dict]:
    slots = [{"rho_in": rin, "rho_out": rout} for rin, rout in plan.rho_pairs]
    base = {
        "n": plan.n_values[n_idx],
        "mu_fraction": plan.mu_fractions[mu_idx],
        "trial": trial,
    }
    try:
        ctx = _cell_context(plan, n_idx, mu_idx, trial)
        train, validation, refs = inner_references(ctx.data, ctx.cfg0, plan.loss)
    except Exception as exc:
        return _error_rows(CHOICE_COLUMNS, base, slots, f"{type(exc).__name__}: {exc}")

    zo = _zero_one(plan.loss)
    threshold = h1_threshold(plan.loss.bound, ctx.cfg0.grid.size, plan.delta, ctx.n)
    steps_exact_inner = sum(_first_attainment_steps(r, r.achieved_risk) for r in refs)
    selections: dict[float, Selection] = {}
    retrain_refs: dict = {}
    rows: list[dict] = []
    for slot in slots:
        rho_in, rho_out = slot["rho_in"], slot["rho_out"]
        try:
            cfg = replace(ctx.cfg0, rho_in=rho_in, rho_out=rho_out)
            if rho_in not in selections:
                selections[rho_in] = select_from_references(train, validation, refs, cfg, plan.loss)
            sel = selections[rho_in]
            holdin = sel.runs[sel.lambda_index].holdin
            if sel.lambda_hat not in retrain_refs:
                retrain_refs[sel.lambda_hat] = exact_erm(
                    ctx.data, sel.lambda_hat, plan.loss, plan.budget, cfg.retrain_seed()
                )
            rref = retrain_refs[sel.lambda_hat]
            retrained = approx_erm(
                ctx.data, sel.lambda_hat, plan.loss, rho_out,
                rref.achieved_risk, plan.budget, cfg.retrain_seed(),
            )
            impr = improvement(holdin.model, retrained.model, ctx.data, plan.loss)
            outcome = HpoOutcome(
                lambda_hat=sel.lambda_hat,
                holdin=holdin,
                retrained=retrained,
                validation_risks=sel.validation_risks,
                improvement_i=impr,
                steps_inner_total=sum(r.holdin.steps_used for r in sel.runs),
                steps_retrain=retrained.steps_used,
            )
            report = risk_report(
                outcome, sel.runs, plan.data_spec, plan.loss, plan.test_count, cfg.eval_seed(0)
            )
            choice = h1_choose(impr, threshold)
            excess_choice = (
                report.true_risk_retrained.value
                if choice == CHOICE_RETRAINED
                else report.true_risk_holdin.value
            )
            steps_exact = steps_exact_inner + _first_attainment_steps(rref, rref.achieved_risk)
            steps_approx = outcome.steps_inner_total + retrained.steps_used
            rows.append({
                **base,
                "rho_in": rho_in,
                "rho_out": rho_out,
                "excess_risk_holdin": report.true_risk_holdin.value,
                "excess_risk_retrained": report.true_risk_retrained.value,
                "excess_risk_choice": excess_choice,
                "improvement_i": impr,
                "h1_threshold": threshold,
                "choice_made": choice,
                "matched_oracle": report.matched_oracle,
                "delta_tilde": report.delta_tilde,
                "e_mcm_hat": report.e_mcm_hat,
                "excess_risk_oracle": report.true_risk_oracle_holdin.value,
                "zo_excess_holdin": empirical_risk(holdin.model, ctx.sample, zo),
                "zo_excess_retrained": empirical_risk(retrained.model, ctx.sample, zo),
                "steps_exact": steps_exact,
                "steps_approx": steps_approx,
                "speedup": steps_exact / steps_approx,
                "error": "",
            })
        except Exception as exc:
            rows.extend(_error_rows(CHOICE_COLUMNS, base, [slot], f"{type(exc).__name__}: {exc}"))
    return rows


def _tol_unit(plan: ExperimentPlan, n_idx: int, mu_idx: int, trial: int) -> list[dict]:
    slots = [{"gamma": g} for g in plan.gamma_values]
    base = {
        "n": plan.n_values[n_idx],
        "mu_fraction": plan.mu_fractions[mu_idx],
        "trial": trial,
    }
    try:
        ctx = _cell_context(plan, n_idx, mu_idx, trial)
        train, validation, refs = inner_references(ctx.data, ctx.cfg0, plan.loss)
    except Exception as exc:
        return _error_rows(TOL_COLUMNS, base, slots, f"{type(exc).__name__}: {exc}")

    zo = _zero_one(plan.loss)
    # Exact-ERM baseline: rank the reference models on the held-out sample.
    val_exact = [empirical_risk(r.model, validation, plan.loss) for r in refs]
    exact_model = refs[int(np.argmin(val_exact))].model
    excess_exact = empirical_risk(exact_model, ctx.sample, plan.loss)
    zo_exact = empirical_risk(exact_model, ctx.sample, zo)
    steps_exact_full = sum(r.steps_used for r in refs)
    steps_exact_oracle = sum(_first_attainment_steps(r, r.achieved_risk) for r in refs)

    rows: list[dict] = []
    for slot in slots:
        gamma = slot["gamma"]
        try:
            rho_in = h2_rho_in(
                gamma, plan.loss.bound, ctx.cfg0.grid.size, plan.delta, ctx.m, ctx.mu
            )
            cfg = replace(ctx.cfg0, rho_in=rho_in)
            sel = select_from_references(train, validation, refs, cfg, plan.loss)
            approx_model = sel.runs[sel.lambda_index].holdin.model
            steps_approx = sum(r.holdin.steps_used for r in sel.runs)
            rows.append({
                **base,
                "gamma": gamma,
                "rho_in": rho_in,
                "excess_risk_exact": excess_exact,
                "excess_risk_approx": empirical_risk(approx_model, ctx.sample, plan.loss),
                "zo_excess_exact": zo_exact,
                "zo_excess_approx": empirical_risk(approx_model, ctx.sample, zo),
                "steps_exact_oracle": steps_exact_oracle,
                "steps_exact_full": steps_exact_full,
                "steps_approx": steps_approx,
                "speedup": steps_exact_oracle / steps_approx,
                "speedup_honest": steps_exact_full / (steps_exact_full + steps_approx),
                "error": "",
            })
        except Exception as exc:
            rows.extend(_error_rows(TOL_COLUMNS, base, [slot], f"{type(exc).__name__}: {exc}"))
    return rows


@dataclass(frozen=True)
class H3Drive:
    """Result of driving the controller over measured improvements."""

    accepted_index: int  # tolerance level of the deployed model
    trained_index: int  # deepest level actually trained before exit
    exit_iteration: int
    terminated: bool
    trace: tuple[dict, ...]  # rows: T, rho_out, gamma_value, decision


def drive_h3_controller(
    gammas: list[float], rho_in: float, nu: float, kappa: float, gamma_h3: float
) -> H3Drive:
    """Run the controller over a sequence of per-level improvements.

    ``gammas[k]`` is the measured risk improvement at level ``rho_in * nu^k``.
    Injectable for tests; the experiment feeds it measured values.
    """
    state = h3_init(rho_in, nu, kappa)
    trace: list[dict] = []
    k = 0
    while not state.terminated and k < len(gammas):
        new_state = h3_step(state, gammas[k], gamma_h3)
        trace.append({
            "T": state.iteration,
            "rho_out": state.current_rho_out,
            "gamma_value": gammas[k],
            "decision": "exit" if new_state.terminated else "reduce",
        })
        state = new_state
        k += 1
    if state.terminated:
        accepted, trained = max(k - 2, 0), k - 1
    else:
        accepted = trained = len(gammas) - 1
    return H3Drive(
        accepted_index=accepted,
        trained_index=trained,
        exit_iteration=state.iteration,
        terminated=state.terminated,
        trace=tuple(trace),
    )


def _h3_unit(
    plan: ExperimentPlan, n_idx: int, mu_idx: int, trial: int
) -> tuple[list[dict], list[dict]]:
    slots = [{"gamma": g} for g in plan.gamma_values]
    base = {
        "n": plan.n_values[n_idx],
        "mu_fraction": plan.mu_fractions[mu_idx],
        "trial": trial,
    }
    try:
        ctx = _cell_context(plan, n_idx, mu_idx, trial)
        rho_in = h2_rho_in(
            plan.rho_in_gamma, plan.loss.bound, ctx.cfg0.grid.size, plan.delta, ctx.m, ctx.mu
        )
        cfg = replace(ctx.cfg0, rho_in=rho_in)
        train, validation, refs = inner_references(ctx.data, cfg, plan.loss)
        sel = select_from_references(train, validation, refs, cfg, plan.loss)
        holdin_model = sel.runs[sel.lambda_index].holdin.model

        retrain_ref = exact_erm(ctx.data, sel.lambda_hat, plan.loss, plan.budget, cfg.retrain_seed())
        levels = [rho_in * plan.nu**k for k in range(plan.h3_max_levels)]
        snaps = erm_with_schedule(
            ctx.data, sel.lambda_hat, plan.loss, levels, plan.budget, cfg.retrain_seed(),
            reference_min=retrain_ref.achieved_risk,
        )
        gammas = [improvement(holdin_model, r.model, ctx.data, plan.loss) for _, r in snaps]
        kappa = h3_kappa(
            rho_in, plan.loss.bound, cfg.grid.size, plan.delta, ctx.n, ctx.m, ctx.mu
        )
        zo = _zero_one(plan.loss)
        excess_exact = empirical_risk(retrain_ref.model, ctx.sample, plan.loss)
        zo_exact = empirical_risk(retrain_ref.model, ctx.sample, zo)
    except Exception as exc:
        return _error_rows(H3_COLUMNS, base, slots, f"{type(exc).__name__}: {exc}"), []

    rows: list[dict] = []
    traces: list[dict] = []
    for slot in slots:
        gamma = slot["gamma"]
        try:
            drive = drive_h3_controller(gammas, rho_in, plan.nu, kappa, gamma)
            traces.extend({**base, "gamma": gamma, **t} for t in drive.trace)
            final = snaps[drive.accepted_index][1]
            steps_h3 = snaps[drive.trained_index][1].steps_used
            rows.append({
                **base,
                "gamma": gamma,
                "rho_in": rho_in,
                "rho_out_final": levels[drive.accepted_index],
                "exit_iteration": drive.exit_iteration,
                "terminated": drive.terminated,
                "excess_risk_h3": empirical_risk(final.model, ctx.sample, plan.loss),
                "excess_risk_exact_retrain": excess_exact,
                "zo_excess_h3": empirical_risk(final.model, ctx.sample, zo),
                "zo_excess_exact_retrain": zo_exact,
                "steps_exact_retrain": retrain_ref.steps_used,
                "steps_h3": steps_h3,
                "speedup": retrain_ref.steps_used / steps_h3,
                "error": "",
            })
        except Exception as exc:
            rows.extend(_error_rows(H3_COLUMNS, base, [slot], f"{type(exc).__name__}: {exc}"))
    return rows, traces


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))  # shortest exact round-trip
    if value is None:
        return ""
    return str(value)


def write_rows_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    path.write_text(buf.getvalue())


def read_rows_csv(path: Path) -> tuple[list[str], list[dict]]:
    """Parse a schema-v1 rows file; raises ``CsvFormatError`` with line numbers."""
    text = Path(path).read_text()
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCHEMA_LINE:
        raise CsvFormatError(f"{path}:1: missing '{SCHEMA_LINE}' header comment")
    reader = csv.reader(io.StringIO("\n".join(lines[1:])))
    try:
        columns = next(reader)
    except StopIteration:
        raise CsvFormatError(f"{path}:2: missing header row") from None
    rows = []
    for i, parsed in enumerate(reader, start=3):
        if len(parsed) != len(columns):
            raise CsvFormatError(
                f"{path}:{i}: expected {len(columns)} fields, found {len(parsed)}"
            )
        rows.append(dict(zip(columns, parsed)))
    return columns, rows


def _metric_value(row: dict, metric: str) -> float | None:
    if metric == "choice_retrained":
        return 1.0 if row.get("choice_made") == CHOICE_RETRAINED else 0.0
    raw = row.get(metric, "")
    if isinstance(raw, str):
        if raw == "":
            return None
        if raw in ("true", "false"):
            return 1.0 if raw == "true" else 0.0
        return float(raw)
    if isinstance(raw, bool):
        return 1.0 if raw else 0.0
    return float(raw)


def aggregate_rows(
    rows: list[dict], keys: list[str], metrics: list[str]
) -> list[dict]:
    """Per-cell mean and standard error of each metric; error rows excluded."""
    cells: dict[tuple, list[dict]] = {}
    errors: dict[tuple, int] = {}
    for row in rows:
        key = tuple(_fmt(row.get(k, "")) for k in keys)
        if str(row.get("error", "")):
            errors[key] = errors.get(key, 0) + 1
            cells.setdefault(key, [])
        else:
            cells.setdefault(key, []).append(row)
    def _sort_token(s: str):
        try:
            return (0, float(s), s)
        except ValueError:
            return (1, 0.0, s)

    out = []
    for key in sorted(cells, key=lambda k: tuple(_sort_token(p) for p in k)):
        good = cells[key]
        agg: dict = dict(zip(keys, key))
        for metric in metrics:
            vals = [v for row in good if (v := _metric_value(row, metric)) is not None]
            if vals:
                arr = np.asarray(vals)
                mean = float(arr.mean())
                stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
            else:
                mean = stderr = float("nan")
            agg[f"{metric}_mean"] = mean
            agg[f"{metric}_stderr"] = stderr
        agg["n_rows"] = len(good)
        agg["n_errors"] = errors.get(key, 0)
        out.append(agg)
    return out


def _write_aggregate(path: Path, experiment: str, rows: list[dict]) -> None:
    keys = _AGG_KEYS[experiment]
    metrics = _AGG_METRICS[experiment]
    agg = aggregate_rows(rows, keys, metrics)
    columns = keys + [f"{m}_{s}" for m in metrics for s in ("mean", "stderr")] + ["n_rows", "n_errors"]
    buf = io.StringIO()
    buf.write(SCHEMA_LINE + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in agg:
        writer.writerow([_fmt(row.get(c, "")) for c in columns])
    path.write_text(buf.getvalue())


def _run_units(plan: ExperimentPlan, unit_fn, threads: int) -> dict[tuple, object]:
    units = [
        (ni, mi, t)
        for ni in range(len(plan.n_values))
        for mi in range(len(plan.mu_fractions))
        for t in range(plan.trials)
    ]
    results: dict[tuple, object] = {}
    if threads <= 1:
        for unit in units:
            results[unit] = unit_fn(plan, *unit)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = {unit: pool.submit(unit_fn, plan, *unit) for unit in units}
            for unit, fut in futures.items():
                results[unit] = fut.result()
    return results


def run_choice_experiment(plan: ExperimentPlan, out_dir: Path, threads: int = 1) -> Path:
    """Retrain-vs-hold-in study at fixed tolerance pairs; writes rows + aggregate."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = _run_units(plan, _choice_unit, threads)
    rows = [row for unit in sorted(results) for row in results[unit]]
    rows_path = out_dir / "choice_rows.csv"
    write_rows_csv(rows_path, CHOICE_COLUMNS, rows)
    _write_aggregate(out_dir / "choice_agg.csv", "choice", rows)
    return rows_path


def run_tolerance_experiment(plan: ExperimentPlan, out_dir: Path, threads: int = 1) -> Path:
    """Inner-tolerance sweep (rule-driven rho_in); writes rows + aggregate."""
    if plan.rho_mode != "h2_driven":
        raise ConfigurationError("tolerance experiment requires rho_mode=h2_driven")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = _run_units(plan, _tol_unit, threads)
    rows = [row for unit in sorted(results) for row in results[unit]]
    rows_path = out_dir / "tol_rows.csv"
    write_rows_csv(rows_path, TOL_COLUMNS, rows)
    _write_aggregate(out_dir / "tol_agg.csv", "tol", rows)
    return rows_path


def run_h3_experiment(plan: ExperimentPlan, out_dir: Path, threads: int = 1) -> Path:
    """Iterative outer-tolerance controller study; writes rows, trace, aggregate."""
    if plan.rho_mode != "h3_driven":
        raise ConfigurationError("h3 experiment requires rho_mode=h3_driven")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = _run_units(plan, _h3_unit, threads)
    rows = [row for unit in sorted(results) for row in results[unit][0]]
    traces = [row for unit in sorted(results) for row in results[unit][1]]
    rows_path = out_dir / "h3_rows.csv"
    write_rows_csv(rows_path, H3_COLUMNS, rows)
    write_rows_csv(out_dir / "h3_trace.csv", H3_TRACE_COLUMNS, traces)
    _write_aggregate(out_dir / "h3_agg.csv", "h3", rows)
    return rows_path


_PLOT_SERIES = {
    "choice": [
        ("holdin", "excess_risk_holdin_mean"),
        ("retrained", "excess_risk_retrained_mean"),
        ("choice", "excess_risk_choice_mean"),
    ],
    "tol": [
        ("exact", "excess_risk_exact_mean"),
        ("approx", "excess_risk_approx_mean"),
    ],
    "h3": [
        ("exact", "excess_risk_exact_retrain_mean"),
        ("h3", "excess_risk_h3_mean"),
    ],
}


def _cell_label(experiment: str, key: dict) -> str:
    if experiment == "choice":
        return (
            f"mu{float(key['mu_fraction']):g}_rin{float(key['rho_in']):g}"
            f"_rout{float(key['rho_out']):g}"
        )
    return f"mu{float(key['mu_fraction']):g}_g{float(key['gamma']):g}"


def report(csv_paths: list[Path], out_dir: Path) -> list[Path]:
    """Aggregate rows files into summary tables and render SVG figures.

    Returns the paths written.  Empty row sets produce a warning and no plot.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for path in map(Path, csv_paths):
        columns, rows = read_rows_csv(path)
        experiment = _EXPERIMENT_BY_HEADER.get(tuple(columns))
        if experiment is None:
            raise CsvFormatError(f"{path}:2: unrecognized column set")
        summary_path = out_dir / f"{experiment}_summary.csv"
        _write_aggregate(summary_path, experiment, rows)
        written.append(summary_path)
        good = [r for r in rows if not r.get("error")]
        if not good:
            print(f"warning: {path} contains no usable rows; no plot emitted", file=sys.stderr)
            continue

        keys = _AGG_KEYS[experiment]
        agg = aggregate_rows(good, keys, _AGG_METRICS[experiment])
        _print_summary_table(experiment, keys, agg)

        group_keys = [k for k in keys if k != "n"]
        groups: dict[tuple, list[dict]] = {}
        for cell in agg:
            groups.setdefault(tuple(cell[k] for k in group_keys), []).append(cell)
        for group_cells in groups.values():
            group_cells.sort(key=lambda c: float(c["n"]))
            xs = [float(c["n"]) for c in group_cells]
            series = {}
            for name, col in _PLOT_SERIES[experiment]:
                series[name] = (xs, [max(float(c[col]), 1e-8) for c in group_cells])
            label = _cell_label(experiment, group_cells[0])
            svg = out_dir / f"{experiment}_{label}.svg"
            render_excess_risk_lines(str(svg), series, title=f"{experiment} {label}")
            written.append(svg)
    return written


def _print_summary_table(experiment: str, keys: list[str], agg: list[dict]) -> None:
    metric_cols = [col for _, col in _PLOT_SERIES[experiment]]
    header = keys + [c.replace("_mean", "") for c in metric_cols] + ["rows"]
    print(f"[{experiment}] " + " | ".join(header))
    for cell in agg:
        parts = [str(cell[k]) for k in keys]
        parts += [f"{cell[c]:.5f}" for c in metric_cols]
        parts += [str(cell["n_rows"])]
        print(" | ".join(parts))
