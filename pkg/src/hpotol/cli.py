"""Command-line entry points.

Subcommands take a JSON config path plus ``--seed``, ``--out-dir`` and
``--threads`` overrides:

* ``gen-data``   draw a synthetic sample and export it to CSV
* ``hpo``        one full HPO solve with retraining and a risk report
* ``choice-exp`` retrain-vs-hold-in sweep (fixed tolerance pairs)
* ``tol-exp``    inner-tolerance sweep (rule-driven rho_in)
* ``h3-exp``     iterative outer-tolerance controller sweep
* ``report``     aggregate rows CSVs into summary tables and SVG figures
"""

from __future__ import annotations

import argparse
import dataclasses
import json
from pathlib import Path

from .harness import (
    ExperimentPlan,
    report,
    run_choice_experiment,
    run_h3_experiment,
    run_tolerance_experiment,
)
from .hpo_core import (
    HpoConfig,
    outcome_to_json,
    risk_report,
    run_hpo,
    validation_to_csv,
)
from .model_core import HpGrid, HyperParams, LossSpec, grid18, grid36
from .seeds import DOMAIN_DATA, derive
from .synth_data import DataSpec, dataset_to_csv, generate
from .trainer import TrainBudget, trajectory_to_csv


def _load_config(path: str) -> dict:
    with open(path) as fh:
        return json.load(fh)


def _resolve_grid(spec) -> HpGrid:
    if spec == "grid18":
        return grid18()
    if spec == "grid36":
        return grid36()
    return HpGrid(tuple(HyperParams.from_json(hp) for hp in spec))


def _cmd_gen_data(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    spec = DataSpec.from_json(cfg.get("data_spec", {}))
    draw_seed = args.seed if args.seed is not None else cfg.get("draw_seed", 0)
    data = generate(spec, cfg["count"], draw_seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / cfg.get("filename", "data.csv")
    dataset_to_csv(data, str(path))
    print(f"wrote {path} ({data.count} rows)")
    return 0


def _cmd_hpo(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    spec = DataSpec.from_json(cfg.get("data_spec", {}))
    loss = LossSpec.from_json(cfg.get("loss", {}))
    budget = TrainBudget.from_json(cfg.get("budget", {}))
    base_seed = args.seed if args.seed is not None else cfg.get("base_seed", 0)
    hpo_cfg = HpoConfig(
        grid=_resolve_grid(cfg.get("grid", "grid18")),
        m=cfg["m"],
        mu=cfg["mu"],
        rho_in=cfg.get("rho_in", 0.0),
        rho_out=cfg.get("rho_out", 0.0),
        delta=cfg.get("delta", 0.05),
        budget=budget,
        base_seed=base_seed,
    )
    n = cfg.get("n", hpo_cfg.m + hpo_cfg.mu)
    data = generate(spec, n, derive(base_seed, DOMAIN_DATA))
    selection, outcome = run_hpo(data, hpo_cfg, loss)
    rep = risk_report(
        outcome, selection.runs, spec, loss,
        cfg.get("test_count", 100_000), hpo_cfg.eval_seed(0),
    )
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "hpo_outcome.json").write_text(json.dumps(outcome_to_json(outcome), indent=2))
    (out / "risk_report.json").write_text(json.dumps(rep.to_json(), indent=2))
    validation_to_csv(selection, str(out / "validation_risks.csv"))
    trajectory_to_csv(outcome.holdin, str(out / "holdin_trajectory.csv"))
    trajectory_to_csv(outcome.retrained, str(out / "retrained_trajectory.csv"))
    print(
        f"selected {outcome.lambda_hat} | improvement {outcome.improvement_i:.6f} | "
        f"holdin risk {rep.true_risk_holdin.value:.5f} | "
        f"retrained risk {rep.true_risk_retrained.value:.5f}"
    )
    return 0


def _plan_from(args: argparse.Namespace, rho_mode: str) -> ExperimentPlan:
    plan = ExperimentPlan.from_json(_load_config(args.config))
    updates: dict = {}
    if plan.rho_mode != rho_mode:
        updates["rho_mode"] = rho_mode
    if args.seed is not None:
        updates["base_seed"] = args.seed
    return dataclasses.replace(plan, **updates) if updates else plan


def _cmd_choice_exp(args: argparse.Namespace) -> int:
    plan = _plan_from(args, "fixed")
    path = run_choice_experiment(plan, Path(args.out_dir), threads=args.threads)
    print(f"wrote {path}")
    return 0


def _cmd_tol_exp(args: argparse.Namespace) -> int:
    plan = _plan_from(args, "h2_driven")
    path = run_tolerance_experiment(plan, Path(args.out_dir), threads=args.threads)
    print(f"wrote {path}")
    return 0


def _cmd_h3_exp(args: argparse.Namespace) -> int:
    plan = _plan_from(args, "h3_driven")
    path = run_h3_experiment(plan, Path(args.out_dir), threads=args.threads)
    print(f"wrote {path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    written = report([Path(p) for p in args.csvs], Path(args.out_dir))
    for path in written:
        print(f"wrote {path}")
    return 0


def _add_common(parser: argparse.ArgumentParser, with_threads: bool = False) -> None:
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out-dir", default=".", help="output directory")
    if with_threads:
        parser.add_argument("--threads", type=int, default=1, help="worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hpotol", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="draw a synthetic sample to CSV")
    p.add_argument("config")
    _add_common(p)
    p.set_defaults(fn=_cmd_gen_data)

    p = sub.add_parser("hpo", help="one HPO solve with retraining and risk report")
    p.add_argument("config")
    _add_common(p)
    p.set_defaults(fn=_cmd_hpo)

    for name, fn in (
        ("choice-exp", _cmd_choice_exp),
        ("tol-exp", _cmd_tol_exp),
        ("h3-exp", _cmd_h3_exp),
    ):
        p = sub.add_parser(name, help=f"run the {name.replace('-exp', '')} experiment sweep")
        p.add_argument("config")
        _add_common(p, with_threads=True)
        p.set_defaults(fn=fn)

    p = sub.add_parser("report", help="summary tables and SVG figures from rows CSVs")
    p.add_argument("csvs", nargs="+")
    _add_common(p)
    p.set_defaults(fn=_cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
