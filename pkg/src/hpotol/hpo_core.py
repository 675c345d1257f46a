"""The bilevel selection loop, final retraining, and post-hoc risk analysis.

``select_hp`` realizes the inner/outer split: per config, a budgeted
reference run fixes the empirical minimum, a tolerance-stopped run produces
the hold-in model, and the held-out sample ranks the configs.  The winner is
retrained on all rows at the outer tolerance, and ``risk_report`` estimates
the decomposition terms (config mis-selection, hold-in deficit) plus the
oracle comparison on one shared fresh test sample.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, SizeError
from .model_core import (
    HpGrid,
    HyperParams,
    LossSpec,
    Model,
    RiskEstimate,
    empirical_risk,
)
from .seeds import DOMAIN_EVAL, DOMAIN_RETRAIN, DOMAIN_SPLIT, DOMAIN_TRAIN, derive
from .synth_data import DataSpec, Dataset, generate, split
from .trainer import TrainBudget, TrainResult, approx_erm, exact_erm


@dataclass(frozen=True)
class HpoConfig:
    """Everything one bilevel solve needs besides the data itself."""

    grid: HpGrid
    m: int
    mu: int
    rho_in: float
    rho_out: float
    delta: float
    budget: TrainBudget
    base_seed: int

    def __post_init__(self) -> None:
        if self.m < 1 or self.mu < 1:
            raise ConfigurationError("m and mu must be positive")
        if self.rho_in < 0 or self.rho_out < 0:
            raise ConfigurationError("tolerances must be non-negative")
        if not 0.0 < self.delta < 1.0:
            raise ConfigurationError("delta must lie in (0, 1)")
        if self.base_seed < 0:
            raise ConfigurationError("base_seed must be non-negative")

    # Purpose-separated child seeds; evaluation lives in its own domain and
    # can never collide with split/training/retraining streams.
    def split_seed(self) -> int:
        return derive(self.base_seed, DOMAIN_SPLIT)

    def train_seed(self, lambda_index: int) -> int:
        return derive(self.base_seed, DOMAIN_TRAIN, lambda_index)

    def retrain_seed(self) -> int:
        return derive(self.base_seed, DOMAIN_RETRAIN)

    def eval_seed(self, purpose: int = 0) -> int:
        return derive(self.base_seed, DOMAIN_EVAL, purpose)


@dataclass(frozen=True)
class InnerRun:
    """Reference and tolerance-stopped runs for one config, with its score."""

    hp: HyperParams
    reference: TrainResult
    holdin: TrainResult
    val_risk: float


@dataclass(frozen=True)
class Selection:
    """Outcome of the inner/outer loop over the whole grid."""

    lambda_hat: HyperParams
    lambda_index: int
    runs: tuple[InnerRun, ...]

    @property
    def validation_risks(self) -> tuple[float, ...]:
        return tuple(r.val_risk for r in self.runs)


@dataclass(frozen=True)
class HpoOutcome:
    """Deployed artifacts of one HPO solve plus its step accounting."""

    lambda_hat: HyperParams
    holdin: TrainResult
    retrained: TrainResult
    validation_risks: tuple[float, ...]
    improvement_i: float
    steps_inner_total: int
    steps_retrain: int


def inner_references(
    data: Dataset, cfg: HpoConfig, loss: LossSpec
) -> tuple[Dataset, Dataset, tuple[TrainResult, ...]]:
    """Split the data and run the per-config reference ERM pass.

    The references do not depend on the tolerances, so sweeps over several
    ``rho_in`` values can share one pass via :func:`select_from_references`.
    """
    if cfg.m + cfg.mu > data.count:
        raise SizeError(f"m + mu = {cfg.m + cfg.mu} exceeds data rows {data.count}")
    train, validation = split(data, cfg.m, cfg.mu, cfg.split_seed())
    references: list[TrainResult] = []
    for i, hp in enumerate(cfg.grid.configs):
        try:
            references.append(exact_erm(train, hp, loss, cfg.budget, cfg.train_seed(i)))
        except Exception as exc:
            raise type(exc)(f"config {i} ({hp}): {exc}") from exc
    return train, validation, tuple(references)


def select_from_references(
    train: Dataset,
    validation: Dataset,
    references: tuple[TrainResult, ...],
    cfg: HpoConfig,
    loss: LossSpec,
) -> Selection:
    """Tolerance-stopped inner runs against precomputed references, then argmin."""
    runs: list[InnerRun] = []
    for i, (hp, reference) in enumerate(zip(cfg.grid.configs, references)):
        try:
            holdin = approx_erm(
                train, hp, loss, cfg.rho_in, reference.achieved_risk, cfg.budget,
                cfg.train_seed(i),
            )
        except Exception as exc:
            raise type(exc)(f"config {i} ({hp}): {exc}") from exc
        val_risk = empirical_risk(holdin.model, validation, loss)
        runs.append(InnerRun(hp=hp, reference=reference, holdin=holdin, val_risk=val_risk))
    best = int(np.argmin([r.val_risk for r in runs]))
    return Selection(lambda_hat=runs[best].hp, lambda_index=best, runs=tuple(runs))


def select_hp(data: Dataset, cfg: HpoConfig, loss: LossSpec) -> Selection:
    """Solve the inner/outer problem; ties break to the first grid entry."""
    train, validation, references = inner_references(data, cfg, loss)
    return select_from_references(train, validation, references, cfg, loss)


def retrain_full(
    data: Dataset,
    lambda_hat: HyperParams,
    cfg: HpoConfig,
    loss: LossSpec,
    return_reference: bool = False,
):
    """Final training on all rows at the outer tolerance.

    The reference minimum on the full sample is computed with the same seed;
    pass ``return_reference=True`` to also get that reference run.
    """
    seed = cfg.retrain_seed()
    reference = exact_erm(data, lambda_hat, loss, cfg.budget, seed)
    retrained = approx_erm(
        data, lambda_hat, loss, cfg.rho_out, reference.achieved_risk, cfg.budget, seed
    )
    if return_reference:
        return retrained, reference
    return retrained


def improvement(holdin: Model, retrained: Model, data_n: Dataset, loss: LossSpec) -> float:
    """On-sample gain from retraining: E_n(hold-in) - E_n(retrained); may be negative."""
    return empirical_risk(holdin, data_n, loss) - empirical_risk(retrained, data_n, loss)


def run_hpo(data: Dataset, cfg: HpoConfig, loss: LossSpec) -> tuple[Selection, HpoOutcome]:
    """Convenience wrapper: select, retrain, and account for one HPO solve."""
    selection = select_hp(data, cfg, loss)
    retrained, _ = retrain_full(data, selection.lambda_hat, cfg, loss, return_reference=True)
    holdin = selection.runs[selection.lambda_index].holdin
    outcome = HpoOutcome(
        lambda_hat=selection.lambda_hat,
        holdin=holdin,
        retrained=retrained,
        validation_risks=selection.validation_risks,
        improvement_i=improvement(holdin.model, retrained.model, data, loss),
        steps_inner_total=sum(r.holdin.steps_used for r in selection.runs),
        steps_retrain=retrained.steps_used,
    )
    return selection, outcome


def _shared_sample_risks(
    models: list[Model], sample: Dataset, loss: LossSpec
) -> tuple[np.ndarray, np.ndarray]:
    values = np.empty(len(models))
    stderrs = np.empty(len(models))
    for i, model in enumerate(models):
        values[i] = empirical_risk(model, sample, loss)
        per_point = kernels.loss_values(
            sample.labels, model.scores(sample.features), loss.kind_code, loss.bound
        )
        stderrs[i] = float(np.std(per_point, ddof=1) / np.sqrt(sample.count))
    return values, stderrs


def oracle_hp(
    runs: tuple[InnerRun, ...],
    spec: DataSpec,
    loss: LossSpec,
    test_count: int,
    eval_seed: int,
) -> HyperParams:
    """Post-hoc best config: argmin of fresh-sample risk over the hold-in models."""
    sample = generate(spec, test_count, eval_seed)
    values, _ = _shared_sample_risks([r.holdin.model for r in runs], sample, loss)
    return runs[int(np.argmin(values))].hp


@dataclass(frozen=True)
class RiskReport:
    """Estimated excess-risk terms and the post-hoc oracle comparison.

    All risks are estimated on one shared fresh sample, so the bookkeeping
    identities (``e_mcm_hat`` telescoping against the hold-in excess,
    ``e_hin_hat`` against the retrained model) hold to float precision.
    ``delta_tilde`` is the relative excess of the selected config over
    the oracle config in percent (absolute difference when the oracle risk
    is zero).
    """

    true_risk_holdin: RiskEstimate
    true_risk_retrained: RiskEstimate
    true_risk_oracle_holdin: RiskEstimate
    lambda_bar: HyperParams
    e_mcm_hat: float
    e_hin_hat: float
    delta_tilde: float
    matched_oracle: bool
    tie_within_1e5: bool

    def to_json(self) -> dict:
        return {
            "true_risk_holdin": [self.true_risk_holdin.value, self.true_risk_holdin.stderr],
            "true_risk_retrained": [
                self.true_risk_retrained.value,
                self.true_risk_retrained.stderr,
            ],
            "true_risk_oracle_holdin": [
                self.true_risk_oracle_holdin.value,
                self.true_risk_oracle_holdin.stderr,
            ],
            "lambda_bar": self.lambda_bar.to_json(),
            "e_mcm_hat": self.e_mcm_hat,
            "e_hin_hat": self.e_hin_hat,
            "delta_tilde": self.delta_tilde,
            "matched_oracle": self.matched_oracle,
            "tie_within_1e5": self.tie_within_1e5,
        }


def relative_tie(a: float, b: float, tol: float = 1e-5) -> bool:
    """Whether two risks agree within relative tolerance (ties at zero agree)."""
    scale = max(abs(a), abs(b))
    return abs(a - b) <= tol * scale


def risk_report(
    outcome: HpoOutcome,
    runs: tuple[InnerRun, ...],
    spec: DataSpec,
    loss: LossSpec,
    test_count: int,
    eval_seed: int,
) -> RiskReport:
    """Estimate the decomposition terms on one shared fresh test sample."""
    sample = generate(spec, test_count, eval_seed)
    models = [r.holdin.model for r in runs]
    values, stderrs = _shared_sample_risks(models, sample, loss)
    bar_index = int(np.argmin(values))
    hat_index = next(
        i for i, r in enumerate(runs) if r.hp == outcome.lambda_hat
    )
    retrained_vals, retrained_ses = _shared_sample_risks([outcome.retrained.model], sample, loss)

    holdin_risk = float(values[hat_index])
    oracle_risk = float(values[bar_index])
    retrained_risk = float(retrained_vals[0])

    if oracle_risk > 0:
        delta_pct = 100.0 * (holdin_risk - oracle_risk) / oracle_risk
    else:
        delta_pct = holdin_risk - oracle_risk
    return RiskReport(
        true_risk_holdin=RiskEstimate(holdin_risk, float(stderrs[hat_index])),
        true_risk_retrained=RiskEstimate(retrained_risk, float(retrained_ses[0])),
        true_risk_oracle_holdin=RiskEstimate(oracle_risk, float(stderrs[bar_index])),
        lambda_bar=runs[bar_index].hp,
        e_mcm_hat=holdin_risk - oracle_risk,
        e_hin_hat=holdin_risk - retrained_risk,
        delta_tilde=delta_pct,
        matched_oracle=runs[bar_index].hp == outcome.lambda_hat,
        tie_within_1e5=relative_tie(holdin_risk, retrained_risk),
    )


def outcome_to_json(outcome: HpoOutcome) -> dict:
    return {
        "lambda_hat": outcome.lambda_hat.to_json(),
        "holdin_model": outcome.holdin.model.to_json(),
        "retrained_model": outcome.retrained.model.to_json(),
        "holdin_achieved_risk": outcome.holdin.achieved_risk,
        "retrained_achieved_risk": outcome.retrained.achieved_risk,
        "validation_risks": list(outcome.validation_risks),
        "improvement_i": outcome.improvement_i,
        "steps_inner_total": outcome.steps_inner_total,
        "steps_retrain": outcome.steps_retrain,
    }


def validation_to_csv(selection: Selection, path: str) -> None:
    """Per-config validation risks (columns fixed by the results schema)."""
    with open(path, "w") as fh:
        fh.write("# schema=v1\n")
        fh.write("lambda_index,depth,width,lr,batch,val_risk,steps\n")
        for i, run in enumerate(selection.runs):
            hp = run.hp
            fh.write(
                f"{i},{hp.depth},{hp.width},{format(hp.learning_rate, '.17g')},"
                f"{hp.batch_size},{format(run.val_risk, '.17g')},{run.holdin.steps_used}\n"
            )


__all__ = [
    "HpoConfig",
    "InnerRun",
    "Selection",
    "HpoOutcome",
    "RiskReport",
    "inner_references",
    "select_from_references",
    "select_hp",
    "retrain_full",
    "improvement",
    "run_hpo",
    "oracle_hp",
    "risk_report",
    "relative_tie",
    "outcome_to_json",
    "validation_to_csv",
]
