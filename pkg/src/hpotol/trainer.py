"""SGD-based empirical risk minimization with restarts and tolerance stops.

``exact_erm`` runs a fixed budget of restarts to plateau and returns the best
checkpoint across all of them; its achieved risk is the reference minimum for
the problem.  ``approx_erm`` replays the same deterministic trajectory but
stops at the first checkpoint whose training risk is within ``rho`` of a
given reference.  ``erm_with_schedule`` emits snapshots along a single
trajectory as successively tighter tolerance levels are reached, without
restarting between levels.

Mini-batches are reshuffled every epoch from the run seed; checkpoints
(full-sample risk evaluations) happen once per epoch by default, or every
``checkpoint_every`` optimization steps when configured.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from . import kernels
from .errors import ConfigurationError, NumericError, SizeError
from .model_core import HyperParams, LossSpec, Model, init_model
from .seeds import derive, rng_from
from .synth_data import Dataset

STOP_TOLERANCE = "tolerance"
STOP_PLATEAU = "plateau"
STOP_BUDGET = "budget"


@dataclass(frozen=True)
class TrainBudget:
    """Stopping budget shared by all ERM variants.

    ``checkpoint_every=None`` evaluates the training risk once per epoch,
    or ``checkpoint_subdivisions`` times per epoch when that is above 1;
    an integer ``checkpoint_every`` evaluates every that many optimization
    steps instead.  A restart is declared converged (plateau) when its best
    checkpoint risk fails to improve by at least ``min_improvement`` for
    ``plateau_patience`` consecutive checkpoints.
    """

    max_epochs: int = 50
    restarts: int = 5
    checkpoint_every: int | None = None
    checkpoint_subdivisions: int = 1
    plateau_patience: int = 10
    min_improvement: float = 1e-6

    def __post_init__(self) -> None:
        if self.max_epochs < 1 or self.restarts < 1 or self.plateau_patience < 1:
            raise ConfigurationError("budget fields must be >= 1")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1 when set")
        if self.checkpoint_subdivisions < 1:
            raise ConfigurationError("checkpoint_subdivisions must be >= 1")
        if self.min_improvement < 0:
            raise ConfigurationError("min_improvement must be non-negative")

    def checkpoint_steps(self, steps_per_epoch: int) -> int:
        """Optimization steps between risk evaluations for a given epoch size."""
        if self.checkpoint_every is not None:
            return self.checkpoint_every
        return max(1, steps_per_epoch // self.checkpoint_subdivisions)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "TrainBudget":
        return cls(**obj)


@dataclass(frozen=True)
class TrainResult:
    """A trained model with its risk trajectory and step accounting."""

    model: Model
    achieved_risk: float
    steps_used: int
    trajectory: tuple[tuple[int, float], ...]
    stopped_by: str


def trajectory_to_csv(result: TrainResult, path: str) -> None:
    with open(path, "w") as fh:
        fh.write("step,empirical_risk\n")
        for step, risk in result.trajectory:
            fh.write(f"{step},{format(risk, '.17g')}\n")


class _Engine:
    """One pass over the restart loop with optional tolerance machinery."""

    def __init__(
        self,
        train: Dataset,
        hp: HyperParams,
        loss: LossSpec,
        budget: TrainBudget,
        seed: int,
        threshold: float | None = None,
        levels: list[float] | None = None,
    ) -> None:
        if train.count < hp.batch_size:
            raise SizeError(
                f"training set of {train.count} rows is smaller than batch size {hp.batch_size}"
            )
        if loss.kind != "clipped_logistic":
            raise ConfigurationError("training requires the differentiable clipped_logistic loss")
        self.X = np.ascontiguousarray(train.features, dtype=np.float64)
        self.y = np.ascontiguousarray(train.labels, dtype=np.float64)
        self.hp = hp
        self.loss = loss
        self.budget = budget
        self.seed = seed
        self.threshold = threshold
        self.pending = list(enumerate(levels)) if levels is not None else []
        self.snapshots: list[tuple[np.ndarray, float, int] | None] = [None] * len(self.pending)
        self.trajectory: list[tuple[int, float]] = []
        self.steps_total = 0
        self.best_risk = math.inf
        self.best_params: np.ndarray | None = None
        self.restart_reasons: list[str] = []
        self.tolerance_hit: tuple[np.ndarray, float, int] | None = None

    def run(self) -> None:
        m = self.X.shape[0]
        steps_per_epoch = -(-m // self.hp.batch_size)
        ck = self.budget.checkpoint_steps(steps_per_epoch)
        for r in range(self.budget.restarts):
            params = np.array(
                init_model(self.hp, self.X.shape[1], derive(self.seed, r, 0)).params
            )
            best_restart = math.inf
            stall = 0
            reason = STOP_BUDGET
            for epoch in range(self.budget.max_epochs):
                order = rng_from(self.seed, r, epoch + 1).permutation(m)
                lo = 0
                while lo < steps_per_epoch:
                    hi = min(lo + ck, steps_per_epoch)
                    kernels.sgd_segment(
                        params,
                        self.X,
                        self.y,
                        order,
                        lo,
                        hi,
                        self.hp.batch_size,
                        self.hp.learning_rate,
                        self.hp.depth,
                        self.hp.width,
                        self.loss.bound,
                    )
                    self.steps_total += hi - lo
                    risk = float(
                        kernels.risk_of(
                            params,
                            self.X,
                            self.y,
                            self.hp.depth,
                            self.hp.width,
                            self.loss.kind_code,
                            self.loss.bound,
                        )
                    )
                    if not math.isfinite(risk):
                        raise NumericError(
                            f"non-finite training risk at restart {r}, step {self.steps_total} "
                            f"(hp={self.hp})"
                        )
                    self.trajectory.append((self.steps_total, risk))
                    if risk < self.best_risk:
                        self.best_risk = risk
                        self.best_params = params.copy()
                    while self.pending and risk <= self.pending[0][1]:
                        idx, _ = self.pending.pop(0)
                        self.snapshots[idx] = (params.copy(), risk, self.steps_total)
                    if self.threshold is not None and risk <= self.threshold:
                        self.tolerance_hit = (params.copy(), risk, self.steps_total)
                        self.restart_reasons.append(STOP_TOLERANCE)
                        return
                    if self.snapshots and not self.pending:
                        self.restart_reasons.append(STOP_TOLERANCE)
                        return
                    if risk <= best_restart - self.budget.min_improvement:
                        stall = 0
                    else:
                        stall += 1
                    best_restart = min(best_restart, risk)
                    lo = hi
                    if stall >= self.budget.plateau_patience:
                        break
                if stall >= self.budget.plateau_patience:
                    reason = STOP_PLATEAU
                    break
            self.restart_reasons.append(reason)

    def fallback_reason(self) -> str:
        return (
            STOP_PLATEAU
            if all(r == STOP_PLATEAU for r in self.restart_reasons)
            else STOP_BUDGET
        )

    def best_result(self, stopped_by: str) -> TrainResult:
        assert self.best_params is not None
        return TrainResult(
            model=Model(hp=self.hp, n_features=self.X.shape[1], params=self.best_params),
            achieved_risk=self.best_risk,
            steps_used=self.steps_total,
            trajectory=tuple(self.trajectory),
            stopped_by=stopped_by,
        )


def exact_erm(
    train: Dataset,
    hp: HyperParams,
    loss: LossSpec,
    budget: TrainBudget,
    seed: int,
) -> TrainResult:
    """Budgeted reference ERM: best checkpoint over all restarts.

    The returned ``achieved_risk`` defines the reference minimum for
    ``(train, hp, loss)`` under this budget and seed.
    """
    engine = _Engine(train, hp, loss, budget, seed)
    engine.run()
    return engine.best_result(engine.fallback_reason())


def approx_erm(
    train: Dataset,
    hp: HyperParams,
    loss: LossSpec,
    rho: float,
    reference_min: float,
    budget: TrainBudget,
    seed: int,
) -> TrainResult:
    """Tolerance-stopped ERM: first checkpoint with risk <= reference + rho.

    Falls back to the full reference run (identical to ``exact_erm`` with the
    same seed) when no checkpoint satisfies the tolerance.
    """
    if rho < 0:
        raise ConfigurationError("rho must be non-negative")
    engine = _Engine(train, hp, loss, budget, seed, threshold=reference_min + rho)
    engine.run()
    if engine.tolerance_hit is not None:
        params, risk, step = engine.tolerance_hit
        return TrainResult(
            model=Model(hp=hp, n_features=train.features.shape[1], params=params),
            achieved_risk=risk,
            steps_used=step,
            trajectory=tuple(engine.trajectory),
            stopped_by=STOP_TOLERANCE,
        )
    return engine.best_result(engine.fallback_reason())


def erm_with_schedule(
    train: Dataset,
    hp: HyperParams,
    loss: LossSpec,
    tolerance_schedule: list[float],
    budget: TrainBudget,
    seed: int,
    reference_min: float | None = None,
) -> list[tuple[float, TrainResult]]:
    """One training run emitting a snapshot as each tolerance level is reached.

    Levels must be strictly decreasing and non-negative.  Later snapshots
    continue from the same trajectory; training never restarts between
    levels.  When ``reference_min`` is omitted it is computed by
    ``exact_erm`` with the same seed, which guarantees every level is
    reachable.
    """
    if not tolerance_schedule:
        raise ConfigurationError("tolerance schedule must be non-empty")
    if any(r < 0 for r in tolerance_schedule):
        raise ConfigurationError("tolerance levels must be non-negative")
    if any(
        b >= a for a, b in zip(tolerance_schedule, tolerance_schedule[1:])
    ):
        raise ConfigurationError("tolerance schedule must be strictly decreasing")
    if reference_min is None:
        reference_min = exact_erm(train, hp, loss, budget, seed).achieved_risk
    levels = [reference_min + r for r in tolerance_schedule]
    engine = _Engine(train, hp, loss, budget, seed, levels=levels)
    engine.run()

    out: list[tuple[float, TrainResult]] = []
    fallback: TrainResult | None = None
    for rho, snap in zip(tolerance_schedule, engine.snapshots):
        if snap is not None:
            params, risk, step = snap
            result = TrainResult(
                model=Model(hp=hp, n_features=train.features.shape[1], params=params),
                achieved_risk=risk,
                steps_used=step,
                trajectory=tuple(t for t in engine.trajectory if t[0] <= step),
                stopped_by=STOP_TOLERANCE,
            )
        else:
            # Unreachable level (foreign reference); fall back to the run best.
            if fallback is None:
                fallback = engine.best_result(engine.fallback_reason())
            result = fallback
        out.append((rho, result))
    return out
