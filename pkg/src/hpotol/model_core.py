"""Function classes (linear models and small tanh MLPs), losses, and risks.

A model is a flat float64 parameter vector plus its architecture.  Risk
evaluation goes through the same compiled kernel the trainer uses for its
checkpoints, so a recomputed empirical risk reproduces a stored one exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np

from . import kernels
from .errors import ConfigurationError, DomainError
from .seeds import rng_from
from .synth_data import DataSpec, Dataset, generate, separating_direction

LOSS_KINDS = ("clipped_logistic", "zero_one")


@dataclass(frozen=True)
class HyperParams:
    """One grid configuration: architecture plus SGD settings.

    ``depth == 0`` is a plain linear scorer; its ``width`` is normalized to 0
    so equality and hashing ignore the unused field.
    """

    depth: int
    width: int
    learning_rate: float
    batch_size: int

    def __post_init__(self) -> None:
        if self.depth < 0:
            raise ConfigurationError("depth must be >= 0")
        if self.depth > 0 and self.width < 1:
            raise ConfigurationError("width must be positive for depth >= 1")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if self.depth == 0 and self.width != 0:
            object.__setattr__(self, "width", 0)

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "HyperParams":
        return cls(**obj)


@dataclass(frozen=True)
class HpGrid:
    """Ordered finite search space; order defines argmin tie-breaking."""

    configs: tuple[HyperParams, ...]

    def __post_init__(self) -> None:
        if not self.configs:
            raise ConfigurationError("grid must contain at least one config")
        if len(set(self.configs)) != len(self.configs):
            raise ConfigurationError("grid contains duplicate configs")

    @property
    def size(self) -> int:
        return len(self.configs)


def grid36() -> HpGrid:
    """Depth {1,2,3} x width {10,100} x lr {0.01,0.1} x batch {8,32,128}."""
    return HpGrid(
        tuple(
            HyperParams(depth=d, width=w, learning_rate=lr, batch_size=b)
            for d in (1, 2, 3)
            for w in (10, 100)
            for lr in (0.01, 0.1)
            for b in (8, 32, 128)
        )
    )


def grid18() -> HpGrid:
    """The 18-config variant: grid36 restricted to width 10."""
    return HpGrid(
        tuple(
            HyperParams(depth=d, width=10, learning_rate=lr, batch_size=b)
            for d in (1, 2, 3)
            for lr in (0.01, 0.1)
            for b in (8, 32, 128)
        )
    )


def linear_grid() -> HpGrid:
    """Small depth-0 grid; the convex class used by convexity-based checks."""
    return HpGrid(
        tuple(
            HyperParams(depth=0, width=0, learning_rate=lr, batch_size=64)
            for lr in (0.02, 0.1, 0.5)
        )
    )


@dataclass(frozen=True)
class LossSpec:
    """A bounded Lipschitz loss on (label, score) pairs.

    ``clipped_logistic`` is ``min(bound, (bound/2) * softplus(-y*s)/ln 2)``
    (see :mod:`hpotol.kernels` for the exact shape); ``zero_one`` pays
    ``bound`` whenever ``y*s <= 0``.  ``lipschitz`` records the modulus bound
    used by the closed-form heuristics (1 for the default unit-bound loss).
    """

    kind: str = "clipped_logistic"
    bound: float = 1.0
    lipschitz: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in LOSS_KINDS:
            raise ConfigurationError(f"unknown loss kind {self.kind!r}")
        if not self.bound > 0:
            raise ConfigurationError("bound must be positive")
        if not self.lipschitz > 0:
            raise ConfigurationError("lipschitz must be positive")

    @property
    def kind_code(self) -> int:
        return (
            kernels.LOSS_CLIPPED_LOGISTIC
            if self.kind == "clipped_logistic"
            else kernels.LOSS_ZERO_ONE
        )

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "LossSpec":
        return cls(**obj)


@dataclass(frozen=True, eq=False)
class Model:
    """An immutable trained (or constructed) scorer."""

    hp: HyperParams
    n_features: int
    params: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        expected = param_count(self.hp, self.n_features)
        if self.params.shape != (expected,):
            raise ConfigurationError(
                f"parameter vector has shape {self.params.shape}, expected ({expected},)"
            )
        frozen = np.ascontiguousarray(self.params, dtype=np.float64).copy()
        frozen.flags.writeable = False
        object.__setattr__(self, "params", frozen)

    def scores(self, X: np.ndarray) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ConfigurationError("feature matrix shape mismatch")
        return kernels.forward_scores(self.params, X, self.hp.depth, self.hp.width)

    def to_json(self) -> dict:
        return {
            "architecture": {**self.hp.to_json(), "n_features": self.n_features},
            "parameters": self.params.tolist(),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Model":
        arch = dict(obj["architecture"])
        n_features = arch.pop("n_features")
        return cls(
            hp=HyperParams.from_json(arch),
            n_features=n_features,
            params=np.asarray(obj["parameters"], dtype=np.float64),
        )


def param_count(hp: HyperParams, n_features: int) -> int:
    if hp.depth == 0:
        return n_features + 1
    w = hp.width
    return (n_features * w + w) + (hp.depth - 1) * (w * w + w) + (w + 1)


def init_model(hp: HyperParams, n_features: int, init_seed: int) -> Model:
    """Xavier-normal weights (std ``sqrt(2/(fan_in+fan_out))``), zero biases."""
    rng = rng_from(init_seed)
    parts: list[np.ndarray] = []
    if hp.depth == 0:
        std = np.sqrt(2.0 / (n_features + 1))
        parts.append(rng.normal(scale=std, size=n_features))
        parts.append(np.zeros(1))
    else:
        fan_in = n_features
        for _ in range(hp.depth):
            std = np.sqrt(2.0 / (fan_in + hp.width))
            parts.append(rng.normal(scale=std, size=fan_in * hp.width))
            parts.append(np.zeros(hp.width))
            fan_in = hp.width
        std = np.sqrt(2.0 / (hp.width + 1))
        parts.append(rng.normal(scale=std, size=hp.width))
        parts.append(np.zeros(1))
    return Model(hp=hp, n_features=n_features, params=np.concatenate(parts))


def bayes_model(spec: DataSpec) -> Model:
    """The generator's own separating rule packaged as a linear model."""
    u = separating_direction(spec)
    hp = HyperParams(depth=0, width=0, learning_rate=1.0, batch_size=1)
    return Model(hp=hp, n_features=spec.n_features, params=np.append(u, 0.0))


def empirical_risk(model: Model, data: Dataset, loss: LossSpec) -> float:
    """Exact mean loss of ``model`` over ``data``; no subsampling."""
    if data.count < 1:
        raise DomainError("empirical risk of an empty dataset is undefined")
    if data.features.shape[1] != model.n_features:
        raise ConfigurationError("dataset feature count does not match model")
    return float(
        kernels.risk_of(
            model.params,
            data.features,
            data.labels,
            model.hp.depth,
            model.hp.width,
            loss.kind_code,
            loss.bound,
        )
    )


@dataclass(frozen=True)
class RiskEstimate:
    """Monte-Carlo risk estimate with its standard error."""

    value: float
    stderr: float


def true_risk_estimate(
    model: Model,
    spec: DataSpec,
    loss: LossSpec,
    test_count: int,
    eval_seed: int,
    min_test_count: int = 10_000,
) -> RiskEstimate:
    """Risk on a fresh ``test_count``-sample drawn with ``eval_seed``."""
    if test_count < min_test_count:
        raise ConfigurationError(
            f"test_count {test_count} is below the floor {min_test_count}"
        )
    sample = generate(spec, test_count, eval_seed)
    value = empirical_risk(model, sample, loss)
    vals = kernels.loss_values(
        sample.labels, model.scores(sample.features), loss.kind_code, loss.bound
    )
    stderr = float(np.std(vals, ddof=1) / np.sqrt(test_count))
    return RiskEstimate(value=value, stderr=stderr)


def objective_and_gradient(
    model: Model, data: Dataset, loss: LossSpec
) -> tuple[float, np.ndarray]:
    """Full-batch training objective and analytic gradient (clipped loss only)."""
    if loss.kind != "clipped_logistic":
        raise ConfigurationError("gradients are defined for clipped_logistic only")
    if data.count < 1:
        raise DomainError("gradient of an empty dataset is undefined")
    risk, grad = kernels.objective_grad(
        model.params,
        data.features,
        data.labels,
        model.hp.depth,
        model.hp.width,
        loss.bound,
    )
    return float(risk), grad
