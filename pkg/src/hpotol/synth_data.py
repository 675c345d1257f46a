"""Seeded synthetic binary-classification data with zero optimal risk.

The generator places one Gaussian cluster per class at ``±(margin/2 + 3σ)``
along a random unit direction ``u`` inside the informative subspace.  The
coordinate along ``u`` is drawn from a truncated normal so the class supports
never come closer than ``margin`` to each other: every +1 point satisfies
``<x, u> >= margin/2`` and every −1 point ``<x, u> <= -margin/2``.  The rule
``sign(<x, u>)`` therefore classifies every sample perfectly, and the optimal
achievable risk of the distribution is exactly zero.

Informative coordinates orthogonal to ``u`` carry isotropic ``σ`` noise; the
remaining nuisance coordinates are standard normal.  All draws use numpy's
counter-based Philox generator, so outputs are bit-identical for identical
``(spec, draw_seed, count)`` across platforms.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, asdict

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigurationError, SizeError
from .seeds import rng_from

# Lower truncation of the standardized along-direction coordinate; the cluster
# center sits 3σ above the support boundary at margin/2.
_TRUNC_Z = -3.0


@dataclass(frozen=True)
class DataSpec:
    """Parameters of one synthetic classification distribution."""

    n_features: int = 20
    n_informative: int = 10
    margin: float = 1.0
    cluster_sigma: float = 0.25
    class_balance: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_features < 1:
            raise ConfigurationError("n_features must be >= 1")
        if not 1 <= self.n_informative <= self.n_features:
            raise ConfigurationError("n_informative must be in [1, n_features]")
        if not self.margin > 0:
            raise ConfigurationError("margin must be positive")
        if not self.cluster_sigma > 0:
            raise ConfigurationError("cluster_sigma must be positive")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigurationError("class_balance must be in (0, 1)")
        if self.seed < 0:
            raise ConfigurationError("seed must be a non-negative integer")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "DataSpec":
        return cls(**obj)


@dataclass(frozen=True)
class Dataset:
    """A drawn sample: row-major float64 features and ±1 labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.labels.ndim != 1:
            raise ConfigurationError("features must be 2-D and labels 1-D")
        if self.features.shape[0] != self.labels.shape[0]:
            raise ConfigurationError("features and labels disagree on row count")

    @property
    def count(self) -> int:
        return self.features.shape[0]


def separating_direction(spec: DataSpec) -> np.ndarray:
    """Unit vector defining the generator's separating hyperplane.

    Supported on the informative coordinates; a pure function of
    ``spec.seed`` and the dimensions.
    """
    rng = rng_from(spec.seed)
    v = rng.normal(size=spec.n_informative)
    u = np.zeros(spec.n_features)
    u[: spec.n_informative] = v / np.linalg.norm(v)
    return u


def generate(spec: DataSpec, count: int, draw_seed: int) -> Dataset:
    """Draw ``count`` labelled points; deterministic in ``(spec, draw_seed)``."""
    if count < 0:
        raise ConfigurationError("count must be non-negative")
    u = separating_direction(spec)
    d, k = spec.n_features, spec.n_informative
    rng = rng_from(spec.seed, draw_seed)

    labels = np.where(rng.random(count) < spec.class_balance, 1.0, -1.0)

    # Along-direction coordinate: truncated normal supported on [margin/2, inf).
    center = spec.margin / 2.0 + 3.0 * spec.cluster_sigma
    lo = ndtr(_TRUNC_Z)
    q = lo + rng.random(count) * (1.0 - lo)
    t = center + spec.cluster_sigma * ndtri(np.minimum(q, 1.0 - 1e-16))

    features = np.zeros((count, d))
    if count:
        g = rng.normal(scale=spec.cluster_sigma, size=(count, k))
        g -= np.outer(g @ u[:k], u[:k])  # remove the along-u component
        features[:, :k] = g
        features += (labels * t)[:, None] * u[None, :]
        if d > k:
            features[:, k:] = rng.normal(size=(count, d - k))
    return Dataset(features=np.ascontiguousarray(features), labels=labels)


def split(data: Dataset, m: int, mu: int, split_seed: int) -> tuple[Dataset, Dataset]:
    """Disjoint (train, validation) row subsets of sizes ``(m, mu)``."""
    if m < 1 or mu < 1:
        raise ConfigurationError("m and mu must be positive")
    if m + mu > data.count:
        raise SizeError(f"m + mu = {m + mu} exceeds available rows {data.count}")
    perm = rng_from(split_seed).permutation(data.count)
    train_idx = np.sort(perm[:m])
    val_idx = np.sort(perm[m : m + mu])
    return _take(data, train_idx), _take(data, val_idx)


def _take(data: Dataset, idx: np.ndarray) -> Dataset:
    return Dataset(
        features=np.ascontiguousarray(data.features[idx]),
        labels=np.ascontiguousarray(data.labels[idx]),
    )


def dataset_to_csv(data: Dataset, path: str) -> None:
    """Debug export: header ``f0..f{d-1},label``, labels as ±1 integers."""
    d = data.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{j}" for j in range(d)] + ["label"])
        for i in range(data.count):
            row = [format(v, ".17g") for v in data.features[i]]
            row.append(str(int(data.labels[i])))
            writer.writerow(row)
