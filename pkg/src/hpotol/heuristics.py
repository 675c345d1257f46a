"""Closed-form decision rules for retraining and tolerance selection.

Three rules, all computable from sample sizes and the loss bound alone:

* ``h1_*``: deploy the retrained model only when the on-sample risk
  improvement from retraining exceeds a concentration threshold.
* ``h2_rho_in``: the inner ERM tolerance as a scaled concentration width.
* ``h3_*``: an iterative controller that keeps halving (factor ``nu``) the
  final-training tolerance while each reduction still moves the measured
  risk improvement by more than ``gamma * kappa``, then rolls back to the
  last level that paid for itself.

Natural logarithms throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, replace

from .errors import ConfigurationError, StateError

CHOICE_RETRAINED = "retrained"
CHOICE_HOLDIN = "holdin"


def _check_domains(bound: float, n_configs: int, delta: float, **sizes: int) -> None:
    if not bound > 0:
        raise ConfigurationError("bound must be positive")
    if n_configs < 1:
        raise ConfigurationError("n_configs must be >= 1")
    if not 0.0 < delta < 1.0:
        raise ConfigurationError("delta must lie in (0, 1)")
    for name, value in sizes.items():
        if value < 1:
            raise ConfigurationError(f"{name} must be a positive integer")


@dataclass(frozen=True)
class HeuristicParams:
    """Shared scalar inputs of the three rules."""

    bound: float
    n_configs: int
    delta: float
    n: int
    m: int
    mu: int
    gamma: float
    nu: float

    def __post_init__(self) -> None:
        _check_domains(self.bound, self.n_configs, self.delta, n=self.n, m=self.m, mu=self.mu)
        if not self.gamma > 0:
            raise ConfigurationError("gamma must be positive")
        if not 0.0 < self.nu < 1.0:
            raise ConfigurationError("nu must lie in (0, 1)")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "HeuristicParams":
        return cls(**obj)


def h1_threshold(bound: float, n_configs: int, delta: float, n: int) -> float:
    """Improvement level the retrained model must beat: 2B*sqrt(2*ln(2(L+2)/delta)/n)."""
    _check_domains(bound, n_configs, delta, n=n)
    return 2.0 * bound * math.sqrt(2.0 * math.log(2.0 * (n_configs + 2) / delta) / n)


def h1_choose(improvement: float, threshold: float) -> str:
    """Pick the retrained model iff the improvement strictly exceeds the threshold."""
    if not threshold > 0:
        raise ConfigurationError("threshold must be positive")
    return CHOICE_RETRAINED if improvement > threshold else CHOICE_HOLDIN


def h2_rho_in(
    gamma: float, bound: float, n_configs: int, delta: float, m: int, mu: int
) -> float:
    """Inner tolerance: gamma*B*sqrt(2*ln(2(L+1)/delta))*(2/sqrt(m) + 1/sqrt(mu))."""
    _check_domains(bound, n_configs, delta, m=m, mu=mu)
    if gamma < 0:
        raise ConfigurationError("gamma must be non-negative")
    width = 2.0 / math.sqrt(m) + 1.0 / math.sqrt(mu)
    return gamma * bound * math.sqrt(2.0 * math.log(2.0 * (n_configs + 1) / delta)) * width


def h3_kappa(
    rho_in: float, bound: float, n_configs: int, delta: float, n: int, m: int, mu: int
) -> float:
    """Comparison scale for the controller: rho_in plus the concentration terms."""
    _check_domains(bound, n_configs, delta, n=n, m=m, mu=mu)
    if rho_in < 0:
        raise ConfigurationError("rho_in must be non-negative")
    width = 2.0 / math.sqrt(n) + 2.0 / math.sqrt(m) + 1.0 / math.sqrt(mu)
    return rho_in + bound * math.sqrt(2.0 * math.log(2.0 * (n_configs + 2) / delta)) * width


@dataclass(frozen=True)
class H3State:
    """Immutable controller state; advance it with :func:`h3_step`.

    ``current_rho_out`` is the tolerance level whose risk improvement the
    caller measures next.  On termination it is rolled back to the last level
    whose reduction was worth its cost, and that level's model is final.
    """

    current_rho_out: float
    nu: float
    kappa: float
    previous_rho_out: float | None = None
    previous_gamma: float | None = None
    iteration: int = 0
    terminated: bool = False


def h3_init(rho_in: float, nu: float, kappa: float) -> H3State:
    """Start the controller at its anchor level ``rho_out^(0) = rho_in``."""
    if not rho_in > 0:
        raise ConfigurationError("rho_in must be positive")
    if not 0.0 < nu < 1.0:
        raise ConfigurationError("nu must lie in (0, 1)")
    if not kappa > 0:
        raise ConfigurationError("kappa must be positive")
    return H3State(current_rho_out=rho_in, nu=nu, kappa=kappa)


def h3_step(state: H3State, gamma_current: float, gamma_h3: float) -> H3State:
    """Advance one controller iteration given the measured improvement.

    ``gamma_current`` is the empirical risk improvement of the final model
    trained to ``state.current_rho_out``.  The very first call records it and
    performs the bootstrap reduction; afterwards the level keeps shrinking by
    ``nu`` while consecutive improvements differ by more than
    ``gamma_h3 * kappa``, and otherwise the controller terminates, restoring
    the previous level as final.
    """
    if state.terminated:
        raise StateError("controller already terminated")
    if not gamma_h3 > 0:
        raise ConfigurationError("gamma_h3 must be positive")
    if state.previous_gamma is None:
        return replace(
            state,
            previous_rho_out=state.current_rho_out,
            previous_gamma=gamma_current,
            current_rho_out=state.nu * state.current_rho_out,
            iteration=state.iteration + 1,
        )
    if abs(state.previous_gamma - gamma_current) > gamma_h3 * state.kappa:
        return replace(
            state,
            previous_rho_out=state.current_rho_out,
            previous_gamma=gamma_current,
            current_rho_out=state.nu * state.current_rho_out,
            iteration=state.iteration + 1,
        )
    assert state.previous_rho_out is not None
    return replace(state, current_rho_out=state.previous_rho_out, terminated=True)
