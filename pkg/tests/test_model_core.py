"""Model, loss, and risk tests with hand-computed and scalar oracles."""

from __future__ import annotations

import math

import numpy as np
import pytest

from hpotol.errors import ConfigurationError, DomainError
from hpotol.model_core import (
    HpGrid,
    HyperParams,
    LossSpec,
    Model,
    bayes_model,
    empirical_risk,
    grid18,
    grid36,
    init_model,
    linear_grid,
    objective_and_gradient,
    param_count,
    true_risk_estimate,
)
from hpotol.synth_data import DataSpec, Dataset, generate


def _hand_dataset():
    """Four points in 2-D with labels (+1, +1, -1, -1)."""
    X = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    y = np.array([1.0, 1.0, -1.0, -1.0])
    return Dataset(features=X, labels=y)


def _linear_model(w, b):
    w = np.asarray(w, dtype=float)
    hp = HyperParams(depth=0, width=0, learning_rate=1.0, batch_size=1)
    return Model(hp=hp, n_features=w.size, params=np.append(w, b))


def test_hyperparams_width_normalized_for_linear():
    assert HyperParams(0, 7, 0.1, 8) == HyperParams(0, 0, 0.1, 8)
    assert HyperParams(1, 7, 0.1, 8) != HyperParams(1, 6, 0.1, 8)


def test_grid_sizes_and_uniqueness():
    assert grid36().size == 36
    assert grid18().size == 18
    assert linear_grid().size == 3
    with pytest.raises(ConfigurationError):
        HpGrid((HyperParams(1, 10, 0.1, 8), HyperParams(1, 10, 0.1, 8)))


def test_param_counts():
    assert param_count(HyperParams(0, 0, 0.1, 1), 20) == 21
    # 20*10+10 + 10*10+10 + 10*1+1
    assert param_count(HyperParams(2, 10, 0.1, 1), 20) == 331
    assert param_count(HyperParams(3, 100, 0.1, 1), 20) == 2100 + 2 * 10100 + 101


def test_init_model_shapes_and_determinism():
    hp = HyperParams(2, 10, 0.1, 8)
    a = init_model(hp, 20, init_seed=42)
    b = init_model(hp, 20, init_seed=42)
    c = init_model(hp, 20, init_seed=43)
    assert a.params.shape == (331,)
    assert np.array_equal(a.params, b.params)
    assert not np.array_equal(a.params, c.params)


def test_model_params_read_only():
    model = init_model(HyperParams(0, 0, 0.1, 1), 4, init_seed=0)
    with pytest.raises(ValueError):
        model.params[0] = 1.0


def test_model_json_round_trip():
    model = init_model(HyperParams(1, 5, 0.05, 16), 7, init_seed=9)
    back = Model.from_json(model.to_json())
    assert back.hp == model.hp
    assert np.array_equal(back.params, model.params)
    X = np.random.default_rng(0).normal(size=(6, 7))
    assert np.array_equal(back.scores(X), model.scores(X))


def test_perfect_classifier_zero_one_risk_zero():
    spec = DataSpec(seed=5)
    data = generate(spec, 2000, draw_seed=3)
    assert empirical_risk(bayes_model(spec), data, LossSpec(kind="zero_one")) == 0.0


def test_constant_score_zero_one_counts_ties_as_errors():
    data = _hand_dataset()
    model = _linear_model([0.0, 0.0], 0.0)  # scores all zero
    assert empirical_risk(model, data, LossSpec(kind="zero_one", bound=1.0)) == 1.0


def test_hand_enumerated_zero_one_risk():
    data = _hand_dataset()
    model = _linear_model([1.0, 0.0], 0.0)  # scores: 1, 0, -1, 0
    # Point 1 correct; points 2 and 4 are ties (errors); point 3 correct.
    assert empirical_risk(model, data, LossSpec(kind="zero_one")) == 0.5


def test_clipped_logistic_single_point_scalar_oracle():
    data = Dataset(features=np.array([[1.0]]), labels=np.array([1.0]))
    model = _linear_model([0.0], 0.0)  # score 0
    value = empirical_risk(model, data, LossSpec())
    oracle = min(1.0, 0.5 * math.log1p(math.exp(0.0)) / math.log(2.0))
    assert value == pytest.approx(oracle, rel=1e-15)
    assert oracle == 0.5


def test_clipped_logistic_saturates_at_bound():
    data = Dataset(features=np.array([[1.0]]), labels=np.array([1.0]))
    model = _linear_model([-50.0], 0.0)  # badly wrong score
    assert empirical_risk(model, data, LossSpec(bound=1.0)) == 1.0


def test_empirical_risk_bounded():
    rng = np.random.default_rng(3)
    data = generate(DataSpec(seed=1), 200, draw_seed=2)
    for loss in (LossSpec(), LossSpec(kind="zero_one"), LossSpec(bound=2.5, lipschitz=2.5)):
        for seed in range(5):
            hp = HyperParams(int(rng.integers(0, 3)), 5, 0.1, 8)
            model = init_model(hp, 20, init_seed=seed)
            risk = empirical_risk(model, data, loss)
            assert 0.0 <= risk <= loss.bound


def test_empirical_risk_empty_rejected():
    empty = Dataset(features=np.zeros((0, 2)), labels=np.zeros(0))
    with pytest.raises(DomainError):
        empirical_risk(_linear_model([1.0, 1.0], 0.0), empty, LossSpec())


def test_clipped_loss_lipschitz_on_score_grid():
    loss = LossSpec()
    from hpotol import kernels

    scores = np.linspace(-8, 8, 2001)
    for y in (1.0, -1.0):
        vals = kernels.loss_values(np.full(scores.size, y), scores, loss.kind_code, loss.bound)
        slopes = np.abs(np.diff(vals) / np.diff(scores))
        assert slopes.max() <= loss.lipschitz
        assert vals.min() >= 0.0 and vals.max() <= loss.bound


def test_true_risk_estimate_bayes_rule_exact_zero():
    spec = DataSpec(seed=9)
    est = true_risk_estimate(
        bayes_model(spec), spec, LossSpec(kind="zero_one"), 20_000, eval_seed=4
    )
    assert est.value == 0.0
    assert est.stderr == 0.0


def test_true_risk_estimate_deterministic():
    spec = DataSpec(seed=9)
    model = init_model(HyperParams(1, 5, 0.1, 8), 20, init_seed=1)
    a = true_risk_estimate(model, spec, LossSpec(), 20_000, eval_seed=4)
    b = true_risk_estimate(model, spec, LossSpec(), 20_000, eval_seed=4)
    assert a == b


def test_true_risk_estimate_floor_enforced():
    spec = DataSpec(seed=9)
    model = init_model(HyperParams(0, 0, 0.1, 1), 20, init_seed=1)
    with pytest.raises(ConfigurationError):
        true_risk_estimate(model, spec, LossSpec(), 500, eval_seed=4)
    # configurable floor
    est = true_risk_estimate(model, spec, LossSpec(), 500, eval_seed=4, min_test_count=100)
    assert 0.0 <= est.value <= 1.0


def test_true_risk_stderr_shrinks_with_sample_size():
    spec = DataSpec(seed=9)
    model = init_model(HyperParams(1, 5, 0.1, 8), 20, init_seed=1)
    ratios = []
    for k in range(10):
        small = true_risk_estimate(model, spec, LossSpec(), 10_000, eval_seed=100 + k)
        large = true_risk_estimate(model, spec, LossSpec(), 20_000, eval_seed=200 + k)
        ratios.append(large.stderr / small.stderr)
    mean_ratio = float(np.mean(ratios))
    assert mean_ratio == pytest.approx(1 / math.sqrt(2), rel=0.2)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(8)
    loss = LossSpec()
    for case in range(6):
        depth = int(rng.integers(0, 3))
        hp = HyperParams(depth, 5 if depth else 0, 0.1, 8)
        data = generate(DataSpec(n_features=6, n_informative=3, seed=case), 30, draw_seed=case)
        model = init_model(hp, 6, init_seed=case)
        _, grad = objective_and_gradient(model, data, loss)
        params = np.array(model.params)
        h = 1e-6
        for t in range(0, params.size, max(1, params.size // 25)):
            up, down = params.copy(), params.copy()
            up[t] += h
            down[t] -= h
            up_risk = empirical_risk(Model(hp=hp, n_features=6, params=up), data, loss)
            down_risk = empirical_risk(Model(hp=hp, n_features=6, params=down), data, loss)
            fd = (up_risk - down_risk) / (2 * h)
            assert abs(fd - grad[t]) <= 1e-4 * max(1.0, abs(fd))


def test_gradient_requires_differentiable_loss():
    data = _hand_dataset()
    with pytest.raises(ConfigurationError):
        objective_and_gradient(_linear_model([1.0, 0.0], 0.0), data, LossSpec(kind="zero_one"))
