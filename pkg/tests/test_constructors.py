import math

import numpy as np
import pytest

from hyperl1.analysis import AlgorithmLabel, calibrate_from_constructors, classify, order_params, seed_dependence
from hyperl1.constructors import (ConstructorConfig, active_hidden_neurons, build_convexity, build_double_sided,
                                  build_pudding, build_pudding_imperfect, sample_convexity_matrix)
from hyperl1.errors import ConfigError, NumericError
from hyperl1.network import evaluate_mse, forward_numpy, raw_l1_estimate, sample_batch


@pytest.fixture(scope="module")
def batch16():
    return sample_batch(16, 100_000, np.random.default_rng(2024))


@pytest.fixture(scope="module")
def thresholds():
    return calibrate_from_constructors(16, 48, np.random.default_rng(99))


def test_double_sided_raw_l1():
    w = build_double_sided(ConstructorConfig(2, 4, c_act=50))
    assert raw_l1_estimate(w, np.array([[3.0, -4.0]]))[0] == pytest.approx(7.0, abs=1e-3)
    assert raw_l1_estimate(w, np.zeros((1, 2)))[0] == 0.0


def test_double_sided_mse(batch16):
    assert evaluate_mse(build_double_sided(ConstructorConfig(16, 48)), batch16) < 1e-4


def test_pudding_relu_limit_identity():
    for sign in "+-":
        w = build_pudding(ConstructorConfig(2, 3, c_act=1e4, pudding_sign=sign))
        assert raw_l1_estimate(w, np.array([[1.0, -2.0]]))[0] == pytest.approx(3.0, abs=1e-3)


def test_pudding_offset_tail_bound():
    # P(100 + sum x < 0) for sum x ~ N(0, 16): a 25-sigma event
    tail = 0.5 * math.erfc(100.0 / 4.0 / math.sqrt(2.0))
    assert tail < 1e-80


def test_pudding_mse_and_active_count(batch16):
    for sign in "+-":
        w = build_pudding(ConstructorConfig(16, 48, pudding_sign=sign))
        assert evaluate_mse(w, batch16) < 1e-3
        assert active_hidden_neurons(w) == 17


def test_imperfect_pudding_is_worse(batch16):
    cfg = ConstructorConfig(16, 48)
    assert evaluate_mse(build_pudding_imperfect(cfg), batch16) > evaluate_mse(build_pudding(cfg), batch16)


def test_imperfect_pudding_classifies_as_pudding(thresholds):
    for sign in "+-":
        W = build_pudding_imperfect(ConstructorConfig(16, 48, pudding_sign=sign)).first_layer()
        assert classify(order_params(W), thresholds) is AlgorithmLabel.PUDDING


def test_capacity_errors():
    with pytest.raises(ConfigError):
        build_double_sided(ConstructorConfig(4, 7))
    with pytest.raises(ConfigError):
        build_pudding(ConstructorConfig(4, 4))
    with pytest.raises(ConfigError):
        build_pudding_imperfect(ConstructorConfig(4, 7))
    with pytest.raises(ConfigError):
        ConstructorConfig(c_act=0.0)


def test_convexity_fit(batch16):
    w = build_convexity(ConstructorConfig(16, 48), np.random.default_rng(5))
    mse = evaluate_mse(w, batch16)
    assert 0.0 < mse < 1.0


def test_convexity_degenerate():
    with pytest.raises(NumericError):
        build_convexity(ConstructorConfig(16, 48), np.random.default_rng(0), W0=np.zeros((48, 16)))


def test_convexity_seed_dependence():
    cfg = ConstructorConfig(16, 48)
    a = sample_convexity_matrix(cfg, np.random.default_rng(1))
    b = sample_convexity_matrix(cfg, np.random.default_rng(2))
    assert seed_dependence(a, b) == pytest.approx(1.0, abs=0.1)


def test_mse_ordering(batch16):
    cfg = ConstructorConfig(16, 48)
    ds = evaluate_mse(build_double_sided(cfg), batch16)
    pud = evaluate_mse(build_pudding(cfg), batch16)
    conv = evaluate_mse(build_convexity(cfg, np.random.default_rng(3)), batch16)
    # double-sided and exact pudding compute the same function under silu
    # (silu(u) - silu(-u) = u), so their gap is pure rounding
    assert ds == pytest.approx(pud, rel=1e-9)
    assert pud < conv


def test_constructors_classify(thresholds):
    cfg = ConstructorConfig(16, 48)
    assert classify(order_params(build_double_sided(cfg).first_layer()), thresholds) is AlgorithmLabel.DOUBLE_SIDED
    assert classify(order_params(build_pudding(cfg).first_layer()), thresholds) is AlgorithmLabel.PUDDING
    conv = build_convexity(cfg, np.random.default_rng(8))
    assert classify(order_params(conv.first_layer()), thresholds) is AlgorithmLabel.CONVEXITY


def test_silu_identity_behind_the_tie():
    u = np.linspace(-30, 30, 101)
    silu = lambda z: z / (1 + np.exp(-z))  # noqa: E731
    np.testing.assert_allclose(silu(u) - silu(-u), u, atol=1e-12)
    x = np.random.default_rng(0).normal(size=(50, 16))
    cfg = ConstructorConfig(16, 48)
    np.testing.assert_allclose(forward_numpy(build_pudding(cfg), x), forward_numpy(build_double_sided(cfg), x),
                               atol=1e-9)
