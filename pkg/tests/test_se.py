import numpy as np
import pytest

from dkcnet.attention import ConfigError
from dkcnet.se import SeConfig, init_se_params, se_channel_weights, se_forward
from dkcnet.tensor import DimensionError, Tensor, finite_diff_check, mul, sum_all


def params(c=8, r=4, seed=0):
    return init_se_params(SeConfig(c, r), np.random.default_rng(seed))


def test_zero_weights_halve_input():
    p = params()
    for t in (p.fc1_w, p.fc1_b, p.fc2_w, p.fc2_b):
        t.data[...] = 0.0
    x = Tensor(np.random.default_rng(1).normal(size=(2, 8, 4, 4)))
    assert np.array_equal(se_forward(x, p).data, 0.5 * x.data)


def test_saturated_bias_passes_input_through():
    p = params(seed=2)
    p.fc2_w.data[...] = 0.0
    p.fc2_b.data[...] = 20.0
    x = Tensor(np.random.default_rng(3).normal(size=(2, 8, 4, 4)))
    assert np.max(np.abs(se_forward(x, p).data - x.data)) < 1e-6


def test_shape_and_uniform_channel_scaling():
    p = params(c=16, seed=4)
    x = Tensor(np.random.default_rng(5).normal(size=(3, 16, 5, 5)) + 3.0)
    out = se_forward(x, p).data
    assert out.shape == x.shape
    w = se_channel_weights(x, p).data
    assert np.all((w > 0) & (w < 1))
    ratio = out / x.data
    assert np.allclose(ratio, ratio[:, :, :1, :1], rtol=0, atol=1e-12)


def test_gradients():
    p = params(seed=6)
    rng = np.random.default_rng(7)
    x = Tensor(rng.normal(size=(2, 8, 3, 3)), requires_grad=True)
    w = Tensor(rng.normal(size=(2, 8, 3, 3)))
    named = {"x": x, **p.named()}
    rep = finite_diff_check(lambda: sum_all(mul(se_forward(x, p), w)), named)
    assert rep.passed, rep.per_input


def test_errors():
    with pytest.raises(ConfigError):
        SeConfig(8, 3).validate()
    with pytest.raises(DimensionError):
        se_forward(Tensor(np.zeros((1, 4, 3, 3))), params())
