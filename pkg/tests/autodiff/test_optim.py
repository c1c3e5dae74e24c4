"""Tests for RMSProp updates and weight clipping."""

import numpy as np
import pytest

from scenesynth.autodiff.nn import Conv2d, Parameter
from scenesynth.autodiff.optim import OptimizerState, clip_weights, rmsprop_step
from scenesynth.errors import AutodiffError, NonFiniteError, ShapeError


def test_zero_gradient_leaves_parameters_unchanged(rng):
    p = Parameter(rng.standard_normal((3, 3)))
    before = p.data.copy()
    rmsprop_step({"p": p}, {"p": np.zeros((3, 3))}, OptimizerState())
    assert np.array_equal(p.data, before)


def test_constant_gradient_steps_approach_the_learning_rate():
    p = Parameter(np.zeros(4))
    g = np.array([0.5, -0.5, 2.0, -3.0])
    state = OptimizerState(lr=1e-3, decay=0.9)
    for _ in range(200):
        previous = p.data.copy()
        rmsprop_step({"p": p}, {"p": g}, state)
    step = p.data - previous
    assert np.allclose(np.abs(step), 1e-3, rtol=0.01)
    assert np.array_equal(np.sign(step), -np.sign(g))


def test_accumulator_follows_the_update_rule():
    p = Parameter(np.array([1.0]))
    state = OptimizerState(lr=0.1, decay=0.5)
    rmsprop_step({"p": p}, {"p": np.array([2.0])}, state)
    acc = 0.5 * 4.0
    assert state.accumulators["p"][0] == pytest.approx(acc)
    assert p.data[0] == pytest.approx(1.0 - 0.1 * 2.0 / np.sqrt(acc + 1e-8))


def test_identical_runs_give_identical_parameters():
    def run():
        rng = np.random.default_rng(3)
        conv = Conv2d(rng, 2, 2, 3)
        state = OptimizerState()
        params = conv.named_parameters()
        for _ in range(5):
            grads = {name: rng.standard_normal(p.shape).astype(np.float32) for name, p in params.items()}
            rmsprop_step(params, grads, state)
        return conv.state_dict()

    a, b = run(), run()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_bad_gradients_are_rejected():
    p = Parameter(np.zeros(3))
    with pytest.raises(ShapeError):
        rmsprop_step({"p": p}, {"p": np.zeros(4)}, OptimizerState())
    with pytest.raises(NonFiniteError):
        rmsprop_step({"p": p}, {"p": np.array([0.0, np.nan, 0.0])}, OptimizerState())


def test_clip_weights():
    c = 0.01
    small = Parameter(np.array([0.005, -0.009]))
    big = Parameter(np.array([2 * c, -3 * c, 0.0]))
    clip_weights([small, big], c)
    assert small.data.tolist() == [0.005, -0.009]
    assert big.data.tolist() == [c, -c, 0.0]

    params = {"w": Parameter(np.random.default_rng(0).standard_normal((5, 5)))}
    clip_weights(params, c)
    assert np.max(np.abs(params["w"].data)) <= c

    with pytest.raises(AutodiffError):
        clip_weights([small], 0.0)
