"""Tests for the finite-difference gradient checker itself."""

import numpy as np
import pytest

from scenesynth.autodiff import tensor as T
from scenesynth.autodiff.gradcheck import grad_check
from scenesynth.autodiff.nn import Linear, Module, Parameter, ResidualBlock
from scenesynth.errors import AutodiffError


class Scale(Module):
    """y = w * x."""

    def __init__(self, w):
        super().__init__()
        self.w = Parameter(np.asarray(w, dtype=np.float64))

    def forward(self, x):
        return T.mul(x, self.w)


class WrongSquare(Module):
    """x**2 whose backward forgets the factor of two."""

    def forward(self, x):
        return T._result(x.data * x.data, (x,), "wrong_square", lambda g: (g * x.data,))


def test_linear_graph_is_exact(rng):
    error = grad_check(Scale(rng.standard_normal(5)), rng.standard_normal(5), epsilon=1e-3)
    assert error < 1e-10


def test_wrong_gradient_is_reported(rng):
    x = rng.uniform(0.5, 2.0, size=6)
    assert grad_check(WrongSquare(), x) > 1e-2


def test_layers_pass(rng):
    linear = Linear(rng, 4, 3).to(np.float64)
    assert grad_check(linear, rng.standard_normal((2, 4))) < 1e-4
    block = ResidualBlock(rng, 2).to(np.float64)
    assert grad_check(block, rng.standard_normal((1, 2, 4, 4)), max_coordinates=100, samples=200) < 1e-4


def test_grad_check_needs_64_bit_parameters(rng):
    with pytest.raises(AutodiffError, match="64-bit"):
        grad_check(Linear(rng, 2, 2), np.zeros((1, 2)))
