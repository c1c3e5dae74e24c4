"""Finite-difference verification of backward()."""

import logging

import numpy as np

from ..errors import AutodiffError
from .nn import Module, backward, forward

logger = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-5
MIN_SAMPLES = 200
GRADIENT_FLOOR = 1e-6


def grad_check(
    graph: Module,
    inputs,
    epsilon: float = DEFAULT_EPSILON,
    rng: np.random.Generator | None = None,
    max_coordinates: int = 1000,
    samples: int = MIN_SAMPLES,
    floor: float = GRADIENT_FLOOR,
) -> float:
    """Max relative error between backward() and central differences.

    The output is projected onto a fixed random direction so one scalar covers
    every output entry. Graphs with more than max_coordinates parameter and input
    entries are checked on a random sample of at least `samples` coordinates.
    """
    rng = rng or np.random.default_rng(0)
    if isinstance(inputs, np.ndarray):
        inputs = [inputs]
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    params = graph.named_parameters()
    if any(p.dtype != np.float64 for p in params.values()):
        raise AutodiffError("grad_check requires 64-bit parameters; call graph.to(np.float64)")

    output = forward(graph, inputs)
    direction = rng.standard_normal(output.shape) / np.sqrt(max(output.data.size, 1))
    grads = backward(graph, direction)

    def objective() -> float:
        return float(np.sum(forward(graph, inputs).data * direction))

    coords = []
    for name, p in params.items():
        if p.requires_grad:
            coords.extend(("param", name, i) for i in range(p.data.size))
    for k, x in enumerate(inputs):
        coords.extend(("input", k, i) for i in range(x.size))
    if not coords:
        raise AutodiffError("Nothing to check: no parameters or inputs")
    if len(coords) > max_coordinates:
        picks = rng.choice(len(coords), size=min(len(coords), max(samples, MIN_SAMPLES)), replace=False)
        coords = [coords[i] for i in sorted(picks)]

    worst = 0.0
    for kind, key, i in coords:
        if kind == "param":
            flat = params[key].data.reshape(-1)
            analytic = grads[key].reshape(-1)[i]
        else:
            flat = inputs[key].reshape(-1)
            g = grads.inputs[key]
            analytic = 0.0 if g is None else g.reshape(-1)[i]
        original = flat[i]
        flat[i] = original + epsilon
        plus = objective()
        flat[i] = original - epsilon
        minus = objective()
        flat[i] = original
        numeric = (plus - minus) / (2.0 * epsilon)
        error = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
        worst = max(worst, error)

    logger.debug("grad_check over %d coordinates: max relative error %.3g", len(coords), worst)
    return worst
