"""Parameterized modules built on the tensor tape."""

import contextlib
import logging
from collections.abc import Iterator

import numpy as np

from ..errors import AutodiffError, ShapeError
from . import tensor as T
from .tensor import Tensor

logger = logging.getLogger(__name__)


class Parameter(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, name: str = ""):
        super().__init__(np.asarray(data), requires_grad=True, name=name)


class Module:
    """A differentiable graph with named parameters and child modules.

    Attributes holding a Parameter or a Module are registered automatically,
    in assignment order.
    """

    def __init__(self):
        object.__setattr__(self, "_parameters", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "_last_output", None)
        object.__setattr__(self, "input_shapes", None)

    def __setattr__(self, name, value):
        if isinstance(value, Parameter):
            value.name = value.name or name
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def forward(self, *inputs: Tensor) -> Tensor:
        raise NotImplementedError

    def __call__(self, *inputs) -> Tensor:
        return self.forward(*[T.as_tensor(x) for x in inputs])

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        params = {prefix + name: p for name, p in self._parameters.items()}
        for name, module in self._modules.items():
            params.update(module.named_parameters(f"{prefix}{name}."))
        return params

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def modules(self) -> Iterator["Module"]:
        yield self
        for module in self._modules.values():
            yield from module.modules()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> "Module":
        """Stop tracking gradients for every parameter."""
        for p in self.parameters():
            p.requires_grad = False
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.requires_grad = True
        return self

    @property
    def is_frozen(self) -> bool:
        return not any(p.requires_grad for p in self.parameters())

    def to(self, dtype) -> "Module":
        """Cast parameters in place (float32 for training, float64 for checks)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = sorted(set(params) - set(state))
        unexpected = sorted(set(state) - set(params))
        if missing or unexpected:
            raise AutodiffError(f"State mismatch: missing {missing}, unexpected {unexpected}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ShapeError(f"Parameter {name}: expected {p.shape}, got {state[name].shape}")
            p.data = np.array(state[name], dtype=p.dtype)


@contextlib.contextmanager
def frozen(*modules: Module):
    """Temporarily stop gradient tracking for the given modules' parameters."""
    saved = [(p, p.requires_grad) for m in modules for p in m.parameters()]
    for p, _ in saved:
        p.requires_grad = False
    try:
        yield
    finally:
        for p, flag in saved:
            p.requires_grad = flag


def _uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Conv2d(Module):
    def __init__(self, rng, in_channels: int, out_channels: int, kernel: int, stride: int = 1, padding: int | None = None):
        super().__init__()
        fan_in = in_channels * kernel * kernel
        self.weight = Parameter(_uniform(rng, (out_channels, in_channels, kernel, kernel), fan_in))
        self.bias = Parameter(_uniform(rng, (out_channels,), fan_in))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class ConvTranspose2d(Module):
    def __init__(
        self,
        rng,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 2,
        padding: int | None = None,
        output_padding: int | None = None,
    ):
        super().__init__()
        fan_in = out_channels * kernel * kernel
        self.weight = Parameter(_uniform(rng, (in_channels, out_channels, kernel, kernel), fan_in))
        self.bias = Parameter(_uniform(rng, (out_channels,), fan_in))
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.output_padding = stride - 1 if output_padding is None else output_padding

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose2d(x, self.weight, self.bias, self.stride, self.padding, self.output_padding)


class Linear(Module):
    def __init__(self, rng, in_features: int, out_features: int):
        super().__init__()
        self.weight = Parameter(_uniform(rng, (out_features, in_features), in_features))
        self.bias = Parameter(_uniform(rng, (out_features,), in_features))

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class LeakyReLU(Module):
    def __init__(self, slope: float = T.LEAKY_SLOPE):
        super().__init__()
        self.slope = slope

    def forward(self, x: Tensor) -> Tensor:
        return T.leaky_relu(x, self.slope)


class ResidualBlock(Module):
    """x + conv(lrelu(conv(x))) with same-size 3x3 convolutions."""

    def __init__(self, rng, channels: int):
        super().__init__()
        self.conv1 = Conv2d(rng, channels, channels, 3)
        self.conv2 = Conv2d(rng, channels, channels, 3)

    def forward(self, x: Tensor) -> Tensor:
        return x + self.conv2(T.leaky_relu(self.conv1(x)))


class Sequential(Module):
    def __init__(self, *layers: Module):
        super().__init__()
        for i, layer in enumerate(layers):
            setattr(self, str(i), layer)
        object.__setattr__(self, "layers", list(layers))

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x


class Gradients(dict):
    """Parameter gradients by name, plus the gradients of the graph inputs."""

    def __init__(self, params: dict[str, np.ndarray], inputs: list[np.ndarray | None]):
        super().__init__(params)
        self.inputs = inputs


def forward(graph: Module, inputs) -> Tensor:
    """Run a graph, remembering its inputs and output for a later backward()."""
    if isinstance(inputs, (Tensor, np.ndarray)):
        inputs = [inputs]
    tensors = []
    for i, x in enumerate(inputs):
        array = x.data if isinstance(x, Tensor) else np.asarray(x)
        if graph.input_shapes is not None:
            expected = graph.input_shapes[i]
            if len(expected) != array.ndim or any(
                e is not None and e != a for e, a in zip(expected, array.shape)
            ):
                raise ShapeError(
                    f"{type(graph).__name__} input {i}: expected shape {expected}, got {array.shape}"
                )
        tensors.append(Tensor(array, requires_grad=True, name=f"input{i}"))
    output = graph(*tensors)
    object.__setattr__(graph, "_last_output", (tensors, output))
    return output


def backward(graph: Module, output_gradient) -> Gradients:
    """Reverse pass from the last forward(); returns parameter and input gradients."""
    if graph._last_output is None:
        raise AutodiffError(f"backward() called before forward() on {type(graph).__name__}")
    inputs, output = graph._last_output
    graph.zero_grad()
    output.backward(np.asarray(output_gradient, dtype=output.dtype))
    object.__setattr__(graph, "_last_output", None)
    params = {
        name: (p.grad if p.grad is not None else np.zeros_like(p.data))
        for name, p in graph.named_parameters().items()
        if p.requires_grad
    }
    return Gradients(params, [x.grad for x in inputs])
