"""Generator, critics and recognizer used for appearance adaptation."""

import logging

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.nn import Conv2d, ConvTranspose2d, LeakyReLU, Linear, Module, ResidualBlock, Sequential
from ..autodiff.tensor import Tensor
from ..errors import AutodiffError

logger = logging.getLogger(__name__)

SCALES = (1.0, 0.5, 0.25)
BASE_INPUT_SIZE = 256
CHAR_SIZE = 24
FEATURE_DIM = 64


def _channels(base: int, scale: float) -> int:
    return max(1, int(round(base * scale)))


class Generator(Module):
    """Encoder / residual / decoder translation network over background+mask.

    Block layout at scale s (input 256s, 4 channels):
      1. 7x7 conv 64s stride 1      5. 3x3 deconv 128s stride 2
      2. 3x3 conv 128s stride 2     6. 3x3 deconv 64s stride 2
      3. 3x3 conv 256s stride 2     7. 7x7 conv 3 stride 1, logistic output
      4. two residual blocks of 3x3 conv 256s
    """

    def __init__(self, rng: np.random.Generator, scale: float = 0.25):
        super().__init__()
        if scale not in SCALES:
            raise AutodiffError(f"Generator scale must be one of {SCALES}, got {scale}")
        c1, c2, c3 = _channels(64, scale), _channels(128, scale), _channels(256, scale)
        self.scale = scale
        self.block1 = Conv2d(rng, 4, c1, 7, stride=1)
        self.block2 = Conv2d(rng, c1, c2, 3, stride=2)
        self.block3 = Conv2d(rng, c2, c3, 3, stride=2)
        self.block4 = Sequential(ResidualBlock(rng, c3), ResidualBlock(rng, c3))
        self.block5 = ConvTranspose2d(rng, c3, c2, 3, stride=2)
        self.block6 = ConvTranspose2d(rng, c2, c1, 3, stride=2)
        self.block7 = Conv2d(rng, c1, 3, 7, stride=1)
        object.__setattr__(self, "input_shapes", [(None, 4, None, None)])

    @property
    def input_size(self) -> int:
        return int(BASE_INPUT_SIZE * self.scale)

    def blocks(self, x: Tensor) -> list[Tensor]:
        """Output of every block, in order."""
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise AutodiffError(f"Generator input sides must be multiples of 4, got {x.shape}")
        outputs = []
        for block in (self.block1, self.block2, self.block3, self.block4, self.block5, self.block6):
            x = T.leaky_relu(block(x))
            outputs.append(x)
        outputs.append(T.sigmoid(self.block7(x)))
        return outputs

    def forward(self, x: Tensor) -> Tensor:
        return self.blocks(x)[-1]

    @staticmethod
    def scale_from_state(state: dict[str, np.ndarray]) -> float:
        """Recover the scale from the first block's output channels."""
        weight = state.get("block1.weight")
        if weight is None:
            raise AutodiffError("Checkpoint has no block1.weight; not a generator")
        scale = weight.shape[0] / 64.0
        if scale not in SCALES:
            raise AutodiffError(f"Checkpoint generator width {weight.shape[0]} matches no scale")
        return scale


class Discriminator(Module):
    """Wasserstein critic: four stride-2 convolutions, 1x1 projection, spatial mean."""

    def __init__(self, rng: np.random.Generator, scale: float = 0.25, in_channels: int = 3):
        super().__init__()
        widths = [_channels(w, scale) for w in (64, 128, 256, 512)]
        layers = []
        previous = in_channels
        for width in widths:
            layers += [Conv2d(rng, previous, width, 3, stride=2), LeakyReLU()]
            previous = width
        self.features = Sequential(*layers)
        self.head = Conv2d(rng, previous, 1, 1, stride=1, padding=0)
        object.__setattr__(self, "input_shapes", [(None, in_channels, None, None)])

    def forward(self, x: Tensor) -> Tensor:
        scores = T.spatial_mean(self.head(self.features(x)))  # (N, 1)
        return T.reshape(scores, (scores.shape[0],))


class Recognizer(Module):
    """Small character classifier over CHAR_SIZE x CHAR_SIZE RGB crops."""

    def __init__(self, rng: np.random.Generator, num_classes: int):
        super().__init__()
        if num_classes < 1:
            raise AutodiffError("Recognizer needs at least one class")
        self.trunk = Sequential(
            Conv2d(rng, 3, 32, 3, stride=1),
            LeakyReLU(),
            Conv2d(rng, 32, 64, 3, stride=2),
            LeakyReLU(),
            Conv2d(rng, 64, FEATURE_DIM, 3, stride=2),
            LeakyReLU(),
        )
        side = CHAR_SIZE // 4
        self.hidden = Linear(rng, FEATURE_DIM * side * side, 128)
        self.classifier = Linear(rng, 128, num_classes)
        self.num_classes = num_classes
        object.__setattr__(self, "input_shapes", [(None, 3, CHAR_SIZE, CHAR_SIZE)])

    def forward(self, x: Tensor) -> Tensor:
        features = T.flatten(self.trunk(x))
        return self.classifier(T.leaky_relu(self.hidden(features)))


class FeatureExtractor(Module):
    """The recognizer's convolutional trunk, pooled to a feature vector."""

    def __init__(self, recognizer: Recognizer):
        super().__init__()
        self.trunk = recognizer.trunk

    def forward(self, x: Tensor) -> Tensor:
        return T.spatial_mean(self.trunk(x))


class FeatureDiscriminator(Module):
    """Two-layer fully connected critic on pooled features."""

    def __init__(self, rng: np.random.Generator, features: int = FEATURE_DIM, hidden: int = 64):
        super().__init__()
        self.fc1 = Linear(rng, features, hidden)
        self.fc2 = Linear(rng, hidden, 1)

    def forward(self, x: Tensor) -> Tensor:
        scores = self.fc2(T.leaky_relu(self.fc1(x)))
        return T.reshape(scores, (scores.shape[0],))
