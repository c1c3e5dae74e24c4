"""GAN-based appearance adaptation of embedded text."""

from .data import RealCropSet, TrainingSample, load_real_crops, synthetic_real_crops, synthetic_samples
from .inference import infer_appearance, load_generator, load_recognizer
from .losses import compose_masked, feature_loss, semantic_loss
from .networks import Discriminator, FeatureDiscriminator, FeatureExtractor, Generator, Recognizer
from .recognizer import pretrain_recognizer, resolve_alphabet
from .training import GanSettings, LossReport, discriminator_step, generator_step, train

__all__ = [
    "Discriminator",
    "FeatureDiscriminator",
    "FeatureExtractor",
    "GanSettings",
    "Generator",
    "LossReport",
    "RealCropSet",
    "Recognizer",
    "TrainingSample",
    "compose_masked",
    "discriminator_step",
    "feature_loss",
    "generator_step",
    "infer_appearance",
    "load_generator",
    "load_real_crops",
    "load_recognizer",
    "pretrain_recognizer",
    "resolve_alphabet",
    "semantic_loss",
    "synthetic_real_crops",
    "synthetic_samples",
    "train",
]
