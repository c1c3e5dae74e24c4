"""Wasserstein GAN training of the appearance generator."""

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..autodiff import tensor as T
from ..autodiff.checkpoint import save_checkpoint
from ..autodiff.nn import Module, frozen
from ..autodiff.optim import OptimizerState, clip_weights, rmsprop_step
from ..autodiff.tensor import Tensor
from ..errors import NonFiniteError, TrainingError
from .data import Batch, RealCropSet, TrainingSample, make_batch, real_batch
from .losses import adversarial_loss, compose_masked, critic_loss, feature_loss, semantic_loss
from .networks import Discriminator, FeatureDiscriminator, FeatureExtractor, Generator, Recognizer

logger = logging.getLogger(__name__)

LOG_HEADER = "iteration\tL_D\tL_G\tL_F\tL_S\tseconds"
EVAL_CRITIC_LR = 5e-4


@dataclass
class GanSettings:
    scale: float = 0.25
    size: int = 64
    batch_size: int = 16
    iterations: int = 2000
    n_critic: int = 5
    lr: float = 5e-5
    decay: float = 0.9
    clip: float = 0.01
    lambda_s: float = 1.0
    generator_feature_loss: bool = False
    feature_weight: float = 1.0
    checkpoint_every: int = 500
    samples: int = 256  # training crops collected from the backgrounds
    synthetic_data: bool = False  # flat-colour samples and stand-in real crops
    eval_critic_steps: int = 200  # fresh-critic fit measuring the Wasserstein estimate at start and end; 0 skips


@dataclass
class LossReport:
    """Per-batch loss values; terms a step does not compute stay None."""

    L_D: float | None = None
    L_G: float | None = None
    L_F: float | None = None
    L_S: float | None = None

    def __post_init__(self):
        for name in ("L_D", "L_G", "L_F", "L_S"):
            value = getattr(self, name)
            if value is not None and not math.isfinite(value):
                raise NonFiniteError(f"{name} is not finite ({value})")


@dataclass
class GanNetworks:
    generator: Generator
    discriminator: Discriminator
    feature_discriminator: FeatureDiscriminator
    extractor: FeatureExtractor
    recognizer: Recognizer


@dataclass
class TrainingResult:
    generator: Generator
    log: list[dict] = field(default_factory=list)
    # Fixed evaluation batch, before the first and after the last iteration
    distance_start: float | None = None
    distance_end: float | None = None
    semantic_start: float | None = None
    semantic_end: float | None = None


def _params_and_grads(module: Module) -> tuple[dict, dict]:
    params = module.named_parameters()
    return params, {name: p.grad for name, p in params.items()}


def generate(generator: Generator, x: np.ndarray, m: np.ndarray) -> Tensor:
    """G applied to the 4-channel background + mask input."""
    return generator(T.concat([Tensor(x), Tensor(m)], axis=1))


def discriminator_step(
    discriminator: Discriminator,
    feature_discriminator: FeatureDiscriminator,
    extractor: FeatureExtractor,
    composed: np.ndarray,
    real: np.ndarray,
    d_state: OptimizerState,
    df_state: OptimizerState,
    clip: float = 0.01,
) -> LossReport:
    """One critic update of D and D_F on (L_D + L_F), then weight clipping.

    `composed` is a plain array, so no gradient can reach the generator.
    """
    composed = np.asarray(composed)
    real = np.asarray(real)
    with frozen(extractor):
        discriminator.zero_grad()
        feature_discriminator.zero_grad()
        l_d = critic_loss(discriminator, Tensor(composed), Tensor(real))
        l_f = feature_loss(extractor, feature_discriminator, Tensor(composed), Tensor(real))
        report = LossReport(L_D=l_d.item(), L_F=l_f.item())
        (l_d + l_f).backward()

    rmsprop_step(*_params_and_grads(discriminator), d_state)
    rmsprop_step(*_params_and_grads(feature_discriminator), df_state)
    clip_weights(discriminator.named_parameters(), clip)
    clip_weights(feature_discriminator.named_parameters(), clip)
    return report


def generator_step(
    generator: Generator,
    discriminator: Discriminator,
    recognizer: Recognizer,
    batch: Batch,
    alphabet: str,
    g_state: OptimizerState,
    lambda_s: float = 1.0,
    feature_terms: tuple[FeatureExtractor, FeatureDiscriminator, float] | None = None,
) -> LossReport:
    """One generator update on -mean D(G_m(x)) + lambda_s * L_S.

    D, R (and the feature critic when used) are frozen for the step. The
    semantic term is always reported; it only enters the loss when lambda_s > 0.
    """
    frozen_modules = [discriminator, recognizer]
    if feature_terms is not None:
        frozen_modules += [feature_terms[0], feature_terms[1]]

    with frozen(*frozen_modules):
        generator.zero_grad()
        gx = generate(generator, batch.x, batch.m)
        composed = compose_masked(gx, batch.m, batch.x)
        l_g = adversarial_loss(discriminator, composed)
        l_s = semantic_loss(recognizer, composed, batch.char_boxes, batch.transcripts, alphabet)
        report = LossReport(L_G=l_g.item(), L_S=l_s.item())

        loss = l_g
        if lambda_s > 0:
            loss = loss + l_s * lambda_s
        if feature_terms is not None:
            extractor, feature_critic, weight = feature_terms
            loss = loss - T.mean(feature_critic(extractor(composed))) * weight
        loss.backward()

    rmsprop_step(*_params_and_grads(generator), g_state)
    return report


def critic_estimate(discriminator: Discriminator, composed: np.ndarray, real: np.ndarray) -> float:
    """Wasserstein estimate mean D(real) - mean D(composed)."""
    return -critic_loss(discriminator, Tensor(composed), Tensor(real)).item()


def fit_critic(
    critic: Module,
    composed: np.ndarray,
    real: np.ndarray,
    state: OptimizerState,
    clip: float,
    steps: int,
) -> float:
    """Train a critic alone on fixed composed and real sets; returns its final estimate.

    Each step is a full-batch L_D update followed by weight clipping.
    """
    composed = np.asarray(composed)
    real = np.asarray(real)
    params = critic.named_parameters()
    for _ in range(steps):
        critic.zero_grad()
        critic_loss(critic, Tensor(composed), Tensor(real)).backward()
        rmsprop_step(params, {name: p.grad for name, p in params.items()}, state)
        clip_weights(params, clip)
    return critic_estimate(critic, composed, real)


def distance_estimate(
    generator: Generator, batch: Batch, real: np.ndarray, settings: GanSettings, seed: int
) -> float:
    """Wasserstein estimate between G's composed batch and real crops, from a fresh critic."""
    critic = Discriminator(np.random.default_rng(seed), settings.scale)
    state = OptimizerState(lr=EVAL_CRITIC_LR, decay=settings.decay)
    return fit_critic(critic, _compose_batch(generator, batch), real, state, settings.clip, settings.eval_critic_steps)


def evaluate_semantic(generator: Generator, recognizer: Recognizer, batch: Batch, alphabet: str) -> float:
    """L_S of G's composed batch, without touching any gradient."""
    with frozen(generator, recognizer):
        composed = compose_masked(generate(generator, batch.x, batch.m), batch.m, batch.x)
        return semantic_loss(recognizer, composed, batch.char_boxes, batch.transcripts, alphabet).item()


def build_networks(rng: np.random.Generator, recognizer: Recognizer, scale: float) -> GanNetworks:
    recognizer.freeze()
    extractor = FeatureExtractor(recognizer)
    return GanNetworks(
        generator=Generator(rng, scale),
        discriminator=Discriminator(rng, scale),
        feature_discriminator=FeatureDiscriminator(rng),
        extractor=extractor,
        recognizer=recognizer,
    )


def _compose_batch(generator: Generator, batch: Batch) -> np.ndarray:
    gx = generate(generator, batch.x, batch.m).data
    return compose_masked(gx.transpose(0, 2, 3, 1), batch.m[:, 0], batch.x.transpose(0, 2, 3, 1)).transpose(
        0, 3, 1, 2
    )


def train(
    settings: GanSettings,
    samples: list[TrainingSample],
    real: RealCropSet,
    recognizer: Recognizer,
    alphabet: str,
    rng: np.random.Generator,
    checkpoint_dir: Path | None = None,
    log_path: Path | None = None,
    on_iteration: Callable[[int, LossReport], None] | None = None,
    on_critic_step: Callable[[GanNetworks], None] | None = None,
) -> TrainingResult:
    """Alternate n_critic critic steps with one generator step.

    Non-finite losses restore the last good generator and raise TrainingError.
    With eval_critic_steps > 0 the Wasserstein estimate and L_S of a fixed
    evaluation batch are measured before the first and after the last iteration.
    """
    if not samples:
        raise TrainingError("No training samples X")
    if real is None or len(real) == 0:
        raise TrainingError("No real crops Y")

    nets = build_networks(rng, recognizer, settings.scale)
    eval_seed = int(rng.integers(2**63))
    eval_rng = np.random.default_rng(eval_seed)
    eval_batch = make_batch(samples, eval_rng.choice(len(samples), min(settings.batch_size, len(samples)), False))
    eval_real = real_batch(real, eval_rng.choice(len(real), min(settings.batch_size, len(real)), False))
    result = TrainingResult(generator=nets.generator)
    if settings.eval_critic_steps > 0:
        result.distance_start = distance_estimate(nets.generator, eval_batch, eval_real, settings, eval_seed)
        result.semantic_start = evaluate_semantic(nets.generator, nets.recognizer, eval_batch, alphabet)
        logger.info("Start: distance %.4f L_S %.4f", result.distance_start, result.semantic_start)

    d_state = OptimizerState(lr=settings.lr, decay=settings.decay)
    df_state = OptimizerState(lr=settings.lr, decay=settings.decay)
    g_state = OptimizerState(lr=settings.lr, decay=settings.decay)
    feature_terms = None
    if settings.generator_feature_loss:
        feature_terms = (nets.extractor, nets.feature_discriminator, settings.feature_weight)

    batch_size = min(settings.batch_size, len(samples))
    real_size = min(settings.batch_size, len(real))
    last_good = (0, nets.generator.state_dict())
    log: list[dict] = []
    started = time.perf_counter()

    log_file = None
    if log_path is not None:
        log_path = Path(log_path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        log_file = open(log_path, "w", encoding="utf-8")
        log_file.write(LOG_HEADER + "\n")

    try:
        for iteration in range(1, settings.iterations + 1):
            try:
                for _ in range(settings.n_critic):
                    batch = make_batch(samples, rng.choice(len(samples), batch_size, replace=False))
                    real_images = real_batch(real, rng.choice(len(real), real_size, replace=False))
                    critic = discriminator_step(
                        nets.discriminator,
                        nets.feature_discriminator,
                        nets.extractor,
                        _compose_batch(nets.generator, batch),
                        real_images,
                        d_state,
                        df_state,
                        settings.clip,
                    )
                    if on_critic_step:
                        on_critic_step(nets)
                batch = make_batch(samples, rng.choice(len(samples), batch_size, replace=False))
                gen = generator_step(
                    nets.generator,
                    nets.discriminator,
                    nets.recognizer,
                    batch,
                    alphabet,
                    g_state,
                    settings.lambda_s,
                    feature_terms,
                )
            except NonFiniteError as e:
                good_iteration, state = last_good
                nets.generator.load_state_dict(state)
                if checkpoint_dir is not None:
                    save_checkpoint(Path(checkpoint_dir) / "generator_last.ckpt", nets.generator)
                raise TrainingError(
                    f"Training diverged at iteration {iteration} ({e}); "
                    f"restored generator from iteration {good_iteration}"
                ) from e

            report = LossReport(L_D=critic.L_D, L_G=gen.L_G, L_F=critic.L_F, L_S=gen.L_S)
            record = {"iteration": iteration, **report.__dict__, "seconds": time.perf_counter() - started}
            log.append(record)
            if log_file is not None:
                log_file.write(
                    f"{iteration}\t{report.L_D:.6g}\t{report.L_G:.6g}\t{report.L_F:.6g}\t"
                    f"{report.L_S:.6g}\t{record['seconds']:.3f}\n"
                )
                log_file.flush()
            if on_iteration:
                on_iteration(iteration, report)

            if iteration % settings.checkpoint_every == 0 or iteration == settings.iterations:
                last_good = (iteration, nets.generator.state_dict())
                if checkpoint_dir is not None:
                    checkpoint_dir = Path(checkpoint_dir)
                    save_checkpoint(checkpoint_dir / f"generator_{iteration:06d}.ckpt", nets.generator)
                    save_checkpoint(checkpoint_dir / "generator_last.ckpt", nets.generator)
                logger.info(
                    "Iteration %d: L_D %.4f L_G %.4f L_F %.4f L_S %.4f",
                    iteration, report.L_D, report.L_G, report.L_F, report.L_S,
                )
    finally:
        if log_file is not None:
            log_file.close()

    result.log = log
    if settings.eval_critic_steps > 0:
        result.distance_end = distance_estimate(nets.generator, eval_batch, eval_real, settings, eval_seed)
        result.semantic_end = evaluate_semantic(nets.generator, nets.recognizer, eval_batch, alphabet)
        logger.info("End: distance %.4f L_S %.4f", result.distance_end, result.semantic_end)
    return result


def read_training_log(path: Path) -> list[dict]:
    """Parse a tab-separated training log back into records."""
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != LOG_HEADER:
        raise TrainingError(f"Not a training log: {path}")
    records = []
    for line in lines[1:]:
        it, l_d, l_g, l_f, l_s, seconds = line.split("\t")
        records.append(
            {
                "iteration": int(it),
                "L_D": float(l_d),
                "L_G": float(l_g),
                "L_F": float(l_f),
                "L_S": float(l_s),
                "seconds": float(seconds),
            }
        )
    return records
