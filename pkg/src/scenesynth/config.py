"""Synthesis configuration: YAML loading, command-line overrides, validation."""

import dataclasses
import logging
import os
import types
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml
from dotenv import find_dotenv, load_dotenv

from .appearance.networks import SCALES
from .appearance.recognizer import RecognizerSettings
from .appearance.training import GanSettings
from .errors import ConfigError
from .regions.semantics import DEFAULT_WHITELIST

logger = logging.getLogger(__name__)

CONFIG_ENV = "SCENESYNTH_CONFIG"
WORKERS_ENV = "SCENESYNTH_WORKERS"
MAX_INSTANCES_LIMIT = 15


@dataclass
class PathsConfig:
    backgrounds: Path | None = None
    semantic_maps: Path | None = None
    palette: Path | None = None
    corpus: Path | None = None
    fonts: Path | None = None
    generator: Path | None = None
    recognizer: Path | None = None
    real_crops: Path | None = None
    output: Path = Path("output")
    training_output: Path = Path("training")


@dataclass
class SegmentationConfig:
    superpixels: int | None = None  # None scales 300 per 512x512
    compactness: float = 10.0
    iterations: int = 10
    merge_delta_e: float = 8.0


@dataclass
class SelectionConfig:
    whitelist: list[str] = field(default_factory=lambda: list(DEFAULT_WHITELIST))
    min_score: float = 0.6
    min_area_frac: float = 0.005


@dataclass
class GeometryConfig:
    max_perturb: float = 0.15
    margins: float = 0.05
    baseline_offset: float = 0.1
    max_height_frac: float = 0.6
    max_overlap_iou: float = 0.05


@dataclass
class TextConfig:
    word_probability: float = 0.7
    max_chars: int = 25
    px_height: int = 48


@dataclass
class LimitsConfig:
    max_instances: int = MAX_INSTANCES_LIMIT
    retries: int = 20


@dataclass
class AppearanceConfig:
    use_generator: bool = True
    export_crops: bool = False
    crop_height: int = 32


@dataclass
class SynthesisConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    segmentation: SegmentationConfig = field(default_factory=SegmentationConfig)
    selection: SelectionConfig = field(default_factory=SelectionConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    text: TextConfig = field(default_factory=TextConfig)
    limits: LimitsConfig = field(default_factory=LimitsConfig)
    appearance: AppearanceConfig = field(default_factory=AppearanceConfig)
    gan: GanSettings = field(default_factory=GanSettings)
    recognizer: RecognizerSettings = field(default_factory=RecognizerSettings)
    seed: int = 0
    workers: int = 1
    region_detection: bool = True
    text_embedding: bool = True


SECTIONS = [f.name for f in dataclasses.fields(SynthesisConfig) if dataclasses.is_dataclass(f.default_factory)]


def get_default_config_path() -> Path | None:
    """Find synth.yaml: $SCENESYNTH_CONFIG, ./config, then the user config dir."""
    candidates = []
    if os.environ.get(CONFIG_ENV):
        candidates.append(Path(os.environ[CONFIG_ENV]))
    candidates += [
        Path.cwd() / "config" / "synth.yaml",
        Path.home() / ".config" / "scenesynth" / "synth.yaml",
    ]
    for path in candidates:
        if path.exists():
            return path
    return None


def _type_hints(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)


def _coerce(value, hint, key: str):
    """Convert a YAML value to a dataclass field type."""
    origin = typing.get_origin(hint)
    args = typing.get_args(hint)
    if origin in (typing.Union, types.UnionType):
        if value is None and type(None) in args:
            return None
        inner = [a for a in args if a is not type(None)]
        return _coerce(value, inner[0], key)
    if hint is Path:
        if not isinstance(value, (str, Path)):
            raise ConfigError(f"{key}: expected a path, got {value!r}")
        return Path(value).expanduser()
    if origin is list:
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return [_coerce(v, args[0], key) for v in value]
    if hint is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if hint is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if hint is float:
        if isinstance(value, str):
            # YAML 1.1 reads exponents without a sign or dot (1e-4) as strings
            try:
                return float(value)
            except ValueError:
                pass
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if hint is str:
        return str(value)
    return value


def _build_section(cls, data: dict, section: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"Section {section!r} must be a mapping")
    hints = _type_hints(cls)
    unknown = sorted(set(data) - set(hints))
    if unknown:
        raise ConfigError(f"Unknown key(s) in {section!r}: {', '.join(unknown)}")
    values = {key: _coerce(value, hints[key], f"{section}.{key}") for key, value in data.items()}
    return cls(**values)


def config_from_dict(data: dict | None) -> SynthesisConfig:
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError("Configuration must be a mapping")
    hints = _type_hints(SynthesisConfig)
    unknown = sorted(set(data) - set(hints))
    if unknown:
        raise ConfigError(f"Unknown configuration key(s): {', '.join(unknown)}")
    values = {}
    for key, value in data.items():
        if key in SECTIONS:
            values[key] = _build_section(hints[key], value, key)
        else:
            values[key] = _coerce(value, hints[key], key)
    return SynthesisConfig(**values)


def load_config(path: Path | None = None) -> SynthesisConfig:
    """Load configuration from YAML (explicit path or the default search list)."""
    load_dotenv(find_dotenv(usecwd=True))
    path = Path(path) if path else get_default_config_path()
    if path is None:
        logger.debug("No configuration file found; using defaults")
        config = SynthesisConfig()
    else:
        if not path.exists():
            raise ConfigError(f"Config file not found: {path}")
        try:
            with open(path, encoding="utf-8") as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML in {path}: {e}") from e
        config = config_from_dict(data)
        logger.debug("Loaded configuration from %s", path)

    if os.environ.get(WORKERS_ENV):
        try:
            config.workers = int(os.environ[WORKERS_ENV])
        except ValueError as e:
            raise ConfigError(f"{WORKERS_ENV} must be an integer") from e
    return config


def _field_index() -> dict[str, list[tuple[str | None, str]]]:
    """Bare field name -> [(section or None, field)] for override lookup."""
    index: dict[str, list[tuple[str | None, str]]] = {}
    for name, hint in _type_hints(SynthesisConfig).items():
        if name in SECTIONS:
            for sub in _type_hints(hint):
                index.setdefault(sub, []).append((name, sub))
        else:
            index.setdefault(name, []).append((None, name))
    return index


def parse_override_args(args: list[str]) -> list[tuple[str, str]]:
    """Pair up `--key value` / `--key=value` tokens."""
    pairs = []
    i = 0
    while i < len(args):
        token = args[i]
        if not token.startswith("--") or len(token) == 2:
            raise ConfigError(f"Unexpected argument {token!r}; overrides look like --key value")
        key = token[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"Override --{key} is missing a value")
            value = args[i + 1]
            i += 2
        pairs.append((key.replace("-", "_"), value))
    return pairs


def apply_overrides(config: SynthesisConfig, overrides: list[tuple[str, str]]) -> SynthesisConfig:
    """Set fields from (key, raw value) pairs; keys are dotted or unambiguous bare names."""
    index = _field_index()
    top_hints = _type_hints(SynthesisConfig)
    for key, raw in overrides:
        if "." in key:
            section, name = key.split(".", 1)
            if section not in SECTIONS or name not in _type_hints(top_hints[section]):
                raise ConfigError(f"Unknown configuration key {key!r}")
            target = (section, name)
        else:
            matches = index.get(key, [])
            if not matches:
                raise ConfigError(f"Unknown configuration key {key!r}")
            if len(matches) > 1:
                options = ", ".join(f"{s}.{n}" if s else n for s, n in matches)
                raise ConfigError(f"Ambiguous key {key!r}; use one of {options}")
            target = matches[0]

        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError as e:
            raise ConfigError(f"Bad value for {key}: {raw!r}") from e
        section, name = target
        if section is None:
            setattr(config, name, _coerce(value, top_hints[name], name))
        else:
            obj = getattr(config, section)
            hint = _type_hints(type(obj))[name]
            if hint is str and value is not None:
                value = raw
            setattr(obj, name, _coerce(value, hint, f"{section}.{name}"))
    return config


# Paths each command reads
REQUIRED_PATHS = {
    "synth": ("backgrounds", "semantic_maps", "palette", "corpus", "fonts"),
    "train-gan": ("fonts", "recognizer"),
    "pretrain-recognizer": ("fonts",),
    "regions": ("backgrounds",),
}


def _check_range(problems: list[str], name: str, value, lo, hi) -> None:
    if value is None or not lo <= value <= hi:
        problems.append(f"{name} must be in [{lo}, {hi}], got {value}")


def validate_config(config: SynthesisConfig, command: str) -> None:
    """Check ranges and required paths for a command; all problems in one ConfigError."""
    if command not in REQUIRED_PATHS:
        raise ConfigError(f"Unknown command {command!r}")
    problems: list[str] = []

    _check_range(problems, "limits.max_instances", config.limits.max_instances, 1, MAX_INSTANCES_LIMIT)
    _check_range(problems, "geometry.max_perturb", config.geometry.max_perturb, 0.0, 0.3)
    for name in ("margins", "baseline_offset", "max_height_frac", "max_overlap_iou"):
        _check_range(problems, f"geometry.{name}", getattr(config.geometry, name), 0.0, 1.0)
    if config.geometry.margins >= 0.5:
        problems.append("geometry.margins must be < 0.5")
    if config.geometry.baseline_offset + config.geometry.max_height_frac > 1.0:
        problems.append("geometry.baseline_offset + geometry.max_height_frac must be <= 1")
    _check_range(problems, "selection.min_score", config.selection.min_score, 0.0, 1.0)
    _check_range(problems, "selection.min_area_frac", config.selection.min_area_frac, 0.0, 1.0)
    _check_range(problems, "text.word_probability", config.text.word_probability, 0.0, 1.0)
    if not config.selection.whitelist:
        problems.append("selection.whitelist must name at least one class")
    if config.text.max_chars < 1:
        problems.append("text.max_chars must be >= 1")
    if config.appearance.crop_height < 8:
        problems.append("appearance.crop_height must be >= 8")
    if config.text.px_height < 8:
        problems.append("text.px_height must be >= 8")
    if config.limits.retries < 0:
        problems.append("limits.retries must be >= 0")
    if config.workers < 1:
        problems.append("workers must be >= 1")
    if not 0 <= config.seed < 2**64:
        problems.append("seed must be a 64-bit unsigned integer")

    seg = config.segmentation
    if seg.superpixels is not None and seg.superpixels < 1:
        problems.append("segmentation.superpixels must be >= 1")
    if seg.compactness <= 0:
        problems.append("segmentation.compactness must be > 0")
    if seg.iterations < 1:
        problems.append("segmentation.iterations must be >= 1")
    if seg.merge_delta_e <= 0:
        problems.append("segmentation.merge_delta_e must be > 0")

    gan = config.gan
    if gan.scale not in SCALES:
        problems.append(f"gan.scale must be one of {SCALES}")
    if gan.size < 16 or gan.size % 4:
        problems.append("gan.size must be a multiple of 4 and >= 16")
    for name in ("batch_size", "iterations", "n_critic", "checkpoint_every", "samples"):
        if getattr(gan, name) < 1:
            problems.append(f"gan.{name} must be >= 1")
    if gan.lr <= 0 or gan.clip <= 0:
        problems.append("gan.lr and gan.clip must be > 0")
    if not 0.0 < gan.decay < 1.0:
        problems.append("gan.decay must be in (0, 1)")
    if gan.lambda_s < 0:
        problems.append("gan.lambda_s must be >= 0")
    if gan.eval_critic_steps < 0:
        problems.append("gan.eval_critic_steps must be >= 0")
    if not config.recognizer.alphabet:
        problems.append("recognizer.alphabet must not be empty")
    if not 0.0 < config.recognizer.lr_decay <= 1.0:
        problems.append("recognizer.lr_decay must be in (0, 1]")

    required = list(REQUIRED_PATHS[command])
    if command == "synth" and config.text_embedding and config.appearance.use_generator:
        required.append("generator")
    if command == "synth" and not config.region_detection:
        required.remove("semantic_maps")
        required.remove("palette")
    if command == "train-gan" and not gan.synthetic_data:
        required += ["backgrounds", "semantic_maps", "palette", "corpus", "real_crops"]
    for name in required:
        path = getattr(config.paths, name)
        if path is None:
            problems.append(f"paths.{name} is required for {command}")
        elif not Path(path).exists():
            problems.append(f"paths.{name} does not exist: {path}")

    if problems:
        raise ConfigError("Invalid configuration:\n  " + "\n  ".join(problems))
