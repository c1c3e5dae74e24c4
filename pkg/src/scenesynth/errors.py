"""Exception hierarchy shared by all scenesynth modules."""


class SceneSynthError(Exception):
    """Base exception for scenesynth errors."""
    pass


class ConfigError(SceneSynthError):
    """Invalid or incomplete configuration."""
    pass


class ImagingError(SceneSynthError):
    """Raster decoding, encoding or sampling errors."""
    pass


class SegmentationError(SceneSynthError):
    """Invalid superpixel or region parameters."""
    pass


class SemanticMapError(SceneSynthError):
    """Malformed semantic label maps or palettes."""
    pass


class TextSourceError(SceneSynthError):
    """Corpus, font or rasterisation errors."""
    pass


class GeometryError(SceneSynthError):
    """Degenerate homographies, boundaries or placements."""
    pass


class AutodiffError(SceneSynthError):
    """Errors raised by the tensor engine."""
    pass


class ShapeError(AutodiffError):
    """Operand shapes do not agree."""
    pass


class NonFiniteError(AutodiffError):
    """A NaN or Inf appeared in a forward value or gradient."""
    pass


class TrainingError(SceneSynthError):
    """GAN or recognizer training failed."""
    pass


class PipelineError(SceneSynthError):
    """End-to-end synthesis errors."""
    pass
