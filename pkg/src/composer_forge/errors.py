"""Exception types shared across the toolkit.

Everything raised on purpose derives from ComposerForgeError so callers
(and the CLI) can tell our failures apart from genuine bugs.
"""


class ComposerForgeError(Exception):
    """Base class for all errors raised by composer_forge."""


class MidiError(ComposerForgeError):
    """Base class for Standard MIDI File problems."""


class MalformedFileError(MidiError):
    """The byte stream violates the Standard MIDI File format."""


class UnsupportedFeatureError(MidiError):
    """Valid SMF, but uses a feature we deliberately do not handle
    (SMPTE division, format 2)."""


class CacheError(ComposerForgeError):
    """A piano-roll cache file is missing, stale, or corrupt."""


class DatasetError(ComposerForgeError):
    """Metadata ingestion, labeling, or splitting failed."""


class ConfigError(ComposerForgeError):
    """An experiment configuration is invalid or incomplete."""


class ShapeError(ComposerForgeError):
    """Tensor shapes passed to an op are incompatible."""


class CheckpointError(ComposerForgeError):
    """A checkpoint file cannot be read or does not match the model."""


class MetricError(ComposerForgeError):
    """A metric is undefined for the given input (e.g. empty confusion)."""


class OptimizerError(ComposerForgeError):
    """The optimizer was asked to step with missing or unusable gradients."""


class TrainingDivergedError(ComposerForgeError):
    """Training hit a non-finite loss and was aborted."""
