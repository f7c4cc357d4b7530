"""Exception hierarchy shared by every module."""


class WavLMSIError(Exception):
    """Base class for all errors raised by this package."""

    #: short machine-readable tag printed by the CLI
    kind = "error"


class DimensionError(WavLMSIError, ValueError):
    kind = "dimension"


class NonFiniteError(WavLMSIError, ValueError):
    kind = "non-finite"


class ConfigError(WavLMSIError, ValueError):
    kind = "config"


class InputError(WavLMSIError, ValueError):
    kind = "input"


class InputTooShortError(InputError):
    kind = "input-too-short"


class SelectionError(WavLMSIError, ValueError):
    kind = "selection"


class QuantizationError(WavLMSIError, ValueError):
    kind = "quantization"


class MetricUndefinedError(WavLMSIError, ValueError):
    kind = "metric-undefined"


class TraceError(WavLMSIError, ValueError):
    kind = "trace"


class UndefinedIntervalError(WavLMSIError, ValueError):
    kind = "undefined-interval"


class ModelFileError(WavLMSIError):
    kind = "model-file"


class BadMagicError(ModelFileError):
    kind = "bad-magic"


class VersionMismatchError(ModelFileError):
    kind = "version-mismatch"


class TruncatedFileError(ModelFileError):
    kind = "truncated"


class StructureError(ModelFileError):
    kind = "structure"


class ConsistencyError(ModelFileError):
    kind = "consistency"


class ClipFormatError(InputError):
    kind = "clip-format"


class ChannelCountError(ClipFormatError):
    kind = "channel-count"


class SampleRateError(ClipFormatError):
    kind = "sample-rate"


class CodecError(ClipFormatError):
    kind = "codec"
