"""Exception types shared across the package.

The CLI maps these onto distinct exit codes, so keep the hierarchy stable:
parameter/usage problems, numerical failures, fingerprint (contract)
violations, and file-format problems are separate branches.
"""


class GraphSpeechError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(GraphSpeechError, ValueError):
    """An argument violates a documented precondition."""


class DimensionError(ParameterError):
    """Array shapes or lengths do not line up."""


class DecompositionError(GraphSpeechError):
    """A matrix factorization failed or produced non-orthogonal factors."""


class NumericalDivergenceError(GraphSpeechError):
    """A loss or gradient became non-finite during training."""


class FingerprintMismatchError(GraphSpeechError):
    """Content hash disagreement: data is bound to a different basis or
    a file's payload does not match its recorded hash."""


class FileFormatError(GraphSpeechError):
    """Base class for structured-file parsing failures."""


class MalformedHeaderError(FileFormatError):
    """File does not start with the expected magic/field layout."""


class TruncatedPayloadError(FileFormatError):
    """File is shorter (or longer) than its header promises."""


class VersionMismatchError(FileFormatError):
    """File format version is not supported by this reader."""


class MalformedWavError(FileFormatError):
    """Not a parseable RIFF/WAVE file."""


class UnsupportedWavLayoutError(FileFormatError):
    """WAV is parseable but uses channels/encoding we do not accept."""


class SampleRateMismatchError(FileFormatError):
    """WAV sample rate differs from what the caller required."""


class ManifestError(FileFormatError):
    """Dataset manifest CSV is malformed; message carries the line number."""
