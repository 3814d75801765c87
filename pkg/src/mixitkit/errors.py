"""Exception types shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 2, DataError -> 3,
everything else -> 1.
"""


class MixitKitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(MixitKitError):
    """Invalid or inconsistent run configuration."""


class DataError(MixitKitError):
    """Problems with input corpora, manifests or validation sets."""


# -- audio / signal errors ------------------------------------------------

class AllZeroSignal(MixitKitError):
    """RMS normalization hit a (near-)silent waveform."""


class ShapeMismatch(MixitKitError):
    """Operands disagree in channel count, length or sample rate."""


class UnsupportedWavFormat(MixitKitError):
    """WAV file uses an encoding outside 16-bit PCM / 32-bit float, 1-2 ch."""


# -- STFT / separator errors ----------------------------------------------

class IncompatibleConfig(MixitKitError):
    """Spectrogram does not match the STFT configuration it is used with."""


class BandMismatch(MixitKitError):
    """Band widths do not partition the frequency axis."""


class StaleCache(MixitKitError):
    """Backward pass invoked with a cache from a different forward call."""


# -- MixIT solver errors ---------------------------------------------------

class ZeroReference(MixitKitError):
    """SNR loss reference has zero energy; use the zero-aware variant."""


class ZeroMixture(MixitKitError):
    """Zero-aware SNR loss needs a mixture with nonzero energy."""


class TooManySources(MixitKitError):
    """Exhaustive assignment search capped at 2**16 candidates."""


class SingularGram(MixitKitError):
    """Gram matrix not positive definite even after ridge regularization."""


# -- data pipeline errors ---------------------------------------------------

class UnreadableFile(DataError):
    """Corpus file could not be parsed; callers usually skip and log."""


class InsufficientData(DataError):
    """Not enough distinct tracks/clips to build the requested batch."""


class DegenerateBatch(DataError):
    """Dynamic mixing kept producing all-silent mixtures."""


class EmptyValidation(DataError):
    """Channel selection got an empty validation set."""


class MissingStem(DataError):
    """Evaluation song lacks a reference/estimate pair for a stem."""


class NoScorableChunks(DataError):
    """Every song had a silent reference for this stem; nothing to score."""


# -- training errors ---------------------------------------------------------

class NonFiniteGradient(MixitKitError):
    """NaN/Inf gradient; the training loop logs and skips the step."""


class InvalidSelection(MixitKitError):
    """Channel selection does not fit the model's output count."""
