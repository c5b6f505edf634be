"""Exception types raised across the toolkit."""


class ProsolabelError(Exception):
    """Base class for all toolkit errors."""


class MalformedRecord(ProsolabelError):
    """A manifest record violates the schema. Carries the line number."""

    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


class UnknownSymbol(ProsolabelError):
    """A phoneme or label symbol outside the configured inventory."""

    def __init__(self, symbol: str, context: str = ""):
        self.symbol = symbol
        msg = f"unknown symbol {symbol!r}"
        if context:
            msg += f" ({context})"
        super().__init__(msg)


class AlignmentMismatch(ProsolabelError):
    """Sequences that must be aligned 1:1 have different lengths."""


class UnlabeledUtterance(ProsolabelError):
    """An operation requiring labels was given an unlabeled utterance."""


class EmptyWaveform(ProsolabelError):
    """A signal-processing routine received zero samples."""


class InvalidBand(ProsolabelError):
    """A frequency band violates 0 < low < high <= Nyquist."""


# The pitch tracker reports band problems under this name.
BandError = InvalidBand


class BadMagic(ProsolabelError):
    """A feature file does not start with the expected magic bytes."""


class HeaderShapeMismatch(ProsolabelError):
    """Feature file payload size disagrees with its header dimensions."""


class NonFiniteValue(ProsolabelError):
    """A tensor contains NaN or infinity."""


class LayerCountMismatch(ProsolabelError):
    """Fusion logits length differs from the tensor's layer count."""


class DurationSumMismatch(ProsolabelError):
    """Phoneme durations disagree with the frame count beyond tolerance."""


class MissingStream(ProsolabelError):
    """A configured feature stream is not available for an utterance."""

    def __init__(self, stream: str, utterance_id: str, detail: str = ""):
        self.stream = stream
        self.utterance_id = utterance_id
        msg = f"stream {stream!r} unavailable for utterance {utterance_id!r}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


class PhonemeCountMismatch(ProsolabelError):
    """A phoneme-axis tensor length differs from the utterance's phoneme count."""


class DimMismatch(ProsolabelError):
    """An array dimension disagrees with what the model expects."""


class EmptyMask(ProsolabelError):
    """No mora-core positions available where at least one is required."""


class NonFiniteGradient(ProsolabelError):
    """Training produced a NaN or infinite gradient."""


class InvalidConfig(ProsolabelError):
    """A run configuration is invalid before any computation starts."""
