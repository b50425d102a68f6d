"""Exception types shared across the package."""


class MuseegError(Exception):
    """Base class for all package errors."""


class InvalidFilterSpecError(MuseegError):
    """Filter cutoff ordering or Nyquist constraint violated."""


class TooShortInputError(MuseegError):
    """Input shorter than the minimum the operation can handle."""


class NonFiniteInputError(MuseegError):
    """Input contains NaN or infinity."""


class MissingAccelStreamError(MuseegError):
    """Accelerometer data absent or too sparse for movement flagging."""


class ShapeMismatchError(MuseegError):
    """Masks or arrays that must share a shape do not."""


class IcaConvergenceError(MuseegError):
    """Fixed-point ICA failed to converge within the iteration bound."""


class TooFewValidSamplesError(MuseegError):
    """Not enough valid samples for a power estimate."""


class ZeroTotalPowerError(MuseegError):
    """All band powers are zero; relative fractions undefined."""


class NonPositivePowerError(MuseegError):
    """A power that must be strictly positive is zero or negative."""


class ZeroAlphaError(MuseegError):
    """Alpha power is zero; the beta/alpha ratio is undefined."""


class SubjectMismatchError(MuseegError):
    """Values from different subjects combined where one subject is required."""


class DegenerateSpreadError(MuseegError):
    """Zero spread or fewer than two values; Z-scores undefined."""


class DegenerateInputError(MuseegError):
    """Both groups have zero variance; the test statistic is undefined."""


class LengthMismatchError(MuseegError):
    """Paired samples differ in length."""


class DegenerateDifferencesError(MuseegError):
    """Paired differences have zero spread."""


class MalformedPacketError(MuseegError):
    """OSC datagram could not be decoded.

    Carries the byte offset at which decoding failed.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class ArityMismatchError(MuseegError):
    """A mapped OSC address arrived with the wrong argument count."""


class ConnectionRefusedByBrokerError(MuseegError):
    """MQTT broker rejected the connection."""


class SubscriptionDeniedError(MuseegError):
    """MQTT broker refused the subscription."""


class NetworkUnreachableError(MuseegError):
    """Replay or intake target cannot be reached."""


class RecordingError(MuseegError):
    """Stream recording failed (unwritable directory, disk full, ...)."""


class MissingBaselineError(MuseegError):
    """No accepted eyes-open baseline for a participant."""


class EmptySessionError(MuseegError):
    """Session contains no analyzable segments."""


class InsufficientCellError(MuseegError):
    """A contrast cell has too few subjects."""


class InvalidGeneratorSpecError(MuseegError):
    """Synthetic generator specification is invalid."""
