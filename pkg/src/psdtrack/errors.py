"""Exception hierarchy shared by the tracker modules."""


class PsdTrackError(Exception):
    """Base class for every error raised by psdtrack."""


class DegenerateInputError(PsdTrackError, ValueError):
    """Input matrix or sample set is rank deficient."""


class NoSignalError(PsdTrackError, ValueError):
    """Total photocurrent is zero, position is undefined."""


class OutOfRangeError(PsdTrackError, ValueError):
    """Point lies outside the active area of the sensor."""


class BehindSensorError(PsdTrackError, ValueError):
    """Point has zero or negative depth in a PSD frame."""


class DegenerateGeometryError(PsdTrackError, ValueError):
    """Back-projected rays are (nearly) parallel."""


class SyncLostError(PsdTrackError):
    """No trigger slot found in the inspected window."""


class StreamFaultError(PsdTrackError):
    """Synchronisation has been lost for too many consecutive frames."""


class DriftError(PsdTrackError):
    """Slot timing deviates from the pattern grid; frame dropped."""


class ConfigurationError(PsdTrackError, ValueError):
    """Invalid or empty configuration."""


class SparseSweepError(ConfigurationError):
    """A power sweep leaves LUT bins without samples."""

    def __init__(self, empty_bins):
        self.empty_bins = list(empty_bins)
        super().__init__(f"sweep leaves {len(self.empty_bins)} empty LUT bins: {self.empty_bins}")


class InsufficientDataError(PsdTrackError, ValueError):
    """Not enough samples to determine the unknowns."""


class ConvergenceError(PsdTrackError):
    """Iterative solver stopped without meeting its tolerance."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class DivergenceError(PsdTrackError):
    """Iterative solver residual kept growing."""

    def __init__(self, message, history=()):
        self.history = list(history)
        super().__init__(message)


class RankDeficiencyError(DegenerateInputError):
    """Stacked linear system lacks full column rank."""

    def __init__(self, message, led=None):
        self.led = led
        super().__init__(message)


class NoFixError(PsdTrackError):
    """Decoded frame carries no usable LED."""


class StaleOrientationError(PsdTrackError):
    """No IMU reading close enough to the frame timestamp."""


class EmptyVisibilityError(PsdTrackError):
    """No LED is visible at any point of a simulated run."""


class NoDataError(PsdTrackError, ValueError):
    """Empty error series."""


class GeometryWarning(UserWarning):
    """More LEDs detected in one frame than the TOU geometry allows."""
