"""Exception types shared across the toolkit."""


class FormatError(ValueError):
    """Raised when a binary container (image, sinogram, weights) is malformed."""


class UnsupportedScanRange(ValueError):
    """Raised when an algorithm requires a full 360-degree scan and the data has less."""


class DegenerateGeometry(RuntimeError):
    """Raised when the system matrix has no support over the image (all-zero normalizers)."""


class NumericalFailure(RuntimeError):
    """Raised when an iterate turns non-finite mid-run.

    ``timestep`` records the diffusion timestep (or iteration index) at which
    the failure was detected, for the run manifest.
    """

    def __init__(self, message: str, timestep: int | None = None):
        super().__init__(message)
        self.timestep = timestep
