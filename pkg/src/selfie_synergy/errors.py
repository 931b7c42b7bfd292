"""
Exception hierarchy for Selfie Synergy
"""
from typing import Optional


class SelfieSynergyError(Exception):
    """Base class for every error raised by the package"""


class ArgumentError(SelfieSynergyError, ValueError):
    """A precondition on an argument was violated"""


class ImageDecodeError(SelfieSynergyError):
    """An encoded image could not be decoded"""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class SingularCovarianceError(SelfieSynergyError):
    """CCA hit a singular covariance without regularization"""

    def __init__(self, view: str):
        super().__init__(
            f"covariance of view {view} is singular; use a positive ridge (cca.ridge > 0)"
        )
        self.view = view


class NetSpecError(SelfieSynergyError):
    """A network specification is structurally inconsistent"""


class TrainingDivergedError(SelfieSynergyError):
    """Training produced a non-finite loss"""

    def __init__(self, iteration: int, loss: float):
        super().__init__(f"training diverged at iteration {iteration} (loss={loss})")
        self.iteration = iteration
        self.loss = loss


class ConfigError(SelfieSynergyError):
    """Configuration is invalid or inconsistent"""


class ManifestError(SelfieSynergyError):
    """A dataset manifest could not be parsed"""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class MissingArtifactError(SelfieSynergyError):
    """An upstream stage artifact is not in the store"""

    def __init__(self, stage: str, needed_by: str):
        super().__init__(
            f"stage '{needed_by}' needs the '{stage}' artifact; run '{stage}' first"
        )
        self.stage = stage
        self.needed_by = needed_by


class ArtifactFormatError(SelfieSynergyError):
    """A stored artifact file is malformed"""
