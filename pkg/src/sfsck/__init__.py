"""sfsck: a parallel check-and-repair toolkit for SFS disk images."""

from .errors import (
    MissingParentRecordError, NoEligibleTargetError, OutOfRangeError,
    SfsError, SpecInfeasibleError, UnrecognizedImageError,
)
from .image import Image
from .mkfs import ImageSpec, Manifest, build_image
from .passes import run_serial

__version__ = "0.1.0"

__all__ = [
    "Image", "ImageSpec", "Manifest", "build_image", "run_serial",
    "SfsError", "OutOfRangeError", "UnrecognizedImageError",
    "SpecInfeasibleError", "NoEligibleTargetError", "MissingParentRecordError",
]
