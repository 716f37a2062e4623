"""Exception types shared across the toolkit."""


class SfsError(Exception):
    """Base class for all sfsck errors."""


class OutOfRangeError(SfsError):
    """Block or inode number outside the image's valid range."""


class UnrecognizedImageError(SfsError):
    """Superblock magic or checksum does not verify; the checker refuses to guess."""


class SpecInfeasibleError(SfsError):
    """Requested image population does not fit in the requested geometry."""


class NoEligibleTargetError(SfsError):
    """The image holds no object a requested corruption kind can be applied to."""


class MissingParentRecordError(SfsError):
    """Dot-dot verification invoked before the directory's entries were scanned."""
