"""Exception types shared across the package.

Everything derives from DomainBalanceError so callers can catch the whole
family at once. I/O problems (truncated files, unreadable paths) use the
builtin OSError; structural problems with a file's bytes use FormatError.
"""


class DomainBalanceError(Exception):
    pass


class DimMismatchError(DomainBalanceError):
    pass


class EmptyInputError(DomainBalanceError):
    pass


class ZeroRowError(DomainBalanceError):
    pass


class NotNormalizedError(DomainBalanceError):
    pass


class KTooLargeError(DomainBalanceError):
    pass


class LabelOutOfRangeError(DomainBalanceError):
    pass


class NegativeBetaError(DomainBalanceError):
    pass


class LengthMismatchError(DomainBalanceError):
    pass


class BatchTooSmallError(DomainBalanceError):
    pass


class StaleCacheError(DomainBalanceError):
    pass


class FormatError(DomainBalanceError):
    pass


class VersionMismatchError(DomainBalanceError):
    pass


class SeparationUnsatisfiableError(DomainBalanceError):
    pass


class InsufficientSamplesError(DomainBalanceError):
    pass


class EmptyDatasetError(DomainBalanceError):
    pass


class EmptyGalleryError(DomainBalanceError):
    pass


class ConfigError(DomainBalanceError):
    pass
