"""Exception hierarchy.

Every error raised by the package derives from :class:`PastAccError`; the
intermediate classes group errors into the families the CLI maps to exit codes.
"""


class PastAccError(Exception):
    exit_code = 1


# -- input / numeric ---------------------------------------------------------

class InputError(PastAccError, ValueError):
    exit_code = 3


class InputShapeError(InputError):
    pass


class DomainError(InputError):
    pass


class EmptyInputError(InputError):
    pass


class EmptyClassError(EmptyInputError):
    pass


class LayoutError(InputError):
    pass


class NumericError(PastAccError, ArithmeticError):
    exit_code = 4


class NumericOverflowError(NumericError):
    pass


class DivergenceError(NumericError):
    pass


# -- configuration -----------------------------------------------------------

class ConfigurationError(PastAccError):
    exit_code = 2


class SplitIntegrityError(ConfigurationError):
    pass


# -- regression ----------------------------------------------------------------

class NoEstimateError(PastAccError):
    exit_code = 5


class InsufficientDataError(NoEstimateError):
    pass


class DegenerateRegressorError(NoEstimateError):
    pass


# -- files / caches ----------------------------------------------------------

class StorageError(PastAccError):
    exit_code = 6


class FormatError(StorageError):
    pass


class ConsistencyError(StorageError):
    pass


class LengthError(StorageError):
    pass


class CacheConsistencyError(StorageError):
    pass


class ManifestIntegrityError(StorageError):
    pass
