"""Exception hierarchy shared by every module of the package."""


class CyclasrError(Exception):
    """Base class for all package errors."""


class ShapeError(CyclasrError, ValueError):
    """Operand shapes do not conform to a primitive or layer signature."""


class ConfigError(CyclasrError, ValueError):
    """Invalid hyperparameter, unknown primitive, or bad configuration key."""


class ContractError(CyclasrError, RuntimeError):
    """A caller-side precondition was violated (e.g. backward on a non-scalar)."""


class StateError(CyclasrError, RuntimeError):
    """An object was used in a state that does not permit the operation."""


class InputError(CyclasrError, ValueError):
    """Data handed to a model or scorer is unusable (empty, too short, unknown token)."""


class FormatError(CyclasrError, ValueError):
    """A file on disk does not follow the expected format."""


class GradientCheckError(CyclasrError, ArithmeticError):
    """Finite-difference or analytic gradient produced non-finite values."""
