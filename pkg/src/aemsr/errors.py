"""Exception hierarchy shared by every subsystem.

The CLI maps ``ConfigurationError`` to exit code 2 and ``DataError`` to exit
code 3; everything else is a programming or contract violation.
"""


class AEMSRError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AEMSRError, ValueError):
    """Invalid hyperparameter, unsupported mode tag or missing prerequisite."""


class DimensionError(AEMSRError, ValueError):
    """Operand shapes are incompatible."""


class ContractError(AEMSRError, ValueError):
    """A precondition on call arguments was violated."""


class DataError(AEMSRError):
    """Input data is malformed or unreadable."""


class FormatError(DataError, ValueError):
    """A file or array does not follow the expected layout."""


class AlignmentError(DataError, ValueError):
    """Audio and video temporal extents do not line up (4T vs T)."""


class DegenerateInputError(AEMSRError, ValueError):
    """Input makes a quantity undefined, e.g. a zero-power reference."""


class TrainingDivergenceError(AEMSRError, RuntimeError):
    """The loss became non-finite during training."""


class SchedulingError(AEMSRError, RuntimeError):
    """The curriculum produced an empty batch."""


class VersionError(DataError):
    """A checkpoint is incompatible with the running code or config."""
