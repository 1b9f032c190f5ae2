"""Exception hierarchy. Every error carries a stable machine-readable code
(the ``code`` attribute) that the CLI emits on stderr."""


class DtofError(Exception):
    code = "Error"


class AxisMismatchError(DtofError):
    code = "AxisMismatch"


class ZeroMassError(DtofError):
    code = "ZeroMass"


class NoSignalError(DtofError):
    code = "NoSignal"


class BadSectionCountError(DtofError):
    code = "BadSectionCount"


class DepthOutOfRangeError(DtofError):
    code = "DepthOutOfRange"


class DimensionNotDivisibleError(DtofError):
    code = "DimensionNotDivisible"


class WrongModeError(DtofError):
    code = "WrongMode"


class NonUnitVectorError(DtofError):
    code = "NonUnitVector"


class NonPositiveDepthError(DtofError):
    code = "NonPositiveDepth"


class EmptyMaskError(DtofError):
    code = "EmptyMask"


class LengthMismatchError(DtofError):
    code = "LengthMismatch"


class EmptyValidRegionError(DtofError):
    code = "EmptyValidRegion"


class FileMissingError(DtofError):
    code = "FileMissing"


class ShapeMismatchError(DtofError):
    code = "ShapeMismatch"


class UnknownDepthUnitError(DtofError):
    code = "UnknownDepthUnit"


class InvalidSpecError(DtofError):
    code = "InvalidSpec"


class MissingLayerError(DtofError):
    code = "MissingLayer"


class MethodUnavailableError(DtofError):
    code = "MethodUnavailable"


class MissingFlowError(DtofError):
    code = "MissingFlow"


class IoFailureError(DtofError):
    code = "IoFailure"


class BadConfigError(DtofError):
    code = "BadConfig"
