"""Exception hierarchy shared by every lipshare module."""


class LipshareError(Exception):
    """Base class; ``code`` is the machine-readable name used by the CLI."""

    code = "LipshareError"

    def to_dict(self):
        return {"error": self.code, "message": str(self)}


class InvalidValue(LipshareError, ValueError):
    code = "InvalidValue"


class ShapeMismatch(LipshareError, ValueError):
    code = "ShapeMismatch"


class IncompatiblePeriod(LipshareError, ValueError):
    code = "IncompatiblePeriod"


class StreamTooShort(LipshareError, ValueError):
    code = "StreamTooShort"


class InsufficientData(LipshareError, ValueError):
    code = "InsufficientData"


class ZeroVariance(LipshareError, ValueError):
    code = "ZeroVariance"


class Underflow(LipshareError, FloatingPointError):
    code = "Underflow"


class UnknownMode(LipshareError, KeyError):
    code = "UnknownMode"

    def __str__(self):
        return Exception.__str__(self)
