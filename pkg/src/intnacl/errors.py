"""Exception types shared across the package."""


class IntNaClError(Exception):
    """Base class for all package errors."""


class ShapeError(IntNaClError, ValueError):
    def __init__(self, op, *shapes, detail=""):
        self.op = op
        self.shapes = shapes
        shape_txt = " vs ".join(str(tuple(s)) for s in shapes)
        msg = f"{op}: incompatible shapes {shape_txt}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class TapeError(IntNaClError, RuntimeError):
    pass


class ZeroNormError(IntNaClError, ValueError):
    pass


class ConfigError(IntNaClError, ValueError):
    """Invalid configuration; ``field`` names the offending entry when known."""

    def __init__(self, message, field=None):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}" if field else message)


class NumericalError(IntNaClError, ArithmeticError):
    pass


class CheckpointError(IntNaClError):
    pass


class CheckpointCorruptError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass
