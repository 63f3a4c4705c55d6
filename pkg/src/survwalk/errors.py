"""Exception hierarchy shared by every survwalk module."""


class SurvwalkError(Exception):
    """Base class for all errors raised by survwalk."""


class ShapeError(SurvwalkError, ValueError):
    """Operand shapes do not conform for an op."""

    def __init__(self, op: str, *shapes: tuple):
        self.op = op
        self.shapes = shapes
        joined = " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {joined}")


class DataFormatError(SurvwalkError):
    """Malformed or semantically invalid input data (IDX files, datasets)."""


class CheckpointError(DataFormatError):
    """A checkpoint container could not be read."""


class ConfigError(SurvwalkError, ValueError):
    """Configuration values violate their constraints."""
