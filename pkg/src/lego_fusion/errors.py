"""Exception hierarchy.

Every error raised by the library derives from :class:`LegoError`. The CLI maps
:class:`DataError` to exit code 2 and :class:`NumericError` to exit code 3.
"""


class LegoError(Exception):
    pass


class DataError(LegoError, ValueError):
    """Invalid input data, shapes, files or configuration."""


class NumericError(LegoError, ArithmeticError):
    """A computation produced a non-finite value or failed a numeric check."""


class ZeroRow(DataError):
    def __init__(self, index):
        super().__init__(f"row {index} has (near-)zero norm")
        self.index = index


class ZeroVector(DataError):
    pass


class DimensionMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    def __init__(self, op, shapes):
        super().__init__(f"shape mismatch in {op}: {shapes}")
        self.op = op
        self.shapes = shapes


class NotNormalized(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class KTooLarge(DataError):
    pass


class MissingPolarity(DataError):
    pass


class TooFewModalities(DataError):
    pass


class UnknownPreset(DataError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown preset"


class DegenerateLabels(DataError):
    pass


class ParseError(DataError):
    def __init__(self, line, reason, path=None):
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{line}: {reason}")
        self.line = line
        self.reason = reason


class Inconsistent(DataError):
    def __init__(self, expected, found, what="rows", line=None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}header declares {expected} {what}, found {found}")
        self.expected = expected
        self.found = found
        self.line = line


class NonFinite(NumericError):
    def __init__(self, op):
        super().__init__(f"non-finite value produced by {op}")
        self.op = op


class NonFiniteLoss(NumericError):
    def __init__(self, step, detail=""):
        msg = f"non-finite loss at step {step}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.step = step
