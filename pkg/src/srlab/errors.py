"""Exception hierarchy shared by all srlab modules.

Every domain error carries a short ``category`` string; the command line
front end prints it as ``error:<category>:<message>`` and exits with status 1.
"""


class SRError(Exception):
    category = "domain"


class DSLSyntaxError(SRError):
    category = "syntax"

    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)


class StructureError(SRError):
    """Structurally invalid input (dimension mismatch, bad volume density...)."""

    category = "structure"


class EvaluationError(SRError, ArithmeticError):
    """An expression was evaluated at one of its singularities."""

    category = "evaluation"


class HormanderError(SRError):
    category = "hormander"

    def __init__(self, message, point=None):
        self.point = point
        super().__init__(message)


class EquiregularityError(SRError):
    category = "equiregularity"


class PoppError(SRError):
    category = "popp"


class ConvergenceError(SRError):
    category = "convergence"

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class PeriodicityError(SRError):
    category = "periodicity"

    def __init__(self, message, axis=None):
        self.axis = axis
        super().__init__(message)
