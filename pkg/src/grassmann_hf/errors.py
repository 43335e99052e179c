class GrassmannHFError(Exception):
    pass


class ShapeError(GrassmannHFError, ValueError):
    pass


class DomainError(GrassmannHFError, ValueError):
    pass


class NumericalError(GrassmannHFError, ArithmeticError):
    pass


class UsageError(GrassmannHFError, ValueError):
    pass


class SingularSystemError(NumericalError):
    def __init__(self, msg, cond=float("inf")):
        super().__init__(f"{msg} (condition estimate {cond:.3e})")
        self.cond = cond


class IntegralFileError(GrassmannHFError, ValueError):
    """Problem in a GFI integral file; ``line`` is 1-based when known."""

    def __init__(self, msg, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {msg}" if where else msg)
        self.line = line
        self.path = path
