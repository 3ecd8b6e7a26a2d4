"""Exception types shared across the package."""


class ScaledSGDError(Exception):
    pass


class NotPositiveDefinite(ScaledSGDError, ArithmeticError):
    pass


class SingularUpdate(ScaledSGDError, ArithmeticError):
    pass


class SingularGauge(ScaledSGDError, ArithmeticError):
    pass


class DegenerateDirection(ScaledSGDError, ArithmeticError):
    pass


class TooManySamples(ScaledSGDError, ValueError):
    pass


class ParseError(ScaledSGDError, ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DuplicateEntry(ScaledSGDError, ValueError):
    def __init__(self, i, j, line=None):
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"duplicate entry ({i}, {j}){where}")
        self.i = i
        self.j = j
        self.line = line


class ZeroData(ScaledSGDError, ValueError):
    pass


class EmptyTestSet(ScaledSGDError, ValueError):
    pass


class ConfigError(ScaledSGDError, ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
        self.message = message


class SolverError(ScaledSGDError, RuntimeError):
    pass
