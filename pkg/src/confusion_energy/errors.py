"""Exception hierarchy shared by every module."""


class AceError(Exception):
    pass


class ShapeError(AceError, ValueError):
    pass


class ValidationError(AceError, ValueError):
    pass


class ParseError(ValidationError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalError(AceError, ArithmeticError):
    pass


class SvdConvergenceError(NumericalError):
    def __init__(self, sweeps, residual):
        self.sweeps = sweeps
        self.residual = residual
        super().__init__(
            f"Jacobi SVD did not converge after {sweeps} sweeps "
            f"(max relative off-diagonal {residual:.3e})"
        )


class DivergenceError(NumericalError):
    def __init__(self, step, value):
        self.step = step
        self.value = value
        super().__init__(f"non-finite loss {value!r} at step {step}")
