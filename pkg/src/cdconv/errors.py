class InputError(ValueError):
    """Invalid argument: wrong shape, out-of-range value, bad configuration."""


class UnsupportedFamilyError(InputError):
    """Operation only defined for the other family kind."""


class NoInteriorMLEError(ValueError):
    """Sample mean of the sufficient statistic sits on the boundary."""


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (final residual {residual:.3e})")
        self.residual = residual
