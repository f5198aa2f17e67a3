"""Exception hierarchy. The CLI maps ``InputError`` to exit code 2 and
``NumericalError`` to exit code 3."""


class ProplabError(Exception):
    pass


class InputError(ProplabError, ValueError):
    """Bad input data, configuration or arguments."""


class NumericalError(ProplabError, ArithmeticError):
    pass


class UndefinedStatisticError(NumericalError):
    """A statistic is undefined on the given data (e.g. a zero denominator)."""


class SingularSystemError(NumericalError):
    def __init__(self, message: str, condition: float):
        super().__init__(f"{message} (condition estimate {condition:.3g})")
        self.condition = condition
