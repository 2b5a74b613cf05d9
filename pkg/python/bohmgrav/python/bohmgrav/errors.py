"""
Exceptions raised by bohmgrav.

Every error derives from :py:class:`BohmgravError`. Configuration and domain errors also derive
from :py:class:`ValueError`, and numerical failures from :py:class:`ArithmeticError`, so callers
may catch the builtin types.
"""

from __future__ import annotations

from collections.abc import Sequence


class BohmgravError(Exception):
    """Base class for all bohmgrav errors."""


class ConfigError(BohmgravError, ValueError):
    """
    An invalid parameter or configuration entry.

    :param message: Description of the problem.
    :param line: The 1-based line number in the configuration text, if the error came from one.
    :param suggestion: A likely intended key, for misspelled configuration keys.
    """

    def __init__(
        self,
        message: str,
        *,
        line: int | None = None,
        suggestion: str | None = None,
    ) -> None:
        self.line = line
        self.suggestion = suggestion
        if line is not None:
            message = f"line {line}: {message}"
        if suggestion is not None:
            message = f"{message} (did you mean '{suggestion}'?)"
        super().__init__(message)


class DomainError(BohmgravError, ValueError):
    """An argument lies outside the domain of a formula or functional."""


class NumericalError(BohmgravError, ArithmeticError):
    """
    A numerical failure: non-finite values, degenerate elements, or an inaccurate linear solve.

    :param residual: The final relative residual (or backward error), when the failure is a linear
        solve.
    """

    def __init__(self, message: str, *, residual: float | None = None) -> None:
        self.residual = residual
        super().__init__(message)


class ConvergenceError(BohmgravError):
    """
    An iteration reached its cap without meeting its tolerance.

    :param history: The residual (or relative change) recorded at each iteration.
    """

    def __init__(self, message: str, *, history: Sequence[float] = ()) -> None:
        self.history = list(history)
        super().__init__(message)

    @property
    def iterations(self) -> int:
        return len(self.history)

    @property
    def final_residual(self) -> float:
        return self.history[-1] if self.history else float("nan")
