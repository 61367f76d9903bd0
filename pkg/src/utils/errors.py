#!/usr/bin/env python3
"""
Exception hierarchy shared by every module.

Validation problems (bad input, violated preconditions) map to CLI exit code 1,
numerical breakdown (non-convergence, overflow, instability) to exit code 2.
Every exception names the failing check so the CLI can report it.
"""

from typing import Optional


class FbmError(Exception):
    """Base class for all errors raised by the library"""

    def __init__(self, message: str, check: Optional[str] = None):
        super().__init__(message)
        self.check = check or self.__class__.__name__

    def __str__(self) -> str:
        base = super().__str__()
        return f"[{self.check}] {base}"


class ValidationError(FbmError, ValueError):
    """Input or precondition violated"""


class DomainError(ValidationError):
    """Argument outside the domain of a function"""


class NumericalError(FbmError, ArithmeticError):
    """A correct input could not be evaluated reliably"""


class ConvergenceError(NumericalError):
    """Series or Neumann expansion did not reach its tolerance"""


class InstabilityError(NumericalError):
    """Result changed too much under refinement, or overflowed"""


def exit_code(exc: BaseException) -> int:
    """Map an exception onto the CLI exit status"""
    if isinstance(exc, ValidationError):
        return 1
    if isinstance(exc, NumericalError):
        return 2
    return 3
