"""Exception hierarchy shared across the compiler.

Each error class carries the process exit code the CLI maps it to:
1 = compilation infeasibility, 2 = invalid input, 3 = numerical failure.
"""


class CompilerError(Exception):
    exit_code = 3


class InvalidInputError(CompilerError):
    """Malformed or out-of-contract user input (files, parameters)."""

    exit_code = 2


class SizeLimitError(InvalidInputError):
    """Dense verification requested beyond the supported qubit count."""


class InfeasibleError(CompilerError):
    """A component's targets are unreachable within variable bounds."""

    exit_code = 1


class SchedulingInfeasibleError(InfeasibleError):
    """No admissible evolution time below the machine cap."""


class NumericalFailureError(CompilerError):
    """An internal solver failed to converge or hit a singular point."""

    exit_code = 3


class SingularityError(NumericalFailureError):
    """Negative-exponent power evaluated at a zero base."""


class MissingBindingError(NumericalFailureError):
    """Expression evaluation hit a variable with no assigned value."""
