"""Exception hierarchy shared by the library and the command line runner."""


class ConfigError(ValueError):
    """Invalid user input: config files, space files, set definitions."""


class NumericalFailure(RuntimeError):
    """A computation finished but broke one of its numerical contracts."""


class ConvergenceError(NumericalFailure):
    """An iterative solver hit its iteration cap."""


class InvariantViolation(NumericalFailure):
    """A stated invariant (sub-Markov bound, excessivity, ...) does not hold."""
