"""Exception types shared across the library.

ValueError is raised for precondition violations (bad shapes, bad
arguments); the classes below signal numerical failures that a caller
may want to handle separately (the CLI maps them to exit code 2).
"""


class NumericalError(RuntimeError):
    """A numerical procedure failed (divergence, NaN, degenerate input)."""


class ConvergenceError(NumericalError):
    """An iterative procedure diverged or exceeded its iteration cap."""


class DegenerateSpectrumError(NumericalError):
    """Spectrum processing removed every eigenvalue."""
