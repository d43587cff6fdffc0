class InfeasibleSize(ValueError):
    """An exact computation was requested beyond its state-space cap."""


class BracketFailure(RuntimeError):
    """Bisection endpoints do not bracket the requested crossing."""
