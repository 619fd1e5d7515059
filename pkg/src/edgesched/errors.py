"""Exception types raised across the package."""


class EdgeSchedError(Exception):
    pass


class InvalidSpec(EdgeSchedError, ValueError):
    """A scenario/task/server description violates its invariants."""


class InvalidConfig(EdgeSchedError, ValueError):
    pass


class NotFound(EdgeSchedError, KeyError):
    pass


class TooLarge(EdgeSchedError):
    """Exhaustive search would exceed the enumeration guard."""


class Empty(EdgeSchedError, ValueError):
    pass


class ShapeError(EdgeSchedError, ValueError):
    pass


class Unreachable(EdgeSchedError):
    """Two zones are not connected by any wired path."""
