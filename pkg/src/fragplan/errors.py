"""Exception types shared across the engine."""


class FragplanError(Exception):
    """Base class for all engine errors."""


class InvalidPositionError(FragplanError):
    """A position is out of bounds or on a wall where a floor cell is required."""


class TerminalStateError(FragplanError):
    """An action was applied to a world state that already terminated."""


class MapParseError(FragplanError):
    """A maze or program file is malformed.

    Carries 1-based ``line`` and ``col`` of the offending location when known.
    """

    def __init__(self, message, line=None, col=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.col = col


class InconsistentObservationError(FragplanError):
    """An observation has zero likelihood under the current belief.

    This is the trigger for reverting from modular to flat planning.
    """


class UnreachableRegionError(FragplanError):
    """An exit hypothesis can never be reached (or resolved) from the agent."""


class TransformBoundsError(FragplanError):
    """A fragment placement falls outside the target map."""


class ProposerError(FragplanError):
    """A candidate proposer failed for a whole round (e.g. endpoint unreachable)."""
