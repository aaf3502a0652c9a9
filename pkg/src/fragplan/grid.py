"""Maze layouts, world state, deterministic transitions, and the maze file format.

Coordinates are (row, col), 0-based, row 0 at the top. A maze is a static
layout of walls and floor with one start cell; the exit lives in
:class:`WorldState` because the searching agent does not know it.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional

from .errors import InvalidPositionError, MapParseError, TerminalStateError

Position = tuple[int, int]

WALL = "wall"
EMPTY = "empty"
EXIT = "exit"
UNSEEN = "unseen"


class Action(enum.Enum):
    """The four moves, in canonical tie-break order."""

    UP = (-1, 0)
    DOWN = (1, 0)
    LEFT = (0, -1)
    RIGHT = (0, 1)

    @property
    def delta(self) -> Position:
        return self.value

    def apply(self, pos: Position) -> Position:
        return (pos[0] + self.value[0], pos[1] + self.value[1])


ACTIONS = (Action.UP, Action.DOWN, Action.LEFT, Action.RIGHT)

_DELTA_TO_ACTION = {a.value: a for a in ACTIONS}


def action_between(src: Position, dst: Position) -> Action:
    """The action moving src -> dst; the two cells must be adjacent."""
    delta = (dst[0] - src[0], dst[1] - src[1])
    try:
        return _DELTA_TO_ACTION[delta]
    except KeyError:
        raise ValueError(f"cells {src} and {dst} are not adjacent") from None


@dataclass(frozen=True)
class VisibilityParams:
    """Sight parameters: ``range`` bounds center-to-center Euclidean distance.

    ``range=None`` means unbounded (occlusion-only), the default used by the
    experiment screens.
    """

    range: Optional[float] = None

    def __post_init__(self):
        if self.range is not None and self.range <= 0:
            raise ValueError("visibility range must be positive or None")


@dataclass(frozen=True)
class GridMap:
    """Static maze layout: walls, dimensions, the start cell.

    ``exit_cell`` is the optional design-time exit read from a maze file; it
    is carried for ground-truth simulation and never consulted by planners.
    """

    n: int
    m: int
    walls: frozenset[Position]
    start: Position
    map_id: str = "maze"
    exit_cell: Optional[Position] = None
    # per-map caches (visibility, distance fields); not part of value identity
    _caches: dict = field(
        default_factory=dict, compare=False, repr=False, hash=False
    )

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("map dimensions must be at least 1x1")
        for w in self.walls:
            if not self.in_bounds(w):
                raise ValueError(f"wall {w} out of bounds")
        if not self.is_floor(self.start):
            raise ValueError(f"start {self.start} is not a floor cell")
        if self.exit_cell is not None and not self.is_floor(self.exit_cell):
            raise ValueError(f"exit {self.exit_cell} is not a floor cell")

    def in_bounds(self, pos: Position) -> bool:
        return 0 <= pos[0] < self.n and 0 <= pos[1] < self.m

    def is_wall(self, pos: Position) -> bool:
        return pos in self.walls

    def is_floor(self, pos: Position) -> bool:
        return self.in_bounds(pos) and pos not in self.walls

    def floor_cells(self) -> frozenset[Position]:
        cached = self._caches.get("floor")
        if cached is None:
            cached = frozenset(
                (r, c)
                for r in range(self.n)
                for c in range(self.m)
                if (r, c) not in self.walls
            )
            self._caches["floor"] = cached
        return cached

    def neighbors(self, pos: Position) -> list[Position]:
        """Adjacent floor cells."""
        out = []
        for a in ACTIONS:
            q = a.apply(pos)
            if self.is_floor(q):
                out.append(q)
        return out

    def to_array(self):
        """Occupancy as a numpy int8 array: wall=1, floor=0."""
        import numpy as np

        arr = np.zeros((self.n, self.m), dtype=np.int8)
        for (r, c) in self.walls:
            arr[r, c] = 1
        return arr


def grid_from_array(arr, start: Position, map_id: str = "maze",
                    exit_cell: Optional[Position] = None) -> GridMap:
    """Build a GridMap from a 2D occupancy array (wall=1, floor=0)."""
    n = len(arr)
    m = len(arr[0]) if n else 0
    walls = frozenset(
        (r, c) for r in range(n) for c in range(m) if int(arr[r][c]) == 1
    )
    return GridMap(n=n, m=m, walls=walls, start=start, map_id=map_id,
                   exit_cell=exit_cell)


@dataclass(frozen=True)
class WorldState:
    """Ground-truth state: layout plus agent and exit positions."""

    grid: GridMap
    agent: Position
    exit: Position
    terminal: bool = False

    def __post_init__(self):
        if not self.grid.is_floor(self.agent):
            raise InvalidPositionError(f"agent {self.agent} not on floor")
        if not self.grid.is_floor(self.exit):
            raise InvalidPositionError(f"exit {self.exit} not on floor")


def initial_state(grid: GridMap, exit_cell: Optional[Position] = None) -> WorldState:
    """World at the start cell; exit defaults to the map's design-time exit."""
    exit_pos = exit_cell if exit_cell is not None else grid.exit_cell
    if exit_pos is None:
        raise ValueError("no exit given and the map carries none")
    return WorldState(grid=grid, agent=grid.start, exit=exit_pos,
                      terminal=(grid.start == exit_pos))


@dataclass(frozen=True)
class Observation:
    """What the agent sees from one position: the visible cell set.

    Cells outside ``visible`` are unseen. ``exit_seen`` is the exit position
    when its cell is in sight, else None. Wall/floor labels of visible cells
    follow the (known) layout; see :meth:`labels`.
    """

    agent: Position
    visible: frozenset[Position]
    exit_seen: Optional[Position] = None

    def labels(self, grid: GridMap) -> list[list[str]]:
        """Per-cell label grid: wall / empty / exit / unseen."""
        out = [[UNSEEN] * grid.m for _ in range(grid.n)]
        for (r, c) in self.visible:
            out[r][c] = WALL if grid.is_wall((r, c)) else EMPTY
        if self.exit_seen is not None:
            r, c = self.exit_seen
            out[r][c] = EXIT
        return out


def observe(state: WorldState, params: VisibilityParams = VisibilityParams()) -> Observation:
    """Line-of-sight observation of the true state from the agent's cell."""
    from .los import visible_cells

    vis = visible_cells(state.grid, state.agent, params)
    exit_seen = state.exit if state.exit in vis else None
    return Observation(agent=state.agent, visible=vis, exit_seen=exit_seen)


def step(state: WorldState, action: Action) -> WorldState:
    """Deterministic transition: blocked moves (walls, map edge) stay in place.

    Reaching the exit cell terminates the episode.
    """
    if state.terminal:
        raise TerminalStateError("cannot step a terminal state")
    target = action.apply(state.agent)
    if not state.grid.is_floor(target):
        target = state.agent
    return replace(state, agent=target, terminal=(target == state.exit))


# ---------------------------------------------------------------------------
# Maze file format.
#
# Line 1:  maze <id> <N> <M>
# Then N lines of M characters: '#' wall, '.' floor, 'S' start (exactly one),
# 'E' exit (at most one; optional ground truth for simulation).
# ---------------------------------------------------------------------------

_CHARS = {"#", ".", "S", "E"}


def parse_map(text: str) -> GridMap:
    """Parse one maze file into a GridMap.

    Raises MapParseError with the offending line/column on malformed input.
    """
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise MapParseError("empty maze file", line=1)
    header = lines[0].split()
    if len(header) != 4 or header[0] != "maze":
        raise MapParseError("header must be 'maze <id> <N> <M>'", line=1)
    map_id = header[1]
    try:
        n, m = int(header[2]), int(header[3])
    except ValueError:
        raise MapParseError("non-integer dimensions in header", line=1) from None
    if n < 1 or m < 1:
        raise MapParseError("dimensions must be positive", line=1)
    if len(lines) < 1 + n:
        raise MapParseError(f"expected {n} grid rows, found {len(lines) - 1}",
                            line=len(lines))
    walls = set()
    start = None
    exit_cell = None
    for r in range(n):
        row = lines[1 + r]
        if len(row) != m:
            raise MapParseError(f"row has {len(row)} chars, expected {m}",
                                line=2 + r, col=len(row) + 1)
        for c, ch in enumerate(row):
            if ch not in _CHARS:
                raise MapParseError(f"invalid cell char {ch!r}", line=2 + r, col=c + 1)
            if ch == "#":
                walls.add((r, c))
            elif ch == "S":
                if start is not None:
                    raise MapParseError("multiple start cells", line=2 + r, col=c + 1)
                start = (r, c)
            elif ch == "E":
                if exit_cell is not None:
                    raise MapParseError("multiple exit cells", line=2 + r, col=c + 1)
                exit_cell = (r, c)
    if start is None:
        raise MapParseError("no start cell", line=1 + n)
    return GridMap(n=n, m=m, walls=frozenset(walls), start=start,
                   map_id=map_id, exit_cell=exit_cell)


def serialize_map(grid: GridMap) -> str:
    """Inverse of parse_map; parse(serialize(g)) == g."""
    rows = []
    for r in range(grid.n):
        row = []
        for c in range(grid.m):
            if (r, c) == grid.start:
                row.append("S")
            elif grid.exit_cell is not None and (r, c) == grid.exit_cell:
                row.append("E")
            elif (r, c) in grid.walls:
                row.append("#")
            else:
                row.append(".")
        rows.append("".join(row))
    header = f"maze {grid.map_id} {grid.n} {grid.m}"
    return "\n".join([header] + rows) + "\n"


def grid_from_rows(rows: Iterable[str], map_id: str = "maze") -> GridMap:
    """Convenience for tests and fixtures: rows of '#', '.', 'S', 'E'."""
    rows = list(rows)
    text = f"maze {map_id} {len(rows)} {len(rows[0])}\n" + "\n".join(rows) + "\n"
    return parse_map(text)
