"""Line of sight on the grid.

A cell is visible from another iff the straight segment between the two cell
centers does not pass strictly through the interior of any wall cell; a
segment that only grazes a wall corner or slides along a wall edge does not
block. Wall cells themselves are visible when the sightline reaches them:
they block sight beyond, not sight of themselves. The rule is symmetric by
construction, which the UI relies on to reveal identically.

All tests are exact: cell centers sit at odd integers once coordinates are
doubled, cell boundaries at even integers, so a positive-length clipped
segment can never lie on a cell boundary and strict interior penetration
reduces to integer comparisons.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidPositionError
from .grid import GridMap, Position, VisibilityParams

_BIG = 1 << 40  # sentinel for the unconstrained axis of axis-aligned sightlines


def _visible_from(grid: GridMap, origin: Position, max_range: float | None) -> frozenset[Position]:
    r0, c0 = origin
    cells = [(r, c) for r in range(grid.n) for c in range(grid.m)]
    if max_range is not None:
        rr = max_range * max_range
        cells = [p for p in cells if (p[0] - r0) ** 2 + (p[1] - c0) ** 2 <= rr]
    walls = sorted(grid.walls)
    if not walls:
        return frozenset(cells)

    tgt = np.array(cells, dtype=np.int64)            # (T, 2)
    wal = np.array(walls, dtype=np.int64)            # (W, 2)

    ax, ay = 2 * r0 + 1, 2 * c0 + 1                  # scaled origin center
    bx = 2 * tgt[:, 0:1] + 1                         # (T, 1)
    by = 2 * tgt[:, 1:2] + 1
    dx = bx - ax
    dy = by - ay

    x0 = 2 * wal[:, 0][None, :]                      # (1, W) box bounds
    x1 = x0 + 2
    y0 = 2 * wal[:, 1][None, :]
    y1 = y0 + 2

    sx = np.sign(dx)
    sy = np.sign(dy)
    # entering/exiting t-values as fractions a/p with p > 0
    a_x = np.where(sx >= 0, x0 - ax, ax - x1)        # near face, oriented
    b_x = np.where(sx >= 0, x1 - ax, ax - x0)
    p_x = np.abs(dx)
    a_y = np.where(sy >= 0, y0 - ay, ay - y1)
    b_y = np.where(sy >= 0, y1 - ay, ay - y0)
    p_y = np.abs(dy)

    # axis-parallel segments: that axis is unconstrained iff the center
    # coordinate lies strictly inside the slab, else the box is missed
    x_inside = (x0 < ax) & (ax < x1)
    zx = p_x == 0
    a_x = np.where(zx, np.where(x_inside, -_BIG, _BIG), a_x)
    b_x = np.where(zx, np.where(x_inside, _BIG, -_BIG), b_x)
    p_x = np.where(zx, 1, p_x)
    y_inside = (y0 < ay) & (ay < y1)
    zy = p_y == 0
    a_y = np.where(zy, np.where(y_inside, -_BIG, _BIG), a_y)
    b_y = np.where(zy, np.where(y_inside, _BIG, -_BIG), b_y)
    p_y = np.where(zy, 1, p_y)

    # strict overlap of [max(ax/px, ay/py, 0), min(bx/px, by/py, 1)]
    pen = (
        (a_x * p_y < b_y * p_x)
        & (a_y * p_x < b_x * p_y)
        & (a_x < p_x)
        & (a_y < p_y)
        & (b_x > 0)
        & (b_y > 0)
    )

    # a wall never occludes itself
    same = (tgt[:, 0:1] == wal[None, :, 0]) & (tgt[:, 1:2] == wal[None, :, 1])
    pen &= ~same

    blocked = pen.any(axis=1)
    return frozenset(
        (int(t[0]), int(t[1])) for t, b in zip(tgt, blocked) if not b
    )


class VisibilityIndex:
    """Per-map cache of visible-cell sets, one entry per origin."""

    def __init__(self, grid: GridMap, params: VisibilityParams = VisibilityParams()):
        self.grid = grid
        self.params = params
        self._cache: dict[Position, frozenset[Position]] = {}

    def visible(self, origin: Position) -> frozenset[Position]:
        got = self._cache.get(origin)
        if got is None:
            if not self.grid.is_floor(origin):
                raise InvalidPositionError(
                    f"sightline origin {origin} is not a floor cell"
                )
            got = _visible_from(self.grid, origin, self.params.range)
            self._cache[origin] = got
        return got


def visibility_index(grid: GridMap, params: VisibilityParams = VisibilityParams()) -> VisibilityIndex:
    """The shared per-map index (cached on the map object)."""
    key = ("vis", params.range)
    idx = grid._caches.get(key)
    if idx is None:
        idx = VisibilityIndex(grid, params)
        grid._caches[key] = idx
    return idx


def visible_cells(grid: GridMap, origin: Position,
                  params: VisibilityParams = VisibilityParams()) -> frozenset[Position]:
    """Every cell within range whose sightline from ``origin`` is unblocked."""
    return visibility_index(grid, params).visible(origin)
