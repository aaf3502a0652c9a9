"""Independent reference implementations used only to check the engine.

Everything here is deliberately written with different algorithms than the
production code: exact-rational sightline walking, breadth-first search,
policy execution over enumerated exit placements, and exhaustive simple-path
search for tiny optimality certificates.
"""

from __future__ import annotations

import itertools
import random
from collections import deque
from fractions import Fraction

from fragplan.grid import ACTIONS, GridMap, Position, WorldState, grid_from_rows
from fragplan.grid import step as world_step


# -- exact sightline oracle ----------------------------------------------------

def sightline_clear(grid: GridMap, a: Position, b: Position) -> bool:
    """Exact-rational supercover walk: collect the cells whose open interior
    the center-to-center segment crosses, and require none of the strictly
    intermediate ones to be a wall."""
    ax, ay = Fraction(2 * a[0] + 1), Fraction(2 * a[1] + 1)
    bx, by = Fraction(2 * b[0] + 1), Fraction(2 * b[1] + 1)
    dx, dy = bx - ax, by - ay
    ts = {Fraction(0), Fraction(1)}
    if dx != 0:
        lo, hi = sorted((ax, bx))
        k = int(lo) + (1 if int(lo) % 2 else 0)
        for x in range(k, int(hi) + 1, 2):
            if lo < x < hi:
                ts.add((Fraction(x) - ax) / dx)
    if dy != 0:
        lo, hi = sorted((ay, by))
        k = int(lo) + (1 if int(lo) % 2 else 0)
        for y in range(k, int(hi) + 1, 2):
            if lo < y < hi:
                ts.add((Fraction(y) - ay) / dy)
    cut = sorted(t for t in ts if 0 <= t <= 1)
    for t0, t1 in zip(cut, cut[1:]):
        mid = (t0 + t1) / 2
        px = ax + mid * dx
        py = ay + mid * dy
        cell = (int(px // 2), int(py // 2))
        if cell in (a, b):
            continue
        if grid.is_wall(cell):
            return False
    return True


def visible_oracle(grid: GridMap, origin: Position,
                   max_range: float | None = None) -> frozenset[Position]:
    out = set()
    for r in range(grid.n):
        for c in range(grid.m):
            if max_range is not None:
                if (r - origin[0]) ** 2 + (c - origin[1]) ** 2 > max_range ** 2:
                    continue
            if sightline_clear(grid, origin, (r, c)):
                out.add((r, c))
    return frozenset(out)


# -- distances -----------------------------------------------------------------

def bfs_distances(grid: GridMap, targets) -> dict[Position, float]:
    dist = {t: 0 for t in targets}
    queue = deque(targets)
    while queue:
        p = queue.popleft()
        for q in grid.neighbors(p):
            if q not in dist:
                dist[q] = dist[p] + 1
                queue.append(q)
    return {p: dist.get(p, float("inf")) for p in grid.floor_cells()}


# -- policy execution over enumerated exit placements ---------------------------

def run_policy(grid: GridMap, exit_cell: Position, choose, vis_fn,
               max_steps: int = 10_000) -> list[Position]:
    """Execute a policy on the true world; ``choose`` maps the information
    state (agent, revealed cells, visible exit or None) to one action."""
    state = WorldState(grid=grid, agent=grid.start, exit=exit_cell,
                       terminal=(grid.start == exit_cell))
    revealed = frozenset(vis_fn(state.agent))
    positions = [state.agent]
    while not state.terminal:
        if len(positions) > max_steps:
            raise RuntimeError("policy did not terminate")
        exit_seen = exit_cell if exit_cell in revealed else None
        action = choose(state.agent, revealed, exit_seen)
        state = world_step(state, action)
        revealed = revealed | vis_fn(state.agent)
        positions.append(state.agent)
    return positions


def mean_realized_steps(grid: GridMap, hypotheses, choose_factory, vis_fn) -> Fraction:
    """Mean realized path length over every exit placement.

    ``choose_factory`` builds a fresh (identically seeded) policy per
    placement so tie-breaking cannot leak placement information.
    """
    total = Fraction(0)
    for exit_cell in sorted(hypotheses):
        path = run_policy(grid, exit_cell, choose_factory(), vis_fn)
        total += len(path) - 1
    return total / len(hypotheses)


# -- exhaustive optimal value for tiny instances --------------------------------

class ExhaustiveSearcher:
    """Minimal expected steps over every deterministic memoryless policy.

    A finite-valued deterministic memoryless policy never revisits a cell
    while its hypothesis set is unchanged (it would loop forever), so within
    a hypothesis layer it traces a simple path; those are enumerated
    exhaustively by depth-first search with exact rationals. Reveal branches
    recurse into strictly smaller hypothesis sets.
    """

    def __init__(self, grid: GridMap, vis_fn):
        self.grid = grid
        self.vis = vis_fn
        self.dist_cache: dict[Position, dict] = {}
        self.entry_memo: dict = {}

    def _dist(self, target: Position) -> dict:
        if target not in self.dist_cache:
            self.dist_cache[target] = bfs_distances(self.grid, [target])
        return self.dist_cache[target]

    def resolve(self, pos: Position, hyp: frozenset):
        """Value right after arriving at ``pos`` (observation applies)."""
        newly = self.vis(pos) & hyp
        if not newly:
            return self.layer_value(pos, hyp)
        n = len(hyp)
        total = Fraction(0)
        for c in newly:
            d = self._dist(c)[pos]
            if d == float("inf"):
                return None
            total += Fraction(int(d), n)
        remaining = hyp - newly
        if remaining:
            sub = self.layer_value(pos, remaining)
            if sub is None:
                return None
            total += Fraction(n - len(newly), n) * sub
        return total

    def layer_value(self, pos: Position, hyp: frozenset):
        """Best value from ``pos`` when ``pos`` reveals nothing new."""
        key = (pos, hyp)
        if key in self.entry_memo:
            return self.entry_memo[key]
        best = self._dfs(pos, hyp, {pos})
        self.entry_memo[key] = best
        return best

    def _dfs(self, pos: Position, hyp: frozenset, visited: set):
        best = None
        for q in self.grid.neighbors(pos):
            if q in visited:
                continue
            if self.vis(q) & hyp:
                sub = self.resolve(q, hyp)
            else:
                visited.add(q)
                sub = self._dfs(q, hyp, visited)
                visited.remove(q)
            if sub is not None:
                cand = 1 + sub
                if best is None or cand < best:
                    best = cand
        return best


# -- random maze generation for property tests ---------------------------------

def random_maze(rng: random.Random, n: int, m: int, wall_p: float = 0.3) -> GridMap:
    """A connected random maze whose start is the first floor cell."""
    while True:
        cells = [["#" if rng.random() < wall_p else "." for _ in range(m)]
                 for _ in range(n)]
        floors = [(r, c) for r in range(n) for c in range(m)
                  if cells[r][c] == "."]
        if len(floors) < 2:
            continue
        # keep only the largest connected component as floor
        best_comp: set = set()
        seen: set = set()
        floor_set = set(floors)
        for f in floors:
            if f in seen:
                continue
            comp = {f}
            queue = [f]
            seen.add(f)
            while queue:
                p = queue.pop()
                for a in ACTIONS:
                    q = a.apply(p)
                    if q in floor_set and q not in comp:
                        comp.add(q)
                        seen.add(q)
                        queue.append(q)
            if len(comp) > len(best_comp):
                best_comp = comp
        if len(best_comp) < 2:
            continue
        for r in range(n):
            for c in range(m):
                if cells[r][c] == "." and (r, c) not in best_comp:
                    cells[r][c] = "#"
        start = sorted(best_comp)[rng.randrange(len(best_comp))]
        cells[start[0]][start[1]] = "S"
        return grid_from_rows("".join(row) for row in cells)
