"""Exact belief representation and optimal belief-space search.

The agent knows the layout; only the exit is hidden, so a belief collapses to
the agent position plus a uniform set of candidate exit cells (or the known
exit once sighted). Search exploits the layer structure: hypothesis sets only
shrink when a candidate cell comes into sight, so within a fixed hypothesis
set the problem is a shortest-path sweep to "revealing" cells, solved exactly
with Dijkstra; reveal branches recurse into strictly smaller layers, which
guarantees termination without any depth cap.

Two objectives are supported: expected_utility (minimal expected number of
steps to the exit) and discounted_utility (maximal expected discounted
reward, gamma < 1, modeling a limited planning horizon).
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import (
    InconsistentObservationError,
    TerminalStateError,
    UnreachableRegionError,
)
from .grid import ACTIONS, Action, GridMap, Observation, Position, VisibilityParams
from .los import visibility_index

EXPECTED_UTILITY = "expected_utility"
DISCOUNTED_UTILITY = "discounted_utility"

ARGMAX_TOL = 1e-9


@dataclass(frozen=True)
class Belief:
    """Agent position plus uniform exit hypotheses (or the known exit)."""

    agent: Position
    hypotheses: frozenset[Position]
    known_exit: Optional[Position] = None

    def __post_init__(self):
        if self.known_exit is None and not self.hypotheses:
            raise ValueError("belief needs hypotheses or a known exit")


@dataclass(frozen=True)
class PlannerParams:
    mode: str = EXPECTED_UTILITY
    gamma: float = 1.0
    visibility: VisibilityParams = field(default_factory=VisibilityParams)

    def __post_init__(self):
        if self.mode not in (EXPECTED_UTILITY, DISCOUNTED_UTILITY):
            raise ValueError(f"unknown planner mode {self.mode!r}")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if self.mode == DISCOUNTED_UTILITY and self.gamma >= 1.0:
            raise ValueError("discounted_utility requires gamma < 1")


@dataclass(frozen=True)
class ValueResult:
    """Value of a belief, the full optimal-action set, and search effort.

    ``value`` is expected steps in expected_utility mode (lower is better)
    and expected discounted reward in discounted_utility mode (higher is
    better). ``expansions`` counts distinct belief nodes valued by the
    planner instance so far (cumulative across queries sharing the memo).
    """

    value: float
    best_actions: frozenset[Action]
    expansions: int


@dataclass(frozen=True)
class Outcome:
    """One observation class after an action: exit found at ``cell`` or not."""

    kind: str  # "found" | "not_found"
    cell: Optional[Position]
    probability: float
    belief: Belief


def initial_belief(grid: GridMap, params: PlannerParams = PlannerParams(),
                   agent: Optional[Position] = None) -> Belief:
    """Belief after the initial observation from ``agent`` (default: start)."""
    agent = grid.start if agent is None else agent
    vis = visibility_index(grid, params.visibility).visible(agent)
    hyp = frozenset(grid.floor_cells()) - vis
    if not hyp:
        raise ValueError("map fully visible from the start; no hidden exit cells")
    return Belief(agent=agent, hypotheses=hyp)


def transition(grid: GridMap, pos: Position, action: Action) -> Position:
    """Move one cell; bumping a wall or the map edge stays in place."""
    target = action.apply(pos)
    return target if grid.is_floor(target) else pos


def belief_update(grid: GridMap, belief: Belief, action: Action, obs: Observation,
                  params: PlannerParams = PlannerParams()) -> Belief:
    """Advance the agent and condition the hypothesis set on the observation.

    Raises InconsistentObservationError when the observation has zero
    likelihood under the belief; callers treat that as the signal that their
    map model is wrong.
    """
    agent = transition(grid, belief.agent, action)
    if obs.agent != agent:
        raise InconsistentObservationError(
            f"observation taken at {obs.agent}, expected {agent}"
        )
    if obs.exit_seen is not None:
        c = obs.exit_seen
        if belief.known_exit is not None:
            if belief.known_exit != c:
                raise InconsistentObservationError("exit seen at a second location")
        elif c not in belief.hypotheses:
            raise InconsistentObservationError(
                f"exit seen at {c}, excluded by the belief"
            )
        return Belief(agent=agent, hypotheses=frozenset(), known_exit=c)
    if belief.known_exit is not None:
        if belief.known_exit in obs.visible:
            raise InconsistentObservationError("known exit cell visible but empty")
        return Belief(agent=agent, hypotheses=frozenset(),
                      known_exit=belief.known_exit)
    remaining = belief.hypotheses - obs.visible
    if not remaining:
        raise InconsistentObservationError(
            "all hypothesis cells observed without finding the exit"
        )
    return Belief(agent=agent, hypotheses=remaining)


def outcome_distribution(grid: GridMap, belief: Belief, action: Action,
                         params: PlannerParams = PlannerParams()) -> list[Outcome]:
    """All observation classes after ``action`` with their probabilities.

    One branch per hypothesis cell that comes into sight (the exit is found
    there) plus a single not-found branch when hypotheses remain hidden.
    """
    if belief.known_exit is not None:
        raise ValueError("outcome distribution is defined before the exit is known")
    agent = transition(grid, belief.agent, action)
    vis = visibility_index(grid, params.visibility).visible(agent)
    newly = belief.hypotheses & vis
    n = len(belief.hypotheses)
    out = []
    for c in sorted(newly):
        out.append(Outcome("found", c, 1.0 / n,
                           Belief(agent=agent, hypotheses=frozenset(), known_exit=c)))
    remaining = belief.hypotheses - newly
    if remaining:
        out.append(Outcome("not_found", None, len(remaining) / n,
                           Belief(agent=agent, hypotheses=remaining)))
    return out


def value_iteration(grid: GridMap, targets: frozenset[Position] | set[Position]) -> dict[Position, float]:
    """Per-cell minimal steps to the nearest target, by Bellman sweeps.

    Unreachable cells get ``inf``. Targets must be nonempty floor cells.
    """
    if not targets:
        raise ValueError("value_iteration needs at least one target")
    for t in targets:
        if not grid.is_floor(t):
            raise ValueError(f"target {t} is not a floor cell")
    values = {p: math.inf for p in grid.floor_cells()}
    for t in targets:
        values[t] = 0.0
    changed = True
    while changed:
        changed = False
        for p in values:
            if values[p] == 0.0:
                continue
            best = values[p]
            for q in grid.neighbors(p):
                cand = 1.0 + values[q]
                if cand < best:
                    best = cand
            if best < values[p]:
                values[p] = best
                changed = True
    return values


class BeliefPlanner:
    """Memoized exact solver for one map and one objective.

    A planner instance owns the layer memo; concurrent value queries on
    distinct beliefs are safe (results are immutable, the memo only grows).
    """

    def __init__(self, grid: GridMap, params: PlannerParams = PlannerParams(),
                 memoize: bool = True):
        self.grid = grid
        self.params = params
        self.memoize = memoize
        self._vis = visibility_index(grid, params.visibility)
        self._memo: dict = {}
        self._dist: dict[Position, dict[Position, float]] = {}
        self.expansions = 0

    # -- distances to a known cell -------------------------------------
    def _dist_field(self, target: Position) -> dict[Position, float]:
        got = self._dist.get(target)
        if got is None:
            got = value_iteration(self.grid, {target})
            self._dist[target] = got
        return got

    def _known_exit_value(self, agent: Position, exit_cell: Position) -> float:
        d = self._dist_field(exit_cell).get(agent, math.inf)
        if math.isinf(d):
            raise UnreachableRegionError(f"exit {exit_cell} unreachable from {agent}")
        if self.params.mode == EXPECTED_UTILITY:
            return d
        return self.params.gamma ** (d - 1.0) if d >= 1.0 else 1.0

    # -- recursive solver -------------------------------------------------
    #
    # Within a fixed hypothesis set movement is deterministic, so the value
    # of a non-revealing cell is min over "revealing" cells q (whose sight
    # hits a hypothesis) of steps-to-q plus the resolution value at q; the
    # not-found branch of a resolution recurses into a strictly smaller
    # hypothesis set. A forward best-first sweep with branch-and-bound keeps
    # the recursion confined to beliefs near the optimum.

    def _terminal_value(self, pos: Position, hyp: frozenset) -> float:
        """Value on arriving at a revealing cell: the observation resolves."""
        key = (pos, hyp, True)
        got = self._memo_get(key)
        if got is not None:
            return got
        newly = self._vis.visible(pos) & hyp
        n = len(hyp)
        eu = self.params.mode == EXPECTED_UTILITY
        total = 0.0
        for c in newly:
            d = self._dist_field(c).get(pos, math.inf)
            if math.isinf(d):
                raise UnreachableRegionError(
                    f"hypothesis {c} visible from {pos} but unreachable"
                )
            total += (d if eu else self.params.gamma ** (d - 1.0)) / n
        remaining = hyp - newly
        if remaining:
            child = self._value_at(pos, remaining)
            if eu and math.isinf(child):
                total = math.inf
            else:
                total += (len(remaining) / n) * child
        self._memo_put(key, total)
        return total

    def _value_at(self, pos: Position, hyp: frozenset) -> float:
        """Value of belief (pos, hyp) where pos reveals nothing new."""
        key = (pos, hyp, False)
        got = self._memo_get(key)
        if got is not None:
            return got
        eu = self.params.mode == EXPECTED_UTILITY
        gamma = self.params.gamma
        best = math.inf if eu else 0.0
        heap = [(0.0, pos)]
        settled: set[Position] = set()
        seen_revealing: set[Position] = set()
        while heap:
            s, p = heapq.heappop(heap)
            if p in settled:
                continue
            settled.add(p)
            # every unexplored candidate costs at least s+1 more steps
            if eu:
                if s + 1.0 > best + 1e-12:
                    break
            else:
                if gamma ** (s + 1.0) < best * (1.0 - 1e-12):
                    break
            for q in self.grid.neighbors(p):
                if q in settled:
                    continue
                if self._vis.visible(q) & hyp:
                    if q in seen_revealing:
                        continue
                    seen_revealing.add(q)
                    if eu:
                        if s + 1.0 <= best + 1e-12:
                            cand = s + 1.0 + self._terminal_value(q, hyp)
                            best = min(best, cand)
                    else:
                        if gamma ** (s + 1.0) >= best * (1.0 - 1e-12):
                            cand = gamma ** (s + 1.0) * self._terminal_value(q, hyp)
                            best = max(best, cand)
                else:
                    heapq.heappush(heap, (s + 1.0, q))
        self._memo_put(key, best)
        return best

    def _memo_get(self, key) -> Optional[float]:
        return self._memo.get(key) if self.memoize else None

    def _memo_put(self, key, value: float) -> None:
        self.expansions += 1
        if self.memoize:
            self._memo[key] = value

    # -- public queries ---------------------------------------------------
    def value(self, belief: Belief) -> ValueResult:
        """Exact value and the full optimal-action set for a belief."""
        eu = self.params.mode == EXPECTED_UTILITY
        if belief.known_exit is not None:
            if belief.agent == belief.known_exit:
                raise TerminalStateError("belief already at the exit")
            v = self._known_exit_value(belief.agent, belief.known_exit)
            self.expansions += 1
            qs = {a: self._q_known(belief, a) for a in ACTIONS}
        else:
            newly = self._vis.visible(belief.agent) & belief.hypotheses
            if newly:
                # pre-resolution belief: the observation at the current cell
                # resolves before any action is taken
                v, qs = self._resolved_root(belief, newly)
            else:
                v = self._value_at(belief.agent, belief.hypotheses)
                if (eu and math.isinf(v)) or (not eu and v == 0.0):
                    raise UnreachableRegionError(
                        "no exit hypothesis can be reached from the agent"
                    )
                qs = {a: self._q(belief.agent, belief.hypotheses, a) for a in ACTIONS}
        best_q = min(qs.values()) if eu else max(qs.values())
        best = frozenset(
            a for a, q in qs.items() if abs(q - best_q) <= ARGMAX_TOL
        )
        return ValueResult(value=v, best_actions=best, expansions=self.expansions)

    def best_actions(self, belief: Belief) -> frozenset[Action]:
        return self.value(belief).best_actions

    def _q_known(self, belief: Belief, action: Action) -> float:
        pos = transition(self.grid, belief.agent, action)
        d = self._dist_field(belief.known_exit).get(pos, math.inf)
        if self.params.mode == EXPECTED_UTILITY:
            return 1.0 + d
        return self.params.gamma ** d  # == gamma * gamma^(d-1), reward 1 at d=0

    def _q(self, agent: Position, hyp: frozenset, action: Action) -> float:
        pos = transition(self.grid, agent, action)
        if self._vis.visible(pos) & hyp:
            succ = self._terminal_value(pos, hyp)
        else:
            succ = self._value_at(pos, hyp)
        if self.params.mode == EXPECTED_UTILITY:
            return 1.0 + succ
        return self.params.gamma * succ

    def _resolved_root(self, belief: Belief, newly: frozenset) -> tuple[float, dict]:
        n = len(belief.hypotheses)
        eu = self.params.mode == EXPECTED_UTILITY
        total = 0.0
        branch_beliefs = []
        for c in newly:
            d = self._dist_field(c).get(belief.agent, math.inf)
            if math.isinf(d):
                raise UnreachableRegionError(
                    f"hypothesis {c} visible from {belief.agent} but unreachable"
                )
            total += (d if eu else self.params.gamma ** (d - 1.0)) / n
            branch_beliefs.append(
                (1.0 / n, Belief(belief.agent, frozenset(), known_exit=c))
            )
        remaining = belief.hypotheses - newly
        if remaining:
            rest = Belief(belief.agent, remaining)
            total += (len(remaining) / n) * self._value_at(belief.agent, remaining)
            branch_beliefs.append((len(remaining) / n, rest))
        qs = {}
        for a in ACTIONS:
            q = 0.0
            for w, b in branch_beliefs:
                if b.known_exit is not None:
                    q += w * self._q_known(b, a)
                else:
                    q += w * self._q(b.agent, b.hypotheses, a)
            qs[a] = q
        return total, qs


def planner_for(grid: GridMap, params: PlannerParams = PlannerParams()) -> BeliefPlanner:
    """The shared memoized planner for (map, params), cached on the map."""
    key = ("planner", params)
    got = grid._caches.get(key)
    if got is None:
        got = BeliefPlanner(grid, params)
        grid._caches[key] = got
    return got


def expected_value(grid: GridMap, belief: Belief,
                   params: PlannerParams = PlannerParams()) -> ValueResult:
    """Value of ``belief`` under the exact solver (shared memo per map)."""
    return planner_for(grid, params).value(belief)
