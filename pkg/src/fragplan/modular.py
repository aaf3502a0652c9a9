"""Modular planning: per-fragment policies reused across occurrences.

The planner treats the map through a generative program: each placed
fragment occurrence is searched with an exact within-fragment policy (solved
once per canonical fragment and entry cell, then reused under the occurrence
transform), navigation between occurrences follows shortest paths over
currently known cells toward the nearest unexplored occurrence, and a sighted
exit is always pursued directly. Observing a cell that contradicts the
program's reconstruction permanently reverts the episode to flat
belief-space planning.
"""

from __future__ import annotations

import math
import random
import threading
from dataclasses import dataclass, field
from typing import Optional

from .belief import (
    Belief,
    BeliefPlanner,
    PlannerParams,
    planner_for,
    value_iteration,
)
from .errors import UnreachableRegionError
from .grid import (
    ACTIONS,
    Action,
    GridMap,
    Observation,
    Position,
    WorldState,
    action_between,
    grid_from_array,
    step as world_step,
)
from .los import visibility_index
from .programs import (
    Cells,
    Fragment,
    MapProgram,
    ReconstructedMap,
    Transform,
    UNDEFINED,
    canonical_fragment,
    placement_cells,
    reconstruct,
    transform_delta,
    transform_point,
    transformed_dims,
)


@dataclass(frozen=True)
class FragmentPolicy:
    """Exact search policy inside one canonical fragment from one entry cell.

    The underlying planner's memo is the policy table: querying an
    (agent cell, hypothesis subset) pair returns the optimal action set of
    the fragment-restricted search problem.
    """

    cells: Cells
    entry: Position
    value: float
    planner: BeliefPlanner = field(compare=False, repr=False)

    def actions(self, cell: Position, hypotheses: frozenset[Position]) -> frozenset[Action]:
        if not hypotheses:
            return frozenset()
        return self.planner.value(Belief(agent=cell, hypotheses=hypotheses)).best_actions

    @property
    def expansions(self) -> int:
        return self.planner.expansions


def fragment_policy(cells: Cells, entry: Position,
                    params: PlannerParams = PlannerParams()) -> FragmentPolicy:
    """Solve the fragment-local search problem from ``entry``.

    Hypotheses are every fragment floor cell not visible from the entry; a
    fragment fully visible from its entry yields an empty policy of value 0.
    """
    frag_grid = grid_from_array(cells, start=entry, map_id="fragment")
    planner = BeliefPlanner(frag_grid, params)
    vis = visibility_index(frag_grid, params.visibility).visible(entry)
    hypotheses = frozenset(frag_grid.floor_cells()) - vis
    if not hypotheses:
        return FragmentPolicy(cells=cells, entry=entry, value=0.0, planner=planner)
    value = planner.value(Belief(agent=entry, hypotheses=hypotheses)).value
    return FragmentPolicy(cells=cells, entry=entry, value=value, planner=planner)


def _inverse_element(rotation: int, reflect: bool) -> tuple[int, bool]:
    if not reflect:
        return ((360 - rotation) % 360, False)
    return (rotation, True)


def to_canonical_cell(canon: Cells, t: Transform, map_cell: Position) -> Position:
    """Map coordinates -> canonical fragment coordinates under transform t."""
    h, w = len(canon), len(canon[0])
    th, tw = transformed_dims(h, w, t.rotation)
    local = (map_cell[0] - t.translation[0], map_cell[1] - t.translation[1])
    inv_rot, inv_refl = _inverse_element(t.rotation, t.reflect)
    return transform_point(local, th, tw, inv_rot, inv_refl)


@dataclass(frozen=True)
class TransformedPolicy:
    """A canonical fragment policy conjugated into map coordinates."""

    base: FragmentPolicy
    transform: Transform  # canonical frame -> map frame (with translation)

    def _to_canonical(self, map_cell: Position) -> Position:
        return to_canonical_cell(self.base.cells, self.transform, map_cell)

    def _to_map_action(self, action: Action) -> Action:
        d = transform_delta(action.delta, self.transform.rotation,
                            self.transform.reflect)
        for a in ACTIONS:
            if a.delta == d:
                return a
        raise AssertionError("delta conjugation must stay a unit step")

    def actions(self, map_cell: Position,
                map_hypotheses: frozenset[Position]) -> frozenset[Action]:
        cell = self._to_canonical(map_cell)
        hyp = frozenset(self._to_canonical(p) for p in map_hypotheses)
        return frozenset(self._to_map_action(a) for a in self.base.actions(cell, hyp))


def transform_policy(policy: FragmentPolicy, t: Transform) -> TransformedPolicy:
    """Reuse a canonical policy on a transformed occurrence: positions map
    through the transform and actions conjugate by its linear part."""
    return TransformedPolicy(base=policy, transform=t)


class PolicyCache:
    """Concurrent-safe cache keyed by (canonical fragment, canonical entry)."""

    def __init__(self, params: PlannerParams = PlannerParams()):
        self.params = params
        self._entries: dict[tuple[Cells, Position], FragmentPolicy] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get(self, cells: Cells, entry: Position) -> FragmentPolicy:
        key = (cells, entry)
        with self._lock:
            got = self._entries.get(key)
            if got is not None:
                self.hits += 1
                return got
        policy = fragment_policy(cells, entry, self.params)
        with self._lock:
            existing = self._entries.get(key)
            if existing is not None:
                self.hits += 1
                return existing
            self._entries[key] = policy
            self.misses += 1
        return policy

    @property
    def solve_expansions(self) -> int:
        return sum(p.expansions for p in self._entries.values())


@dataclass(frozen=True)
class Occurrence:
    """One placement grounded on the map."""

    index: int
    canonical: Cells
    transform: Transform  # canonical -> map, includes translation
    floor: frozenset[Position]


def occurrences_of(program: MapProgram) -> list[Occurrence]:
    """Ground every placement: canonical form, full transform, floor cells."""
    out = []
    for i, placement in enumerate(program.placements):
        fragment = program.fragment_by_id(placement.fragment_id)
        canon, to_frag = canonical_fragment(fragment)
        # canonical -> fragment orientation -> placement orientation
        combined = _compose(to_frag, placement.transform)
        painted = placement_cells(program, placement)
        floor = frozenset(p for p, v in painted.items() if v == 0)
        out.append(Occurrence(index=i, canonical=canon, transform=combined,
                              floor=floor))
    return out


def _compose(inner: Transform, outer: Transform) -> Transform:
    """Dihedral composition: apply ``inner`` (no translation), then ``outer``."""
    for rotation in (0, 90, 180, 270):
        for reflect in (False, True):
            if _same_element(rotation, reflect, inner, outer):
                return Transform(rotation=rotation, reflect=reflect,
                                 translation=outer.translation)
    raise AssertionError("dihedral composition must stay in the group")


def _same_element(rotation: int, reflect: bool, inner: Transform,
                  outer: Transform) -> bool:
    probe = ((0, 0, 1), (1, 0, 0), (0, 0, 0))  # asymmetric 3x3 probe
    from .programs import transform_cells

    via = transform_cells(
        transform_cells(probe, inner.rotation, inner.reflect),
        outer.rotation, outer.reflect,
    )
    return transform_cells(probe, rotation, reflect) == via


def consistency_check(obs: Observation, recon: ReconstructedMap,
                      grid: GridMap) -> tuple[bool, list[Position]]:
    """Do the observation's visible cells agree with the reconstruction?

    Only wall/floor level matters (the exit overlays a floor cell); undefined
    reconstruction cells never conflict.
    """
    n, m = recon.dims
    if (grid.n, grid.m) != (n, m):
        raise ValueError("observation and reconstruction dims differ")
    mismatched = []
    for (r, c) in obs.visible:
        expected = recon.cells[r][c]
        if expected == UNDEFINED:
            continue
        actual = 1 if grid.is_wall((r, c)) else 0
        if actual != expected:
            mismatched.append((r, c))
    return (not mismatched), sorted(mismatched)


@dataclass(frozen=True)
class GMPConfig:
    program: MapProgram
    params: PlannerParams = field(default_factory=PlannerParams)
    fallback_params: Optional[PlannerParams] = None  # defaults to params

    def resolved_fallback(self) -> PlannerParams:
        return self.fallback_params if self.fallback_params is not None else self.params


@dataclass(frozen=True)
class StepRecord:
    action: Action
    position: Position
    revealed: frozenset[Position]


@dataclass(frozen=True)
class EpisodeStats:
    expansions: int
    cache_hits: int
    cache_misses: int
    fallback_step: Optional[int]
    mode_labels: tuple[str, ...]


@dataclass(frozen=True)
class EpisodeTrace:
    map_id: str
    start: Position
    initial_reveal: frozenset[Position]
    steps: tuple[StepRecord, ...]
    stats: EpisodeStats
    outcome_steps: int

    @property
    def positions(self) -> tuple[Position, ...]:
        return (self.start,) + tuple(s.position for s in self.steps)

    @property
    def fallback(self) -> bool:
        return self.stats.fallback_step is not None


def known_floor(grid: GridMap, revealed: frozenset[Position],
                recon: Optional[ReconstructedMap]) -> set[Position]:
    """Cells the agent can treat as traversable: revealed floor plus floor
    cells the program's reconstruction defines."""
    known = {p for p in revealed if grid.is_floor(p)}
    if recon is not None:
        for r in range(len(recon.cells)):
            for c in range(len(recon.cells[r])):
                if recon.cells[r][c] == 0:
                    known.add((r, c))
    return known


def _bfs_over(cells: set[Position], sources: set[Position]) -> dict[Position, int]:
    dist = {p: 0 for p in sources if p in cells}
    frontier = list(dist)
    while frontier:
        nxt = []
        for p in frontier:
            for a in ACTIONS:
                q = a.apply(p)
                if q in cells and q not in dist:
                    dist[q] = dist[p] + 1
                    nxt.append(q)
        frontier = nxt
    return dist


def occurrence_distances(grid: GridMap, recon: ReconstructedMap, agent: Position,
                         candidates: list[Occurrence],
                         revealed: frozenset[Position]) -> dict[int, float]:
    """Shortest-path distance from the agent to each candidate occurrence.

    Distances run over currently known traversable cells (revealed floor plus
    program-defined floor). When no candidate is reachable that way (early in
    an episode the connecting corridors may still be hidden), unknown cells
    are optimistically treated as traversable so the metric stays total.
    """
    field_cells = known_floor(grid, revealed, recon)
    for occ in candidates:
        field_cells |= occ.floor
    for attempt in (0, 1):
        dist = _bfs_over(field_cells | {agent}, {agent})
        dists = {}
        reachable = False
        for occ in candidates:
            d = min((dist.get(p, math.inf) for p in occ.floor), default=math.inf)
            dists[occ.index] = d
            if not math.isinf(d):
                reachable = True
        if reachable or attempt == 1:
            return dists
        blocked = {p for p in revealed if grid.is_wall(p)}
        blocked |= {
            (r, c)
            for r in range(grid.n) for c in range(grid.m)
            if recon.cells[r][c] == 1
        }
        field_cells = {
            (r, c)
            for r in range(grid.n) for c in range(grid.m)
            if (r, c) not in blocked
        }
    return dists  # pragma: no cover


def nearest_occurrence(grid: GridMap, recon: ReconstructedMap, agent: Position,
                       candidates: list[Occurrence],
                       revealed: frozenset[Position]) -> Optional[Occurrence]:
    """Closest unexplored occurrence; ties break by placement order."""
    dists = occurrence_distances(grid, recon, agent, candidates, revealed)
    best = None
    best_d = math.inf
    for occ in candidates:
        if dists[occ.index] < best_d:
            best, best_d = occ, dists[occ.index]
    return best


class ModularController:
    """Per-step decision logic shared by episode simulation and analysis.

    The controller is memoryless apart from an optional committed navigation
    target: given the agent position and the revealed cell set it chooses the
    action set of the current mode (pursue visible exit / explore current
    occurrence via its cached policy / walk to the nearest unexplored
    occurrence / sweep leftover hypotheses with the flat planner).
    """

    def __init__(self, grid: GridMap, config: GMPConfig,
                 cache: Optional[PolicyCache] = None):
        self.grid = grid
        self.config = config
        self.params = config.params
        self.cache = cache if cache is not None else PolicyCache(config.params)
        self.recon = reconstruct(config.program)
        self.occurrences = occurrences_of(config.program)
        self._vis = visibility_index(grid, self.params.visibility)
        self._fallback_planner: Optional[BeliefPlanner] = None

    # -- helpers --------------------------------------------------------
    def fallback_planner(self) -> BeliefPlanner:
        if self._fallback_planner is None:
            self._fallback_planner = planner_for(self.grid,
                                                 self.config.resolved_fallback())
        return self._fallback_planner

    def unexplored(self, revealed: frozenset[Position]) -> list[Occurrence]:
        return [o for o in self.occurrences if o.floor and not o.floor <= revealed]

    def occurrence_at(self, pos: Position,
                      revealed: frozenset[Position]) -> Optional[Occurrence]:
        for occ in self.unexplored(revealed):
            if pos in occ.floor:
                return occ
        return None

    def _belief(self, agent: Position, revealed: frozenset[Position],
                exit_seen: Optional[Position]) -> Belief:
        if exit_seen is not None:
            return Belief(agent=agent, hypotheses=frozenset(), known_exit=exit_seen)
        hyp = frozenset(p for p in self.grid.floor_cells() if p not in revealed)
        return Belief(agent=agent, hypotheses=hyp)

    def flat_actions(self, agent: Position, revealed: frozenset[Position],
                     exit_seen: Optional[Position]) -> frozenset[Action]:
        return self.fallback_planner().value(
            self._belief(agent, revealed, exit_seen)
        ).best_actions

    def _exit_pursuit(self, agent: Position, revealed: frozenset[Position],
                      exit_pos: Position) -> frozenset[Action]:
        known = known_floor(self.grid, revealed, self.recon)
        known.add(exit_pos)
        dist = _bfs_over(known, {exit_pos})
        if agent not in dist:
            dist = {p: v for p, v in
                    value_iteration(self.grid, {exit_pos}).items()
                    if not math.isinf(v)}
        best = min(
            (dist[a.apply(agent)] for a in ACTIONS if a.apply(agent) in dist),
            default=None,
        )
        if best is None:
            raise UnreachableRegionError(f"no known path from {agent} to the exit")
        return frozenset(
            a for a in ACTIONS
            if a.apply(agent) in dist and dist[a.apply(agent)] == best
        )

    def _navigate_actions(self, agent: Position, revealed: frozenset[Position],
                          target: Occurrence) -> frozenset[Action]:
        known = known_floor(self.grid, revealed, self.recon) | target.floor
        known.add(agent)
        for attempt in (0, 1):
            dist = _bfs_over(known, set(target.floor))
            best = min(
                (dist[a.apply(agent)] for a in ACTIONS if a.apply(agent) in dist),
                default=None,
            )
            if best is not None:
                return frozenset(
                    a for a in ACTIONS
                    if a.apply(agent) in dist and dist[a.apply(agent)] == best
                )
            if attempt == 0:
                # corridors to the target may still be hidden: walk unknown
                # cells optimistically, replanning as reveals come in
                blocked = {p for p in revealed if self.grid.is_wall(p)}
                blocked |= {
                    (r, c)
                    for r in range(self.grid.n) for c in range(self.grid.m)
                    if self.recon.cells[r][c] == 1
                }
                known = {
                    (r, c)
                    for r in range(self.grid.n) for c in range(self.grid.m)
                    if (r, c) not in blocked
                }
        return frozenset()

    def occurrence_policy_actions(self, occ: Occurrence, agent: Position,
                                  revealed: frozenset[Position],
                                  entry_map: Position) -> frozenset[Action]:
        entry_canon = to_canonical_cell(occ.canonical, occ.transform, entry_map)
        policy_view = transform_policy(
            self.cache.get(occ.canonical, entry_canon), occ.transform
        )
        hyp = frozenset(p for p in occ.floor if p not in revealed)
        return policy_view.actions(agent, hyp)

    # -- the per-step decision -------------------------------------------
    def decide(self, agent: Position, revealed: frozenset[Position],
               exit_seen: Optional[Position], fallback: bool,
               committed: Optional[int] = None,
               entries: Optional[dict[int, Position]] = None,
               ) -> tuple[frozenset[Action], Optional[int], str]:
        """Action set for the current situation.

        Returns (actions, committed occurrence index or None, mode label).
        ``entries`` tracks the first cell occupied per occurrence within one
        episode (policy-cache keying); without it the current cell is used.
        """
        if fallback:
            return self.flat_actions(agent, revealed, exit_seen), None, "fallback"
        if exit_seen is not None:
            return self._exit_pursuit(agent, revealed, exit_seen), None, "exit"
        occ = self.occurrence_at(agent, revealed)
        if occ is not None:
            if entries is None:
                entry_map = agent
            else:
                entry_map = entries.setdefault(occ.index, agent)
            actions = self.occurrence_policy_actions(occ, agent, revealed, entry_map)
            if actions:
                return actions, None, "fragment"
        candidates = self.unexplored(revealed)
        if candidates:
            target = None
            if committed is not None:
                for o in candidates:
                    if o.index == committed:
                        target = o
                        break
            if target is None:
                target = nearest_occurrence(self.grid, self.recon, agent,
                                            candidates, revealed)
            if target is not None:
                actions = self._navigate_actions(agent, revealed, target)
                if actions:
                    return actions, target.index, "navigate"
        # everything reachable explored: sweep leftover hypotheses optimally
        return self.flat_actions(agent, revealed, exit_seen), None, "sweep"


def plan_episode(state: WorldState, config: GMPConfig, seed: int = 0,
                 cache: Optional[PolicyCache] = None,
                 controller: Optional[ModularController] = None) -> EpisodeTrace:
    """Run one full modular episode on the true world until the exit.

    Identical (state, config, seed) always produce the identical trace; the
    seed only breaks ties. On an observation contradicting the program's
    reconstruction the episode permanently reverts to flat planning.
    """
    grid = state.grid
    ctrl = controller if controller is not None else ModularController(
        grid, config, cache
    )
    rng = random.Random(seed)
    vis = visibility_index(grid, config.params.visibility)

    ctrl.fallback_planner()  # instantiate before snapshotting effort counters
    hits0, misses0 = ctrl.cache.hits, ctrl.cache.misses
    exp0 = _total_expansions(ctrl)
    entries: dict[int, Position] = {}

    agent = state.agent
    revealed = frozenset(vis.visible(agent))
    initial_reveal = revealed
    exit_seen = state.exit if state.exit in revealed else None
    ok, _ = consistency_check(
        Observation(agent=agent, visible=revealed, exit_seen=exit_seen),
        ctrl.recon, grid,
    )
    fallback_step: Optional[int] = None if ok else 0
    steps: list[StepRecord] = []
    labels: list[str] = []
    committed: Optional[int] = None
    world = state
    guard = 8 * len(grid.floor_cells()) * (len(grid.floor_cells()) + 2)

    while world.agent != world.exit:
        if len(steps) > guard:
            raise RuntimeError("episode exceeded the step guard; planner stuck")
        actions, committed, label = ctrl.decide(
            world.agent, revealed, exit_seen, fallback_step is not None, committed,
            entries,
        )
        if not actions:
            raise UnreachableRegionError("no action available; exit unreachable")
        action = _pick(sorted(actions, key=lambda a: a.name), rng)
        world = world_step(world, action)
        newly = frozenset(vis.visible(world.agent)) - revealed
        revealed = revealed | newly
        if exit_seen is None and world.exit in revealed:
            exit_seen = world.exit
        if fallback_step is None and newly:
            ok, _ = consistency_check(
                Observation(agent=world.agent, visible=newly, exit_seen=None),
                ctrl.recon, grid,
            )
            if not ok:
                fallback_step = len(steps) + 1
        steps.append(StepRecord(action=action, position=world.agent,
                                revealed=newly))
        labels.append(label)

    stats = EpisodeStats(
        expansions=_total_expansions(ctrl) - exp0,
        cache_hits=ctrl.cache.hits - hits0,
        cache_misses=ctrl.cache.misses - misses0,
        fallback_step=fallback_step,
        mode_labels=tuple(labels),
    )
    return EpisodeTrace(
        map_id=grid.map_id, start=state.agent, initial_reveal=initial_reveal,
        steps=tuple(steps), stats=stats, outcome_steps=len(steps),
    )


def _total_expansions(ctrl: ModularController) -> int:
    total = ctrl.cache.solve_expansions
    if ctrl._fallback_planner is not None:
        total += ctrl._fallback_planner.expansions
    return total


def _pick(actions: list[Action], rng: random.Random) -> Action:
    if len(actions) == 1:
        return actions[0]
    return actions[rng.randrange(len(actions))]
