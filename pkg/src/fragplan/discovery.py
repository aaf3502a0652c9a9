"""Search for generative map programs: propose, validate, score, repeat.

Each round asks a proposer for up to C candidate programs, keeps the best
valid one seen so far, and stops once the score threshold is met (or the
round budget runs out). The default proposer enumerates repeated rectangular
sub-grids under all dihedral transforms, entirely offline; an external
proposer can instead fetch candidates from a remote endpoint speaking a small
JSON schema.
"""

from __future__ import annotations

import json
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ProposerError
from .grid import GridMap
from .programs import (
    Cells,
    Fragment,
    MapProgram,
    Placement,
    ProgramScore,
    ROTATIONS,
    Transform,
    score,
    transform_cells,
    trivial_program,
    validate_program,
)

log = logging.getLogger(__name__)

DEFAULT_W1 = 1.0
# Ratio of the value of defining one cell correctly (w1/4 normalized) to its
# one-bit literal cost. Must sit below 1 so reused fragments can beat single
# literal blocks of equal coverage, and high enough that leaving cells
# undefined stays expensive; see default_weights.
DEFAULT_ALPHA = 0.82


def default_weights(n: int, m: int) -> tuple[float, float]:
    """Default score weights for an N x M map.

    The per-bit weight scales with 1/(N*M) so that the trade-off between
    covering one more cell (worth w1/4 of normalized similarity) and paying
    one literal bit is size-independent: w1/4 = alpha * w2 * N * M.
    """
    return DEFAULT_W1, DEFAULT_W1 * 0.25 / (DEFAULT_ALPHA * n * m)


@dataclass(frozen=True)
class DiscoveryConfig:
    threshold: Optional[float] = None  # None: trivial-program score + margin
    margin: float = 0.005
    completions: int = 8
    max_rounds: int = 4
    min_h: int = 2
    min_w: int = 2
    max_h: Optional[int] = None
    max_w: Optional[int] = None
    w1: Optional[float] = None
    w2: Optional[float] = None

    def __post_init__(self):
        if self.completions < 1:
            raise ValueError("completions must be >= 1")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")

    def weights_for(self, n: int, m: int) -> tuple[float, float]:
        w1, w2 = default_weights(n, m)
        return (self.w1 if self.w1 is not None else w1,
                self.w2 if self.w2 is not None else w2)


@dataclass(frozen=True)
class ProposerRequest:
    grid: GridMap
    fragments: tuple[Cells, ...]  # best-so-far fragment vocabulary
    round: int
    max_candidates: int


@dataclass(frozen=True)
class Candidate:
    program: Optional[MapProgram]  # None when the payload did not parse
    provenance: str  # "enumerative" | "external"
    raw: object = None


@dataclass(frozen=True)
class DiscoveryResult:
    program: MapProgram
    score: ProgramScore
    trace: tuple[float, ...]  # best total seen after each round
    rounds: int
    degraded: bool  # no proposer round ever yielded a valid candidate

    @property
    def fragments(self) -> tuple[Fragment, ...]:
        return self.program.fragments


def validate_candidate(candidate: Candidate, grid: GridMap, w1: float,
                       w2: float) -> tuple[Optional[ProgramScore], Optional[str]]:
    """Score a candidate, or explain why it is rejected (never raises)."""
    if candidate.program is None:
        return None, "unparsable candidate"
    if candidate.program.dims != (grid.n, grid.m):
        return None, "dimension mismatch"
    reason = validate_program(candidate.program)
    if reason is not None:
        return None, reason
    return score(candidate.program, grid, w1, w2), None


# -- enumerative proposer ------------------------------------------------------

def _canonical_key(arr: np.ndarray) -> tuple:
    return (arr.shape[0], arr.shape[1], arr.tobytes())


def _dihedral_arrays(arr: np.ndarray):
    """The 8 images with the group element (rotation, reflect) producing each."""
    base = [arr, np.fliplr(arr)]
    for reflect in (False, True):
        cur = base[1] if reflect else base[0]
        for k in range(4):
            yield np.ascontiguousarray(cur), 90 * k, reflect
            cur = np.rot90(cur, k=-1)  # clockwise


def _inverse_element(rotation: int, reflect: bool) -> tuple[int, bool]:
    """Inverse of (mirror-then-rotate) expressed in the same form."""
    if not reflect:
        return ((360 - rotation) % 360, False)
    return (rotation, True)


@dataclass
class _Group:
    canon: Cells
    placements: list[Placement] = field(default_factory=list)
    covered: set = field(default_factory=set)


def _enumerate_groups(arr: np.ndarray, cfg: DiscoveryConfig) -> dict[tuple, _Group]:
    """All canonical sub-grid classes with every dihedral occurrence of each."""
    n, m = arr.shape
    max_h = cfg.max_h if cfg.max_h is not None else n
    max_w = cfg.max_w if cfg.max_w is not None else m
    groups: dict[tuple, _Group] = {}
    for h in range(cfg.min_h, max_h + 1):
        for w in range(cfg.min_w, max_w + 1):
            for top in range(n - h + 1):
                for left in range(m - w + 1):
                    sub = arr[top : top + h, left : left + w]
                    best_key = None
                    best_elem = None
                    best_arr = None
                    for variant, rot, refl in _dihedral_arrays(sub):
                        key = _canonical_key(variant)
                        if best_key is None or key < best_key:
                            best_key = key
                            best_elem = (rot, refl)
                            best_arr = variant
                    group = groups.get(best_key)
                    if group is None:
                        canon = tuple(tuple(int(v) for v in row) for row in best_arr)
                        group = _Group(canon=canon)
                        groups[best_key] = group
                    inv_rot, inv_refl = _inverse_element(*best_elem)
                    group.placements.append(
                        Placement(
                            fragment_id=0,
                            transform=Transform(rotation=inv_rot, reflect=inv_refl,
                                                translation=(top, left)),
                        )
                    )
                    group.covered.update(
                        (top + r, left + c) for r in range(h) for c in range(w)
                    )
    return groups


def _exact_match_score(covered_count: int, n_fragments_cells: int, coord_bits: int,
                       placements: int, fragments: int, dims: tuple[int, int],
                       w1: float, w2: float) -> float:
    """Score of a program whose painted cells all match the input exactly."""
    n, m = dims
    undefined = n * m - covered_count
    bits = fragments * coord_bits + n_fragments_cells \
        + placements * (coord_bits + 3)
    return -w1 * 0.25 * undefined / (n * m) - w2 * bits


class EnumerativeProposer:
    """Deterministic offline proposer built on exhaustive sub-grid matching.

    Groups are ranked by score gain per added description-length bit (ties:
    smaller fragment area, then lexicographic canonical form); candidates are
    the top single-group programs, one greedy multi-group assembly, and the
    trivial whole-map program as a floor.
    """

    provenance = "enumerative"

    def __init__(self, config: DiscoveryConfig):
        self.config = config

    def propose(self, req: ProposerRequest) -> list[Candidate]:
        grid = req.grid
        arr = grid.to_array()
        n, m = arr.shape
        w1, w2 = self.config.weights_for(n, m)
        from .programs import ceil_log2

        coord_bits = ceil_log2(n) + ceil_log2(m)
        groups = _enumerate_groups(arr, self.config)

        empty_score = -w1 * 0.25
        ranked = []
        for group in groups.values():
            h = len(group.canon)
            w = len(group.canon[0])
            bits = coord_bits + h * w + len(group.placements) * (coord_bits + 3)
            total = _exact_match_score(
                len(group.covered), h * w, coord_bits, len(group.placements), 1,
                (n, m), w1, w2,
            )
            gain_per_bit = (total - empty_score) / bits
            ranked.append((-gain_per_bit, h * w, group.canon, total, group))
        ranked.sort(key=lambda item: item[:3])

        def program_of(groups_used: list[_Group]) -> MapProgram:
            frags = tuple(
                Fragment(id=i, cells=g.canon) for i, g in enumerate(groups_used)
            )
            placements = []
            for i, g in enumerate(groups_used):
                for p in sorted(
                    g.placements,
                    key=lambda p: (p.transform.translation, p.transform.rotation,
                                   p.transform.reflect),
                ):
                    placements.append(Placement(fragment_id=i, transform=p.transform))
            return MapProgram(fragments=frags, placements=tuple(placements),
                              dims=(n, m))

        candidates: list[MapProgram] = []
        budget = req.max_candidates
        for _, _, _, total, group in ranked[: max(budget - 2, 1)]:
            candidates.append(program_of([group]))

        # greedy assembly in rank order while the marginal score improves
        if ranked:
            used = [ranked[0][4]]
            covered = set(ranked[0][4].covered)
            cells_bits = len(used[0].canon) * len(used[0].canon[0])
            n_place = len(used[0].placements)
            best_total = ranked[0][3]
            for _, _, _, _, group in ranked[1:]:
                new_cov = covered | group.covered
                new_cells = cells_bits + len(group.canon) * len(group.canon[0])
                new_place = n_place + len(group.placements)
                total = _exact_match_score(
                    len(new_cov), new_cells, coord_bits, new_place,
                    len(used) + 1, (n, m), w1, w2,
                )
                if total > best_total:
                    used.append(group)
                    covered = new_cov
                    cells_bits = new_cells
                    n_place = new_place
                    best_total = total
            if len(used) > 1:
                candidates.append(program_of(used))

        candidates.append(trivial_program(grid))

        seen = set()
        out = []
        for prog in candidates:
            key = (tuple(f.cells for f in prog.fragments), prog.placements)
            if key in seen:
                continue
            seen.add(key)
            out.append(Candidate(program=prog, provenance=self.provenance))
            if len(out) >= budget:
                break
        return out


# -- external proposer ---------------------------------------------------------

WIRE_SCHEMA_DOC = """\
POST <endpoint> with JSON:
  {"map": [[0|1, ...], ...], "fragments": [[[0|1, ...], ...], ...],
   "round": int, "max_candidates": int}
Response JSON:
  {"candidates": [{"fragments": [[[0|1, ...], ...], ...],
                   "placements": [{"fragment": int, "row": int, "col": int,
                                   "rot": 0|90|180|270, "reflect": bool}]}]}
"""


def parse_wire_candidate(payload: object, dims: tuple[int, int]) -> Optional[MapProgram]:
    """Structured wire candidate -> MapProgram, or None when malformed."""
    try:
        frags = []
        for i, cells in enumerate(payload["fragments"]):
            frags.append(Fragment(
                id=i, cells=tuple(tuple(int(v) for v in row) for row in cells)
            ))
        placements = []
        for p in payload["placements"]:
            rot = int(p["rot"])
            if rot not in ROTATIONS:
                return None
            placements.append(Placement(
                fragment_id=int(p["fragment"]),
                transform=Transform(rotation=rot, reflect=bool(p["reflect"]),
                                    translation=(int(p["row"]), int(p["col"]))),
            ))
        return MapProgram(fragments=tuple(frags), placements=tuple(placements),
                          dims=dims)
    except (KeyError, TypeError, ValueError, IndexError):
        return None


class ExternalProposer:
    """Fetch candidates from a remote endpoint; malformed completions become
    invalid candidates, transport failures raise ProposerError."""

    provenance = "external"

    def __init__(self, endpoint: str, timeout: float = 30.0,
                 auth_token: Optional[str] = None):
        self.endpoint = endpoint
        self.timeout = timeout
        self.auth_token = auth_token

    def propose(self, req: ProposerRequest) -> list[Candidate]:
        body = json.dumps({
            "map": req.grid.to_array().tolist(),
            "fragments": [list(map(list, f)) for f in req.fragments],
            "round": req.round,
            "max_candidates": req.max_candidates,
        }).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.auth_token:
            headers["Authorization"] = f"Bearer {self.auth_token}"
        request = urllib.request.Request(self.endpoint, data=body, headers=headers)
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                data = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, TimeoutError, ValueError, OSError) as exc:
            raise ProposerError(f"external proposer failed: {exc}") from exc
        out = []
        for raw in data.get("candidates", [])[: req.max_candidates]:
            program = parse_wire_candidate(raw, (req.grid.n, req.grid.m))
            out.append(Candidate(program=program, provenance=self.provenance,
                                 raw=raw))
        return out


Proposer = Callable[[ProposerRequest], list[Candidate]]


def discover(grid: GridMap, config: DiscoveryConfig = DiscoveryConfig(),
             proposer=None) -> DiscoveryResult:
    """Best-so-far program search with the trivial program as a floor."""
    if proposer is None:
        proposer = EnumerativeProposer(config)
    w1, w2 = config.weights_for(grid.n, grid.m)
    best_prog = trivial_program(grid)
    best_score = score(best_prog, grid, w1, w2)
    threshold = config.threshold
    if threshold is None:
        threshold = best_score.total + config.margin
    trace = []
    degraded = True
    rounds = 0
    for round_idx in range(config.max_rounds):
        rounds = round_idx + 1
        req = ProposerRequest(
            grid=grid,
            fragments=tuple(f.cells for f in best_prog.fragments),
            round=round_idx,
            max_candidates=config.completions,
        )
        try:
            candidates = proposer.propose(req)
        except ProposerError as exc:
            log.warning("proposer failed in round %d: %s", round_idx, exc)
            trace.append(best_score.total)
            continue
        for cand in candidates:
            cand_score, reason = validate_candidate(cand, grid, w1, w2)
            if cand_score is None:
                log.debug("candidate rejected: %s", reason)
                continue
            degraded = False
            if cand_score.total > best_score.total:
                best_prog, best_score = cand.program, cand_score
        trace.append(best_score.total)
        if best_score.total >= threshold:
            break
    return DiscoveryResult(program=best_prog, score=best_score,
                           trace=tuple(trace), rounds=rounds, degraded=degraded)


# -- estimator facade ----------------------------------------------------------

from sklearn.base import BaseEstimator  # noqa: E402


class FragmentDiscovery(BaseEstimator):
    """Estimator-style wrapper: fit a generative program to a 2D occupancy map.

    X is an (N, M) array with wall=1, floor=0. After fit, ``program_`` holds
    the best program found, ``score_`` its score, and ``transform(X)``
    returns the reconstruction (undefined cells as 0.5).
    """

    def __init__(self, threshold=None, margin=0.005, completions=8, max_rounds=4,
                 min_size=2, w1=None, w2=None, proposer="enumerative",
                 endpoint=None, timeout=30.0):
        self.threshold = threshold
        self.margin = margin
        self.completions = completions
        self.max_rounds = max_rounds
        self.min_size = min_size
        self.w1 = w1
        self.w2 = w2
        self.proposer = proposer
        self.endpoint = endpoint
        self.timeout = timeout

    def _config(self) -> DiscoveryConfig:
        return DiscoveryConfig(
            threshold=self.threshold, margin=self.margin,
            completions=self.completions, max_rounds=self.max_rounds,
            min_h=self.min_size, min_w=self.min_size, w1=self.w1, w2=self.w2,
        )

    def fit(self, X, y=None):
        arr = np.asarray(X, dtype=np.int8)
        if arr.ndim != 2:
            raise ValueError("expected a 2D occupancy array")
        floors = np.argwhere(arr == 0)
        if len(floors) == 0:
            raise ValueError("map has no floor cells")
        from .grid import grid_from_array

        grid = grid_from_array(arr, start=tuple(int(v) for v in floors[0]))
        config = self._config()
        if self.proposer == "external":
            if not self.endpoint:
                raise ValueError("external proposer needs an endpoint")
            prop = ExternalProposer(self.endpoint, timeout=self.timeout)
        else:
            prop = EnumerativeProposer(config)
        result = discover(grid, config, prop)
        self.program_ = result.program
        self.fragments_ = result.program.fragments
        self.score_ = result.score
        self.trace_ = result.trace
        self.degraded_ = result.degraded
        self.n_rounds_ = result.rounds
        return self

    def transform(self, X=None):
        from .programs import reconstruct

        if not hasattr(self, "program_"):
            raise RuntimeError("fit must run before transform")
        return reconstruct(self.program_).output_array()
