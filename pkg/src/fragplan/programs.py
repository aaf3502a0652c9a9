"""Generative map programs: fragments placed under dihedral transforms.

A program is a list of fragments plus an ordered list of placements; painting
the placements in order (later ones overwrite) approximately reconstructs a
map, with unpainted cells left undefined. Programs are ranked by a weighted
combination of reconstruction similarity and description length in bits, so
small fragment vocabularies with many reuses win over long literal encodings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import MapParseError, TransformBoundsError
from .grid import GridMap, Position

ROTATIONS = (0, 90, 180, 270)

Cells = tuple[tuple[int, ...], ...]  # 0 floor, 1 wall


def cells_from_rows(rows) -> Cells:
    return tuple(tuple(1 if ch == "#" else 0 for ch in row) for row in rows)


def rows_from_cells(cells: Cells) -> list[str]:
    return ["".join("#" if v else "." for v in row) for row in cells]


@dataclass(frozen=True)
class Fragment:
    id: int
    cells: Cells

    def __post_init__(self):
        if not self.cells or not self.cells[0]:
            raise ValueError("fragment must be at least 1x1")
        w = len(self.cells[0])
        for row in self.cells:
            if len(row) != w:
                raise ValueError("ragged fragment rows")
            for v in row:
                if v not in (0, 1):
                    raise ValueError("fragment cells must be 0 or 1")

    @property
    def height(self) -> int:
        return len(self.cells)

    @property
    def width(self) -> int:
        return len(self.cells[0])


@dataclass(frozen=True)
class Transform:
    """Reflect (mirror columns) first, then rotate clockwise, then translate.

    ``translation`` is the top-left corner of the transformed bounding box in
    map coordinates.
    """

    rotation: int = 0
    reflect: bool = False
    translation: Position = (0, 0)

    def __post_init__(self):
        if self.rotation not in ROTATIONS:
            raise ValueError(f"rotation must be one of {ROTATIONS}")


@dataclass(frozen=True)
class Placement:
    fragment_id: int
    transform: Transform


@dataclass(frozen=True)
class MapProgram:
    fragments: tuple[Fragment, ...]
    placements: tuple[Placement, ...]
    dims: tuple[int, int]

    def fragment_by_id(self, fid: int) -> Fragment:
        for f in self.fragments:
            if f.id == fid:
                return f
        raise KeyError(f"no fragment with id {fid}")


UNDEFINED = -1


@dataclass(frozen=True)
class ReconstructedMap:
    """Painted output: 0 floor, 1 wall, -1 undefined."""

    cells: tuple[tuple[int, ...], ...]

    @property
    def dims(self) -> tuple[int, int]:
        return (len(self.cells), len(self.cells[0]))

    def defined_count(self) -> int:
        return sum(v != UNDEFINED for row in self.cells for v in row)

    def output_array(self) -> np.ndarray:
        """Float occupancy with undefined cells at the max-entropy value 0.5."""
        arr = np.array(self.cells, dtype=np.float64)
        arr[arr == UNDEFINED] = 0.5
        return arr


# -- dihedral action ---------------------------------------------------------

def _mirror(cells: Cells) -> Cells:
    return tuple(tuple(reversed(row)) for row in cells)


def _rot90cw(cells: Cells) -> Cells:
    h = len(cells)
    w = len(cells[0])
    return tuple(tuple(cells[h - 1 - r2][c2] for r2 in range(h)) for c2 in range(w))


def transform_cells(cells: Cells, rotation: int = 0, reflect: bool = False) -> Cells:
    """Pure dihedral action on a cell grid (no translation)."""
    out = _mirror(cells) if reflect else cells
    for _ in range(rotation // 90):
        out = _rot90cw(out)
    return out


def transform_point(p: Position, h: int, w: int, rotation: int = 0,
                    reflect: bool = False) -> Position:
    """Image of fragment-local point ``p`` under the same dihedral action."""
    r, c = p
    if reflect:
        c = w - 1 - c
    for _ in range(rotation // 90):
        r, c = c, h - 1 - r
        h, w = w, h
    return (r, c)


def transform_delta(d: Position, rotation: int = 0, reflect: bool = False) -> Position:
    """Image of a direction vector under the linear part of the action."""
    dr, dc = d
    if reflect:
        dc = -dc
    for _ in range(rotation // 90):
        dr, dc = dc, -dr
    return (dr, dc)


def transformed_dims(h: int, w: int, rotation: int) -> tuple[int, int]:
    return (w, h) if rotation in (90, 270) else (h, w)


def apply_transform(fragment: Fragment, t: Transform,
                    dims: Optional[tuple[int, int]] = None) -> tuple[Position, Cells]:
    """Transformed cell grid plus its top-left anchor in map coordinates.

    When ``dims`` is given the placed box must fit inside the map.
    """
    cells = transform_cells(fragment.cells, t.rotation, t.reflect)
    top, left = t.translation
    h, w = len(cells), len(cells[0])
    if dims is not None:
        n, m = dims
        if top < 0 or left < 0 or top + h > n or left + w > m:
            raise TransformBoundsError(
                f"placement at {t.translation} of {h}x{w} box exceeds {n}x{m} map"
            )
    return (t.translation, cells)


def placement_cells(program: MapProgram, placement: Placement) -> dict[Position, int]:
    """Map coordinates painted by one placement, with their values."""
    fragment = program.fragment_by_id(placement.fragment_id)
    (top, left), cells = apply_transform(fragment, placement.transform, program.dims)
    return {
        (top + r, left + c): cells[r][c]
        for r in range(len(cells))
        for c in range(len(cells[0]))
    }


def reconstruct(program: MapProgram) -> ReconstructedMap:
    """Paint placements in order; later placements overwrite earlier ones."""
    n, m = program.dims
    out = [[UNDEFINED] * m for _ in range(n)]
    for placement in program.placements:
        for (r, c), v in placement_cells(program, placement).items():
            out[r][c] = v
    return ReconstructedMap(cells=tuple(tuple(row) for row in out))


# -- description length ------------------------------------------------------

def ceil_log2(x: int) -> int:
    return (x - 1).bit_length() if x > 1 else 0

ROTATION_BITS = 2
REFLECT_BITS = 1


def description_length(program: MapProgram) -> int:
    """Total encoding cost in bits.

    Each fragment pays its shape (one row and one column count at map
    resolution) plus one bit per cell; each placement pays a translation at
    map resolution plus two rotation bits and one reflection bit.
    """
    n, m = program.dims
    coord_bits = ceil_log2(n) + ceil_log2(m)
    total = 0
    for f in program.fragments:
        total += coord_bits + f.height * f.width
    total += len(program.placements) * (coord_bits + ROTATION_BITS + REFLECT_BITS)
    return total


@dataclass(frozen=True)
class ProgramScore:
    """Higher total is better: both mismatch and encoding bits count against."""

    similarity_term: float  # normalized squared reconstruction error, in [0, 1]
    dl_bits: int
    total: float
    w1: float
    w2: float


def score(program: MapProgram, grid: GridMap, w1: float, w2: float) -> ProgramScore:
    """Rank a program against the map it should generate.

    total = -w1 * (mean squared cell error, undefined cells read as 0.5)
            -w2 * description_length
    """
    if program.dims != (grid.n, grid.m):
        raise ValueError(
            f"program dims {program.dims} do not match map {(grid.n, grid.m)}"
        )
    target = grid.to_array().astype(np.float64)
    output = reconstruct(program).output_array()
    sim = float(np.mean((target - output) ** 2))
    bits = description_length(program)
    return ProgramScore(similarity_term=sim, dl_bits=bits,
                        total=-w1 * sim - w2 * bits, w1=w1, w2=w2)


# -- canonical forms ---------------------------------------------------------

def dihedral_variants(cells: Cells) -> list[tuple[Cells, int, bool]]:
    """All 8 (variant, rotation, reflect) images of a cell grid."""
    out = []
    for reflect in (False, True):
        for rotation in ROTATIONS:
            out.append((transform_cells(cells, rotation, reflect), rotation, reflect))
    return out


def canonical_cells(cells: Cells) -> Cells:
    """Lexicographically smallest of the 8 dihedral variants."""
    return min(
        (v for v, _, _ in dihedral_variants(cells)),
        key=lambda c: (len(c), len(c[0]), c),
    )


def canonical_fragment(fragment: Fragment) -> tuple[Cells, Transform]:
    """Canonical form plus a transform carrying the canonical cells onto
    the fragment's own orientation (translation zero)."""
    canon = canonical_cells(fragment.cells)
    for rotation in ROTATIONS:
        for reflect in (False, True):
            if transform_cells(canon, rotation, reflect) == fragment.cells:
                return canon, Transform(rotation=rotation, reflect=reflect)
    raise AssertionError("canonical form must reach the fragment")  # pragma: no cover


def trivial_program(grid: GridMap) -> MapProgram:
    """The whole map as a single fragment with one identity placement."""
    cells = tuple(
        tuple(1 if (r, c) in grid.walls else 0 for c in range(grid.m))
        for r in range(grid.n)
    )
    frag = Fragment(id=0, cells=cells)
    return MapProgram(
        fragments=(frag,),
        placements=(Placement(fragment_id=0, transform=Transform()),),
        dims=(grid.n, grid.m),
    )


def validate_program(program: MapProgram) -> Optional[str]:
    """None when the program is well-formed, else a rejection reason."""
    ids = [f.id for f in program.fragments]
    if len(set(ids)) != len(ids):
        return "duplicate fragment ids"
    known = set(ids)
    n, m = program.dims
    for i, placement in enumerate(program.placements):
        if placement.fragment_id not in known:
            return f"placement {i} references unknown fragment {placement.fragment_id}"
        fragment = program.fragment_by_id(placement.fragment_id)
        h, w = transformed_dims(fragment.height, fragment.width,
                                placement.transform.rotation)
        top, left = placement.transform.translation
        if top < 0 or left < 0 or top + h > n or left + w > m:
            return f"placement {i} out of bounds"
    return None


# -- program file format ------------------------------------------------------
#
# program <N> <M>
# fragment <id> <h> <w>      followed by h rows of '#'/'.'
# place <fragment_id> <row> <col> <rotation> <reflect 0|1>
#
# Lines starting with ';' are comments (used for provenance echoes).

def serialize_program(program: MapProgram, header_comments: tuple[str, ...] = ()) -> str:
    lines = [f"; {c}" for c in header_comments]
    lines.append(f"program {program.dims[0]} {program.dims[1]}")
    for f in program.fragments:
        lines.append(f"fragment {f.id} {f.height} {f.width}")
        lines.extend(rows_from_cells(f.cells))
    for p in program.placements:
        t = p.transform
        lines.append(
            f"place {p.fragment_id} {t.translation[0]} {t.translation[1]} "
            f"{t.rotation} {1 if t.reflect else 0}"
        )
    return "\n".join(lines) + "\n"


def parse_program(text: str) -> MapProgram:
    lines = text.splitlines()
    dims = None
    fragments: list[Fragment] = []
    placements: list[Placement] = []
    i = 0

    def fail(msg, line_no):
        raise MapParseError(msg, line=line_no + 1)

    while i < len(lines):
        line = lines[i]
        if not line.strip() or line.startswith(";"):
            i += 1
            continue
        parts = line.split()
        if parts[0] == "program":
            if dims is not None:
                fail("duplicate program header", i)
            if len(parts) != 3:
                fail("program header needs N and M", i)
            dims = (int(parts[1]), int(parts[2]))
            i += 1
        elif parts[0] == "fragment":
            if len(parts) != 4:
                fail("fragment header needs id, h, w", i)
            fid, h, w = int(parts[1]), int(parts[2]), int(parts[3])
            rows = lines[i + 1 : i + 1 + h]
            if len(rows) < h:
                fail(f"fragment {fid} missing rows", i)
            for j, row in enumerate(rows):
                if len(row) != w or any(ch not in "#." for ch in row):
                    fail(f"fragment {fid} row malformed", i + 1 + j)
            fragments.append(Fragment(id=fid, cells=cells_from_rows(rows)))
            i += 1 + h
        elif parts[0] == "place":
            if len(parts) != 6:
                fail("place needs fragment, row, col, rotation, reflect", i)
            rot = int(parts[4])
            if rot not in ROTATIONS:
                fail(f"bad rotation {rot}", i)
            placements.append(
                Placement(
                    fragment_id=int(parts[1]),
                    transform=Transform(
                        rotation=rot,
                        reflect=parts[5] == "1",
                        translation=(int(parts[2]), int(parts[3])),
                    ),
                )
            )
            i += 1
        else:
            fail(f"unknown directive {parts[0]!r}", i)
    if dims is None:
        raise MapParseError("missing program header", line=1)
    program = MapProgram(fragments=tuple(fragments), placements=tuple(placements),
                         dims=dims)
    reason = validate_program(program)
    if reason:
        raise MapParseError(f"invalid program: {reason}", line=1)
    return program


def relabel_program(program: MapProgram) -> MapProgram:
    """Renumber fragments 0..k-1 preserving order (ids are arbitrary labels)."""
    mapping = {f.id: i for i, f in enumerate(program.fragments)}
    return MapProgram(
        fragments=tuple(replace(f, id=mapping[f.id]) for f in program.fragments),
        placements=tuple(
            replace(p, fragment_id=mapping[p.fragment_id]) for p in program.placements
        ),
        dims=program.dims,
    )
