import random

import pytest

from fragplan.errors import InvalidPositionError
from fragplan.grid import VisibilityParams, grid_from_rows
from fragplan.los import visible_cells

from oracles import random_maze, visible_oracle


def test_open_room_sees_all():
    g = grid_from_rows(["...", ".S.", "..."])
    assert visible_cells(g, (1, 1)) == frozenset(
        (r, c) for r in range(3) for c in range(3)
    )


def test_single_cell():
    g = grid_from_rows(["S"])
    assert visible_cells(g, (0, 0)) == frozenset({(0, 0)})


def test_corridor_wall_blocks_beyond_but_not_itself():
    g = grid_from_rows(["S.#.."])
    vis = visible_cells(g, (0, 0))
    assert vis == frozenset({(0, 0), (0, 1), (0, 2)})


def test_origin_must_be_floor():
    g = grid_from_rows(["S#"])
    with pytest.raises(InvalidPositionError):
        visible_cells(g, (0, 1))
    with pytest.raises(InvalidPositionError):
        visible_cells(g, (5, 5))


def test_corner_graze_is_visible():
    g = grid_from_rows(["S#", "#."])
    assert (1, 1) in visible_cells(g, (0, 0))
    assert (0, 1) in visible_cells(g, (0, 0))


def test_matches_exact_rational_oracle_on_random_mazes():
    rng = random.Random(11)
    for _ in range(40):
        g = random_maze(rng, rng.randint(2, 9), rng.randint(2, 9))
        for origin in sorted(g.floor_cells()):
            assert visible_cells(g, origin) == visible_oracle(g, origin), (
                g, origin,
            )


def test_symmetry_between_floor_cells():
    rng = random.Random(5)
    for _ in range(25):
        g = random_maze(rng, 7, 7)
        floors = sorted(g.floor_cells())
        for a in floors:
            va = visible_cells(g, a)
            for b in floors:
                if b in va:
                    assert a in visible_cells(g, b)


def test_monotone_in_range():
    rng = random.Random(9)
    for _ in range(15):
        g = random_maze(rng, 7, 7)
        origin = g.start
        smaller = visible_cells(g, origin, VisibilityParams(range=2.5))
        larger = visible_cells(g, origin, VisibilityParams(range=4.0))
        unbounded = visible_cells(g, origin)
        assert smaller <= larger <= unbounded


def test_bounded_range_euclidean():
    g = grid_from_rows(["S....."])
    vis = visible_cells(g, (0, 0), VisibilityParams(range=3))
    assert vis == frozenset({(0, 0), (0, 1), (0, 2), (0, 3)})
