"""Shared fixtures: hand-built maps and tiny agent/training configurations."""

import numpy as np
import pytest

from gridctf.maps import MapSpec, from_json_dict


def build_map(rows, spawns_red, spawns_blue, seed=0):
    return from_json_dict({
        "version": 1,
        "side": len(rows),
        "seed": seed,
        "rows": rows,
        "spawns": {"red": [list(p) for p in spawns_red],
                   "blue": [list(p) for p in spawns_blue]},
    })


@pytest.fixture
def small_map() -> MapSpec:
    """7x7 arena: two 5x2 bases joined by a 3-cell corridor."""
    rows = [
        "#######",
        "#rrrrr#",
        "#rrRrr#",
        "##ccc##",
        "#bbBbb#",
        "#bbbbb#",
        "#######",
    ]
    red = [(1, 3), (1, 1), (1, 5), (2, 1)]
    blue = [(5, 3), (5, 5), (5, 1), (4, 5)]
    return build_map(rows, red, blue)


@pytest.fixture
def corridor_map() -> MapSpec:
    """9x9 arena: two bases, two neutral rooms, four door cells."""
    rows = [
        "#########",
        "#rrr#...#",
        "#rRrc...#",
        "#rrr#...#",
        "##c###c##",
        "#...#bbb#",
        "#...cbBb#",
        "#...#bbb#",
        "#########",
    ]
    red = [(1, 1), (1, 3), (3, 1), (3, 3)]
    blue = [(7, 7), (7, 5), (5, 7), (5, 5)]
    return build_map(rows, red, blue)
