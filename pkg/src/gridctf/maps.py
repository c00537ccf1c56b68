"""Map representation: grid layout, symmetry transform, validation, file IO.

Cell codes are small ints so the grid can live in a compact numpy array.
The text alphabet used in map files is:

    '#' wall        '.' neutral room    'c' corridor
    'r' red room    'b' blue room
    'R' red flag stand (inside the red room)
    'B' blue flag stand
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field

import numpy as np

WALL = 0
ROOM = 1  # neutral room
ROOM_RED = 2
ROOM_BLUE = 3
CORRIDOR = 4

RED = 0
BLUE = 1

MAP_FILE_VERSION = 1

_CELL_TO_CHAR = {WALL: "#", ROOM: ".", ROOM_RED: "r", ROOM_BLUE: "b", CORRIDOR: "c"}
_CHAR_TO_CELL = {v: k for k, v in _CELL_TO_CHAR.items()}
_CHAR_TO_CELL["R"] = ROOM_RED
_CHAR_TO_CELL["B"] = ROOM_BLUE

_TEAM_SWAP = {WALL: WALL, ROOM: ROOM, CORRIDOR: CORRIDOR, ROOM_RED: ROOM_BLUE, ROOM_BLUE: ROOM_RED}


class MapError(ValueError):
    """Raised for structurally invalid maps or unreadable map files."""


@dataclass(frozen=True)
class MapSpec:
    """Immutable grid layout with flag stands and spawn points.

    ``cells`` is a ``side x side`` int8 array of the codes above.
    ``flag_stands[team]`` and ``spawns[team]`` use (row, col) coordinates.
    """

    side: int
    cells: np.ndarray
    flag_stands: tuple[tuple[int, int], tuple[int, int]]
    spawns: tuple[tuple[tuple[int, int], ...], tuple[tuple[int, int], ...]]
    seed: int = 0

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)
        if cells.shape != (self.side, self.side):
            raise MapError(f"cells shape {cells.shape} does not match side {self.side}")

    def is_wall(self, r: int, c: int) -> bool:
        if not (0 <= r < self.side and 0 <= c < self.side):
            return True
        return self.cells[r, c] == WALL

    def walkable_mask(self) -> np.ndarray:
        return self.cells != WALL

    def base_cells(self, team: int) -> list[tuple[int, int]]:
        code = ROOM_RED if team == RED else ROOM_BLUE
        rows, cols = np.nonzero(self.cells == code)
        return list(zip(rows.tolist(), cols.tolist()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MapSpec):
            return NotImplemented
        return (
            self.side == other.side
            and np.array_equal(self.cells, other.cells)
            and self.flag_stands == other.flag_stands
            and self.spawns == other.spawns
        )

    def __hash__(self):
        return hash((self.side, self.cells.tobytes(), self.flag_stands, self.spawns))


@dataclass
class ValidationReport:
    solvable: bool
    symmetric: bool
    base_areas: tuple[int, int]
    flag_distance: int
    dead_end_count: int
    min_base_area: int = 9
    min_flag_distance: int = 0
    failures: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def reflect_coord(side: int, rc: tuple[int, int]) -> tuple[int, int]:
    r, c = rc
    return (side - 1 - r, side - 1 - c)


def point_reflect(spec: MapSpec) -> MapSpec:
    """180-degree rotation of the map with team labels swapped. Involution."""
    swap = np.array([_TEAM_SWAP[k] for k in range(5)], dtype=np.int8)
    cells = swap[spec.cells[::-1, ::-1]]
    stands = (
        reflect_coord(spec.side, spec.flag_stands[BLUE]),
        reflect_coord(spec.side, spec.flag_stands[RED]),
    )
    spawns = (
        tuple(reflect_coord(spec.side, p) for p in spec.spawns[BLUE]),
        tuple(reflect_coord(spec.side, p) for p in spec.spawns[RED]),
    )
    return MapSpec(side=spec.side, cells=cells, flag_stands=stands, spawns=spawns, seed=spec.seed)


def shortest_path_length(spec: MapSpec, start: tuple[int, int], goal: tuple[int, int]) -> int:
    """BFS distance through non-wall cells; -1 if unreachable."""
    if spec.is_wall(*start) or spec.is_wall(*goal):
        return -1
    if start == goal:
        return 0
    side = spec.side
    dist = -np.ones((side, side), dtype=np.int32)
    dist[start] = 0
    q = deque([start])
    while q:
        r, c = q.popleft()
        d = dist[r, c]
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < side and 0 <= nc < side and dist[nr, nc] < 0 and spec.cells[nr, nc] != WALL:
                if (nr, nc) == goal:
                    return d + 1
                dist[nr, nc] = d + 1
                q.append((nr, nc))
    return -1


def count_dead_ends(cells: np.ndarray) -> int:
    """Corridor cells with at most one walkable neighbour."""
    walk = cells != WALL
    deg = np.zeros(cells.shape, dtype=np.int32)
    deg[1:, :] += walk[:-1, :]
    deg[:-1, :] += walk[1:, :]
    deg[:, 1:] += walk[:, :-1]
    deg[:, :-1] += walk[:, 1:]
    return int(np.sum((cells == CORRIDOR) & (deg <= 1)))


def is_point_symmetric(spec: MapSpec) -> bool:
    swap = np.array([_TEAM_SWAP[k] for k in range(5)], dtype=np.int8)
    if not np.array_equal(spec.cells, swap[spec.cells[::-1, ::-1]]):
        return False
    if spec.flag_stands[BLUE] != reflect_coord(spec.side, spec.flag_stands[RED]):
        return False
    red_set = {reflect_coord(spec.side, p) for p in spec.spawns[RED]}
    return red_set == set(spec.spawns[BLUE])


def validate(
    spec: MapSpec, min_base_area: int = 9, min_flag_distance: int | None = None
) -> ValidationReport:
    """Pure structural check: connectivity, symmetry, base areas, flag spacing, dead ends."""
    if min_flag_distance is None:
        min_flag_distance = spec.side
    areas = (len(spec.base_cells(RED)), len(spec.base_cells(BLUE)))
    flag_dist = shortest_path_length(spec, spec.flag_stands[RED], spec.flag_stands[BLUE])
    solvable = flag_dist >= 0
    symmetric = is_point_symmetric(spec)
    dead_ends = count_dead_ends(spec.cells)

    failures = []
    if not solvable:
        failures.append("flag stands are not connected")
    if not symmetric:
        failures.append("map is not point-symmetric under team swap")
    if areas[RED] < min_base_area or areas[BLUE] < min_base_area:
        failures.append(f"base areas {areas} below minimum {min_base_area}")
    if solvable and flag_dist < min_flag_distance:
        failures.append(f"flag distance {flag_dist} below minimum {min_flag_distance}")
    if dead_ends > 0:
        failures.append(f"{dead_ends} corridor dead ends remain")
    for team, name in ((RED, "red"), (BLUE, "blue")):
        stand = spec.flag_stands[team]
        want = ROOM_RED if team == RED else ROOM_BLUE
        if spec.cells[stand] != want:
            failures.append(f"{name} flag stand is not inside the {name} base")
        for p in spec.spawns[team]:
            if spec.cells[p] != want:
                failures.append(f"{name} spawn {p} is not inside the {name} base")
        if not spec.spawns[team]:
            failures.append(f"{name} team has no spawn points")

    return ValidationReport(
        solvable=solvable,
        symmetric=symmetric,
        base_areas=areas,
        flag_distance=flag_dist,
        dead_end_count=dead_ends,
        min_base_area=min_base_area,
        min_flag_distance=min_flag_distance,
        failures=failures,
    )


def to_rows(spec: MapSpec) -> list[str]:
    rows = []
    for r in range(spec.side):
        chars = []
        for c in range(spec.side):
            if (r, c) == spec.flag_stands[RED]:
                chars.append("R")
            elif (r, c) == spec.flag_stands[BLUE]:
                chars.append("B")
            else:
                chars.append(_CELL_TO_CHAR[int(spec.cells[r, c])])
        rows.append("".join(chars))
    return rows


def to_json_dict(spec: MapSpec) -> dict:
    return {
        "version": MAP_FILE_VERSION,
        "side": spec.side,
        "seed": spec.seed,
        "rows": to_rows(spec),
        "spawns": {
            "red": [list(p) for p in spec.spawns[RED]],
            "blue": [list(p) for p in spec.spawns[BLUE]],
        },
    }


def from_json_dict(d: dict) -> MapSpec:
    if d.get("version") != MAP_FILE_VERSION:
        raise MapError(f"unsupported map file version {d.get('version')!r}")
    side = int(d["side"])
    rows = d["rows"]
    if len(rows) != side or any(len(row) != side for row in rows):
        raise MapError("row lengths do not match side")
    cells = np.zeros((side, side), dtype=np.int8)
    stands: dict[int, tuple[int, int]] = {}
    for r, row in enumerate(rows):
        for c, ch in enumerate(row):
            if ch not in _CHAR_TO_CELL:
                raise MapError(f"unknown map character {ch!r} at {(r, c)}")
            cells[r, c] = _CHAR_TO_CELL[ch]
            if ch == "R":
                stands[RED] = (r, c)
            elif ch == "B":
                stands[BLUE] = (r, c)
    if RED not in stands or BLUE not in stands:
        raise MapError("map must contain exactly one R and one B flag stand")
    spawns = (
        tuple(tuple(p) for p in d["spawns"]["red"]),
        tuple(tuple(p) for p in d["spawns"]["blue"]),
    )
    return MapSpec(
        side=side,
        cells=cells,
        flag_stands=(stands[RED], stands[BLUE]),
        spawns=spawns,
        seed=int(d.get("seed", 0)),
    )


def save_map(spec: MapSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_json_dict(spec), f, indent=1)
        f.write("\n")


def load_map(path) -> MapSpec:
    with open(path, encoding="utf-8") as f:
        return from_json_dict(json.load(f))
