"""Procedural indoor map generation.

Pipeline per attempt: place rectangular rooms on even-aligned edges, fill
the space between them with a recursive-backtracker maze, cut doors, prune
dead ends and horseshoe corridors, make the layout point-symmetric, pick
the base room by scanning from the top-left, place flags and spawns
symmetrically, check constraints, and finally rotate by a random multiple
of 90 degrees.  Constraint failures retry with a fresh sub-seed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .maps import (
    BLUE,
    CORRIDOR,
    RED,
    ROOM,
    ROOM_BLUE,
    ROOM_RED,
    WALL,
    MapSpec,
    reflect_coord,
    validate,
)

ROOM_SIDES = (3, 5, 7)  # interior side lengths; edges land on even cells
ROOM_DENSITY_TARGET = 0.40
MAX_SPAWNS = 4


class GenerationError(RuntimeError):
    """All retries exhausted; carries the last violated constraint."""


@dataclass(frozen=True)
class GenConfig:
    side: int = 13
    seed: int = 0
    min_flag_distance: int | None = None  # defaults to `side`
    max_retries: int = 64

    def __post_init__(self):
        if self.side % 2 == 0 or self.side < 9:
            raise ValueError(f"side must be odd and >= 9, got {self.side}")
        if self.max_retries < 1:
            raise ValueError("max_retries must be >= 1")


def _place_rooms(cells: np.ndarray, rng: np.random.Generator) -> list[tuple[int, int, int, int]]:
    """Carve random rooms; returns closed rects (r0, c0, r1, c1) of their walls."""
    side = cells.shape[0]
    target = ROOM_DENSITY_TARGET * side * side
    rects: list[tuple[int, int, int, int]] = []
    area = 0
    for _ in range(200):
        if area >= target:
            break
        ih = int(rng.choice(ROOM_SIDES))
        iw = int(rng.choice(ROOM_SIDES))
        max_r0, max_c0 = side - 2 - ih, side - 2 - iw
        if max_r0 < 0 or max_c0 < 0:
            continue
        r0 = 2 * int(rng.integers(0, max_r0 // 2 + 1))
        c0 = 2 * int(rng.integers(0, max_c0 // 2 + 1))
        rect = (r0, c0, r0 + ih + 1, c0 + iw + 1)
        if any(_rects_conflict(rect, old) for old in rects):
            continue
        rects.append(rect)
        cells[r0 + 1 : rect[2], c0 + 1 : rect[3]] = ROOM
        area += ih * iw
    return rects


def _rects_conflict(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> bool:
    # Interiors may not intersect the other rect; shared wall lines are fine.
    def inter_overlaps(inner, outer):
        r0, c0, r1, c1 = inner
        s0, t0, s1, t1 = outer
        return r0 + 1 <= s1 and s0 <= r1 - 1 and c0 + 1 <= t1 and t0 <= c1 - 1

    return inter_overlaps(a, b) or inter_overlaps(b, a)


def _carve_maze(cells: np.ndarray, rng: np.random.Generator) -> None:
    """Recursive backtracker over the odd-cell lattice outside the rooms."""
    side = cells.shape[0]
    nodes = [
        (r, c)
        for r in range(1, side, 2)
        for c in range(1, side, 2)
        if cells[r, c] == WALL
    ]
    visited: set[tuple[int, int]] = set()
    node_set = set(nodes)
    for start in nodes:
        if start in visited:
            continue
        visited.add(start)
        cells[start] = CORRIDOR
        stack = [start]
        while stack:
            r, c = stack[-1]
            options = []
            for dr, dc in ((-2, 0), (2, 0), (0, -2), (0, 2)):
                nxt = (r + dr, c + dc)
                mid = (r + dr // 2, c + dc // 2)
                if nxt in node_set and nxt not in visited and cells[mid] == WALL:
                    options.append((nxt, mid))
            if options:
                nxt, mid = options[rng.integers(0, len(options))]
                cells[mid] = CORRIDOR
                cells[nxt] = CORRIDOR
                visited.add(nxt)
                stack.append(nxt)
            else:
                stack.pop()


def _cut_doors(cells: np.ndarray, rects, rng: np.random.Generator) -> None:
    side = cells.shape[0]
    for r0, c0, r1, c1 in rects:
        candidates = []
        for c in range(c0 + 1, c1):
            for wall_r, out_r in ((r0, r0 - 1), (r1, r1 + 1)):
                if 0 <= out_r < side and cells[wall_r, c] == WALL and cells[out_r, c] != WALL:
                    candidates.append((wall_r, c))
        for r in range(r0 + 1, r1):
            for wall_c, out_c in ((c0, c0 - 1), (c1, c1 + 1)):
                if 0 <= out_c < side and cells[r, wall_c] == WALL and cells[r, out_c] != WALL:
                    candidates.append((r, wall_c))
        if not candidates:
            continue
        n_doors = min(len(candidates), 1 + int(rng.integers(0, 2)))
        for idx in rng.choice(len(candidates), size=n_doors, replace=False):
            cells[candidates[int(idx)]] = CORRIDOR


def _walkable_degree(cells: np.ndarray) -> np.ndarray:
    walk = cells != WALL
    deg = np.zeros(cells.shape, dtype=np.int32)
    deg[1:, :] += walk[:-1, :]
    deg[:-1, :] += walk[1:, :]
    deg[:, 1:] += walk[:, :-1]
    deg[:, :-1] += walk[:, 1:]
    return deg


def _room_regions(cells: np.ndarray) -> np.ndarray:
    """Label connected room regions; -1 elsewhere."""
    side = cells.shape[0]
    labels = -np.ones((side, side), dtype=np.int32)
    room_mask = (cells == ROOM) | (cells == ROOM_RED) | (cells == ROOM_BLUE)
    nxt = 0
    for r in range(side):
        for c in range(side):
            if room_mask[r, c] and labels[r, c] < 0:
                stack = [(r, c)]
                labels[r, c] = nxt
                while stack:
                    cr, cc = stack.pop()
                    for nr, nc in ((cr - 1, cc), (cr + 1, cc), (cr, cc - 1), (cr, cc + 1)):
                        if 0 <= nr < side and 0 <= nc < side and room_mask[nr, nc] and labels[nr, nc] < 0:
                            labels[nr, nc] = nxt
                            stack.append((nr, nc))
                nxt += 1
    return labels


def _prune(cells: np.ndarray) -> None:
    """Remove dead-end corridor cells and horseshoe corridor components.

    Both passes compute the full removal set before applying it, which keeps
    the operation point-symmetric when the input is.
    """
    side = cells.shape[0]
    changed = True
    while changed:
        changed = False
        # Dead ends: corridor cells with at most one walkable neighbour.
        while True:
            deg = _walkable_degree(cells)
            dead = (cells == CORRIDOR) & (deg <= 1)
            if not dead.any():
                break
            cells[dead] = WALL
            changed = True
        # Horseshoes: corridor components touching fewer than two distinct rooms.
        labels = _room_regions(cells)
        seen = np.zeros((side, side), dtype=bool)
        for r in range(side):
            for c in range(side):
                if cells[r, c] != CORRIDOR or seen[r, c]:
                    continue
                comp = [(r, c)]
                seen[r, c] = True
                rooms_touched: set[int] = set()
                stack = [(r, c)]
                while stack:
                    cr, cc = stack.pop()
                    for nr, nc in ((cr - 1, cc), (cr + 1, cc), (cr, cc - 1), (cr, cc + 1)):
                        if not (0 <= nr < side and 0 <= nc < side):
                            continue
                        if cells[nr, nc] == CORRIDOR and not seen[nr, nc]:
                            seen[nr, nc] = True
                            comp.append((nr, nc))
                            stack.append((nr, nc))
                        elif labels[nr, nc] >= 0:
                            rooms_touched.add(int(labels[nr, nc]))
                if len(rooms_touched) < 2:
                    for cell in comp:
                        cells[cell] = WALL
                    changed = True


def _symmetrize(cells: np.ndarray) -> None:
    """First half of the map concatenated with its own point reflection."""
    side = cells.shape[0]
    mid = side // 2
    for r in range(side):
        for c in range(side):
            if r > mid or (r == mid and c > mid):
                cells[r, c] = cells[side - 1 - r, side - 1 - c]


def _remove_unreachable(cells: np.ndarray, anchor: tuple[int, int]) -> None:
    side = cells.shape[0]
    reach = np.zeros((side, side), dtype=bool)
    if cells[anchor] == WALL:
        return
    reach[anchor] = True
    stack = [anchor]
    while stack:
        r, c = stack.pop()
        for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
            if 0 <= nr < side and 0 <= nc < side and cells[nr, nc] != WALL and not reach[nr, nc]:
                reach[nr, nc] = True
                stack.append((nr, nc))
    cells[(cells != WALL) & ~reach] = WALL


def _rotate_coord(side: int, rc: tuple[int, int], k: int) -> tuple[int, int]:
    r, c = rc
    for _ in range(k % 4):
        r, c = side - 1 - c, r  # matches np.rot90(m, 1)
    return (r, c)


def _attempt(cfg: GenConfig, rng: np.random.Generator) -> MapSpec:
    side = cfg.side
    cells = np.zeros((side, side), dtype=np.int8)

    rects = _place_rooms(cells, rng)
    if not rects:
        raise GenerationError("no rooms placed")
    _carve_maze(cells, rng)
    _cut_doors(cells, rects, rng)
    _symmetrize(cells)
    # Pruning after the mirror step: seam-crossing corridors only become
    # useful once the second half exists, and the passes preserve symmetry.
    _prune(cells)

    # Base room: first room region hit scanning row-major from the top-left.
    labels = _room_regions(cells)
    base_label = -1
    for r in range(side):
        for c in range(side):
            if labels[r, c] >= 0:
                base_label = int(labels[r, c])
                break
        if base_label >= 0:
            break
    if base_label < 0:
        raise GenerationError("no room survived pruning")

    red_cells = [(int(r), int(c)) for r, c in np.argwhere(labels == base_label)]
    blue_cells = [reflect_coord(side, p) for p in red_cells]
    if set(red_cells) & set(blue_cells):
        raise GenerationError("base room overlaps its own reflection")
    if labels[blue_cells[0]] < 0:
        raise GenerationError("reflected base is not a room")

    centroid = np.mean(np.array(red_cells, dtype=float), axis=0)
    by_centre = sorted(red_cells, key=lambda p: (abs(p[0] - centroid[0]) + abs(p[1] - centroid[1]), p))
    red_stand = by_centre[0]
    red_spawns = tuple(by_centre[1 : 1 + MAX_SPAWNS])
    if not red_spawns:
        raise GenerationError("base room too small for spawns")
    blue_stand = reflect_coord(side, red_stand)
    # Pair blue[i] with red[i] so the reflected map is equal element-wise.
    blue_spawns = tuple(reflect_coord(side, p) for p in red_spawns)

    for p in red_cells:
        cells[p] = ROOM_RED
    for p in blue_cells:
        cells[p] = ROOM_BLUE

    _remove_unreachable(cells, red_stand)

    spec = MapSpec(
        side=side,
        cells=cells,
        flag_stands=(red_stand, blue_stand),
        spawns=(red_spawns, blue_spawns),
        seed=cfg.seed,
    )
    report = validate(spec, min_flag_distance=cfg.min_flag_distance or cfg.side)
    if not report.ok:
        raise GenerationError("; ".join(report.failures))

    # Random rotation so absolute orientation carries no information.
    k = int(rng.integers(0, 4))
    if k:
        rot_cells = np.rot90(spec.cells, k).copy()
        spec = MapSpec(
            side=side,
            cells=rot_cells,
            flag_stands=(
                _rotate_coord(side, red_stand, k),
                _rotate_coord(side, blue_stand, k),
            ),
            spawns=(
                tuple(_rotate_coord(side, p, k) for p in red_spawns),
                tuple(_rotate_coord(side, p, k) for p in blue_spawns),
            ),
            seed=cfg.seed,
        )
    return spec


def generate_indoor(cfg: GenConfig) -> MapSpec:
    """Generate a valid indoor map; retries with fresh sub-seeds on failure."""
    last_error = "no attempts made"
    for attempt in range(cfg.max_retries):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=cfg.seed, spawn_key=(attempt,)))
        try:
            return _attempt(cfg, rng)
        except GenerationError as e:
            last_error = str(e)
    raise GenerationError(f"map generation failed after {cfg.max_retries} retries: {last_error}")
