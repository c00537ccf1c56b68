"""Scripted baseline bots, difficulty 1 (sloppy) to 5 (sharp).

Difficulty k replans every ``6 - k`` ticks and acts uniformly at random
with rate (0.5, 0.35, 0.2, 0.1, 0.0).  Bots know the static map, their own
state and the public flag situation; opponents are only seen through the
ego window, never through hidden state.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .env import (
    CH_OPPONENT,
    EGO_HALF,
    FLAG_AT_BASE,
    FLAG_CARRIED,
    FLAG_STRAY,
    MOVE_BACKWARD,
    MOVE_FORWARD,
    MOVE_NOOP,
    MOVE_STRAFE_LEFT,
    MOVE_STRAFE_RIGHT,
    NUM_ACTIONS,
    TAG_RANGE,
    TURN_LEFT,
    TURN_NONE,
    TURN_RIGHT,
    encode_action,
)
from .maps import MapSpec

RANDOM_RATES = {1: 0.5, 2: 0.35, 3: 0.2, 4: 0.1, 5: 0.0}


@dataclass
class BotView:
    """Everything a bot may legitimately see on one tick."""

    map: MapSpec
    pos: tuple[int, int] | None
    facing: int
    has_flag: bool
    respawning: bool
    team: int
    own_flag_status: int
    own_flag_cell: tuple[int, int] | None  # stray location, else None
    opp_flag_status: int
    opp_flag_cell: tuple[int, int] | None
    window: np.ndarray  # ego window, facing-oriented


@lru_cache(maxsize=4096)
def _distance_field(map_spec: MapSpec, goal: tuple[int, int]) -> np.ndarray:
    side = map_spec.side
    dist = np.full((side, side), np.iinfo(np.int32).max, dtype=np.int32)
    if map_spec.is_wall(*goal):
        return dist
    dist[goal] = 0
    frontier = [goal]
    while frontier:
        nxt = []
        for r, c in frontier:
            d = dist[r, c] + 1
            for nr, nc in ((r - 1, c), (r + 1, c), (r, c - 1), (r, c + 1)):
                if 0 <= nr < side and 0 <= nc < side and not map_spec.is_wall(nr, nc) and d < dist[nr, nc]:
                    dist[nr, nc] = d
                    nxt.append((nr, nc))
        frontier = nxt
    return dist


def _step_toward(map_spec: MapSpec, pos: tuple[int, int], goal: tuple[int, int]) -> int | None:
    """Direction index (N/E/S/W) of a shortest-path step, or None if there/stuck."""
    if pos == goal:
        return None
    dist = _distance_field(map_spec, goal)
    best_dir, best = None, dist[pos]
    deltas = ((-1, 0), (0, 1), (1, 0), (0, -1))
    for direction, (dr, dc) in enumerate(deltas):
        nr, nc = pos[0] + dr, pos[1] + dc
        if 0 <= nr < map_spec.side and 0 <= nc < map_spec.side and dist[nr, nc] < best:
            best, best_dir = dist[nr, nc], direction
    return best_dir


def _direction_to_components(direction: int | None, facing: int) -> tuple[int, int]:
    """Move toward ``direction`` while rotating the facing toward it.

    The engine applies the turn before the move, so the move component is
    chosen relative to the post-turn facing."""
    if direction is None:
        return MOVE_NOOP, TURN_NONE
    rel = (direction - facing) % 4
    turn = (TURN_NONE, TURN_RIGHT, TURN_RIGHT, TURN_LEFT)[rel]
    turned = (facing + (0, 1, 1, -1)[rel]) % 4
    rel_after = (direction - turned) % 4
    move = (MOVE_FORWARD, MOVE_STRAFE_RIGHT, MOVE_BACKWARD, MOVE_STRAFE_LEFT)[rel_after]
    return move, turn


def _opponent_ahead(window: np.ndarray) -> bool:
    col = window[:, EGO_HALF, CH_OPPONENT]
    ahead = col[max(0, EGO_HALF - TAG_RANGE) : EGO_HALF]
    return bool(ahead.any())


class ScriptedBot:
    """Stateful controller for one player slot."""

    def __init__(self, level: int, seed: int = 0):
        if level not in RANDOM_RATES:
            raise ValueError(f"bot level must be 1..5, got {level}")
        self.level = level
        self.replan_period = max(1, 6 - level)
        self.random_rate = RANDOM_RATES[level]
        self.rng = np.random.default_rng(seed)
        self._ticks = 0
        self._last_action = encode_action(MOVE_NOOP, TURN_NONE, 0)

    def reset(self) -> None:
        self._ticks = 0
        self._last_action = encode_action(MOVE_NOOP, TURN_NONE, 0)

    def _pick_goal(self, view: BotView) -> tuple[int, int] | None:
        own_stand = view.map.flag_stands[view.team]
        opp_stand = view.map.flag_stands[1 - view.team]
        if view.has_flag:
            return own_stand
        if view.own_flag_status == FLAG_STRAY and view.own_flag_cell is not None:
            return view.own_flag_cell
        if view.opp_flag_status == FLAG_AT_BASE:
            return opp_stand
        if view.opp_flag_status == FLAG_STRAY and view.opp_flag_cell is not None:
            return view.opp_flag_cell
        # Teammate is carrying (or the flag is in limbo): fall back to defence.
        return own_stand

    def act(self, view: BotView) -> int:
        self._ticks += 1
        if view.respawning or view.pos is None:
            return encode_action(MOVE_NOOP, TURN_NONE, 0)
        if self.rng.random() < self.random_rate:
            action = int(self.rng.integers(0, NUM_ACTIONS))
            self._last_action = action
            return action
        if (self._ticks - 1) % self.replan_period != 0:
            return self._last_action
        goal = self._pick_goal(view)
        direction = _step_toward(view.map, view.pos, goal) if goal else None
        move, turn = _direction_to_components(direction, view.facing)
        tag = 1 if _opponent_ahead(view.window) else 0
        action = encode_action(move, turn, tag)
        self._last_action = action
        return action
