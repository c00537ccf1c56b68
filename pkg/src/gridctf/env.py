"""The capture-the-flag game state machine.

One tick processes, in order: respawn timers, tag cooldowns, turns, moves
(player-id order, blocked by walls and occupied cells), tag attempts
(player-id order, ray in the facing direction), then flag interactions
(return, then pick up, then capture).  All randomness is confined to
``outcome`` tie-breaking; stepping itself is deterministic.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .events import EventKind, GameEvent
from .maps import BLUE, RED, ROOM_BLUE, ROOM_RED, MapSpec, WALL

# Composite action space: move * 6 + turn * 2 + tag.
NUM_MOVES = 5  # noop, forward, backward, strafe-left, strafe-right
NUM_TURNS = 3  # none, left, right
NUM_TAGS = 2  # no, yes
NUM_ACTIONS = NUM_MOVES * NUM_TURNS * NUM_TAGS  # 30

MOVE_NOOP, MOVE_FORWARD, MOVE_BACKWARD, MOVE_STRAFE_LEFT, MOVE_STRAFE_RIGHT = range(5)
TURN_NONE, TURN_LEFT, TURN_RIGHT = range(3)

NORTH, EAST, SOUTH, WEST = range(4)
_DELTAS = ((-1, 0), (0, 1), (1, 0), (0, -1))

TAG_RANGE = 4
TAG_COOLDOWN = 5
RESPAWN_DELAY = 10
DEFAULT_EPISODE_LENGTH = 1000

EGO_WINDOW = 9
EGO_HALF = EGO_WINDOW // 2
# Window channels.
CH_WALL, CH_TEAMMATE, CH_OPPONENT, CH_OWN_FLAG, CH_OPP_FLAG, CH_OWN_BASE, CH_OPP_BASE, CH_CORRIDOR = range(8)
NUM_CHANNELS = 8
NUM_SCALARS = 10
SCORE_NORM = 5.0

FLAG_AT_BASE, FLAG_CARRIED, FLAG_STRAY = range(3)

MATCH_LOG_VERSION = 1


class EnvError(ValueError):
    """Invalid request against the game state machine."""


def encode_action(move: int, turn: int, tag: int) -> int:
    return move * 6 + turn * 2 + tag


def decode_action(index: int) -> tuple[int, int, int]:
    if not 0 <= index < NUM_ACTIONS:
        raise EnvError(f"action index {index} out of range [0, {NUM_ACTIONS})")
    return index // 6, (index % 6) // 2, index % 2


NOOP_ACTION = encode_action(MOVE_NOOP, TURN_NONE, 0)


@dataclass
class PlayerState:
    pid: int
    team: int
    pos: tuple[int, int] | None
    facing: int
    has_flag: bool = False
    respawn_timer: int = 0
    tag_cooldown: int = 0

    @property
    def respawning(self) -> bool:
        return self.respawn_timer > 0

    def copy(self) -> "PlayerState":
        return PlayerState(self.pid, self.team, self.pos, self.facing,
                           self.has_flag, self.respawn_timer, self.tag_cooldown)


@dataclass
class FlagState:
    """Where a team's own flag currently is."""

    status: int  # FLAG_AT_BASE / FLAG_CARRIED / FLAG_STRAY
    carrier: int | None = None
    cell: tuple[int, int] | None = None  # stray location

    def copy(self) -> "FlagState":
        return FlagState(self.status, self.carrier, self.cell)


@dataclass
class Observation:
    window: np.ndarray  # (EGO_WINDOW, EGO_WINDOW, NUM_CHANNELS) float32
    scalars: np.ndarray  # (NUM_SCALARS,) float32

    def flat(self) -> np.ndarray:
        return np.concatenate([self.window.reshape(-1), self.scalars])


OBS_DIM = EGO_WINDOW * EGO_WINDOW * NUM_CHANNELS + NUM_SCALARS


@dataclass
class GameState:
    map: MapSpec
    tick: int
    players: list[PlayerState]
    flags: list[FlagState]  # indexed by team
    captures: list[int]  # indexed by team
    rng: np.random.Generator
    episode_length: int = DEFAULT_EPISODE_LENGTH
    fog_of_war: bool = False
    spawn_cursor: list[int] = field(default_factory=lambda: [0, 0])

    @property
    def done(self) -> bool:
        return self.tick >= self.episode_length

    def player(self, pid: int) -> PlayerState:
        if not 0 <= pid < len(self.players):
            raise EnvError(f"no player with id {pid}")
        return self.players[pid]

    def team_players(self, team: int) -> list[PlayerState]:
        return [p for p in self.players if p.team == team]

    def copy(self) -> "GameState":
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return GameState(
            map=self.map,
            tick=self.tick,
            players=[p.copy() for p in self.players],
            flags=[f.copy() for f in self.flags],
            captures=list(self.captures),
            rng=rng,
            episode_length=self.episode_length,
            fog_of_war=self.fog_of_war,
            spawn_cursor=list(self.spawn_cursor),
        )

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(repr((
            self.tick,
            [(p.pid, p.team, p.pos, p.facing, p.has_flag, p.respawn_timer, p.tag_cooldown)
             for p in self.players],
            [(f.status, f.carrier, f.cell) for f in self.flags],
            self.captures,
            self.spawn_cursor,
            self.rng.bit_generator.state["state"],
        )).encode())
        return h.hexdigest()


def _facing_toward(pos: tuple[int, int], target: tuple[int, int]) -> int:
    dr, dc = target[0] - pos[0], target[1] - pos[1]
    if abs(dr) >= abs(dc):
        return NORTH if dr < 0 else SOUTH
    return WEST if dc < 0 else EAST


def new_game(
    map_spec: MapSpec,
    players_per_team: int,
    seed: int,
    *,
    episode_length: int = DEFAULT_EPISODE_LENGTH,
    fetch: bool = False,
    fog_of_war: bool = False,
) -> GameState:
    """Fresh game: flags at base, players on point-symmetric spawns, tick 0.

    ``fetch`` spawns only the red team; the blue flag still sits at its stand
    so the lone team can run flags unopposed.
    """
    from .maps import validate as validate_map

    if not 1 <= players_per_team <= 4:
        raise EnvError(f"players_per_team must be in [1, 4], got {players_per_team}")
    report = validate_map(map_spec, min_flag_distance=0)
    if not report.ok:
        raise EnvError("invalid map: " + "; ".join(report.failures))
    if players_per_team > len(map_spec.spawns[RED]):
        raise EnvError(f"map provides only {len(map_spec.spawns[RED])} spawns per team")

    players = []
    teams = (RED,) if fetch else (RED, BLUE)
    pid = 0
    for team in teams:
        enemy_stand = map_spec.flag_stands[1 - team]
        for j in range(players_per_team):
            pos = map_spec.spawns[team][j]
            players.append(PlayerState(pid=pid, team=team, pos=pos,
                                       facing=_facing_toward(pos, enemy_stand)))
            pid += 1

    flags = [FlagState(FLAG_AT_BASE), FlagState(FLAG_AT_BASE)]
    return GameState(
        map=map_spec,
        tick=0,
        players=players,
        flags=flags,
        captures=[0, 0],
        rng=np.random.default_rng(seed),
        episode_length=episode_length,
        fog_of_war=fog_of_war,
        spawn_cursor=[players_per_team, players_per_team],
    )


def flag_cell(state: GameState, team: int) -> tuple[int, int] | None:
    """Current cell of ``team``'s own flag; None while carried by a respawn edge."""
    f = state.flags[team]
    if f.status == FLAG_AT_BASE:
        return state.map.flag_stands[team]
    if f.status == FLAG_STRAY:
        return f.cell
    carrier = state.players[f.carrier]
    return carrier.pos


def _occupied(state: GameState, cell: tuple[int, int]) -> bool:
    return any(p.pos == cell for p in state.players)


def _respawn_player(state: GameState, p: PlayerState) -> bool:
    spawns = state.map.spawns[p.team]
    n = len(spawns)
    for k in range(n):
        cell = spawns[(state.spawn_cursor[p.team] + k) % n]
        if not _occupied(state, cell):
            p.pos = cell
            state.spawn_cursor[p.team] = (state.spawn_cursor[p.team] + k + 1) % n
            p.facing = _facing_toward(cell, state.map.flag_stands[1 - p.team])
            p.tag_cooldown = 0
            return True
    for cell in sorted(state.map.base_cells(p.team)):
        if not _occupied(state, cell):
            p.pos = cell
            p.facing = _facing_toward(cell, state.map.flag_stands[1 - p.team])
            p.tag_cooldown = 0
            return True
    return False  # base completely packed; retry next tick


def _tag_target(state: GameState, tagger: PlayerState) -> PlayerState | None:
    """Nearest player in the facing ray within range; opponents are hit,
    a teammate in the way blocks the shot, walls stop it."""
    dr, dc = _DELTAS[tagger.facing]
    r, c = tagger.pos
    by_pos = {p.pos: p for p in state.players if p.pos is not None and p.pid != tagger.pid}
    for _ in range(TAG_RANGE):
        r, c = r + dr, c + dc
        if state.map.is_wall(r, c):
            return None
        hit = by_pos.get((r, c))
        if hit is not None:
            return hit if hit.team != tagger.team else None
    return None


def step(
    state: GameState, actions: dict[int, int]
) -> tuple[GameState, dict[int, list[GameEvent]], bool]:
    """Advance one tick. Returns (new state, events per player, done)."""
    if state.done:
        raise EnvError("step called on a finished game")
    for pid in actions:
        if not 0 <= pid < len(state.players):
            raise EnvError(f"action for nonexistent player id {pid}")

    s = state.copy()
    tick = s.tick
    events: dict[int, list[GameEvent]] = {p.pid: [] for p in s.players}

    def emit(kind: EventKind, pid: int) -> None:
        events[pid].append(GameEvent(kind=kind, subject=pid, tick=tick))

    def emit_flag_event(actor: PlayerState, mine: EventKind, mate: EventKind, opp: EventKind) -> None:
        for p in s.players:
            if p.pid == actor.pid:
                emit(mine, p.pid)
            elif p.team == actor.team:
                emit(mate, p.pid)
            else:
                emit(opp, p.pid)

    # Respawns and cooldowns.
    for p in s.players:
        if p.respawn_timer > 0:
            p.respawn_timer -= 1
            if p.respawn_timer == 0 and not _respawn_player(s, p):
                p.respawn_timer = 1
        if p.tag_cooldown > 0:
            p.tag_cooldown -= 1

    live = [p for p in s.players if not p.respawning]

    # Turns, then movement in player-id order.
    decoded = {}
    for p in live:
        move, turn, tag = decode_action(actions.get(p.pid, NOOP_ACTION))
        decoded[p.pid] = (move, turn, tag)
        if turn == TURN_LEFT:
            p.facing = (p.facing - 1) % 4
        elif turn == TURN_RIGHT:
            p.facing = (p.facing + 1) % 4

    for p in live:
        move = decoded[p.pid][0]
        if move == MOVE_NOOP:
            continue
        if move == MOVE_FORWARD:
            d = _DELTAS[p.facing]
        elif move == MOVE_BACKWARD:
            d = _DELTAS[(p.facing + 2) % 4]
        elif move == MOVE_STRAFE_LEFT:
            d = _DELTAS[(p.facing - 1) % 4]
        else:
            d = _DELTAS[(p.facing + 1) % 4]
        dst = (p.pos[0] + d[0], p.pos[1] + d[1])
        if not s.map.is_wall(*dst) and not _occupied(s, dst):
            p.pos = dst

    # Tag attempts.
    for p in live:
        if not decoded[p.pid][2] or p.tag_cooldown > 0 or p.respawning:
            continue
        p.tag_cooldown = TAG_COOLDOWN
        victim = _tag_target(s, p)
        if victim is None:
            continue
        victim_had_flag = victim.has_flag
        if victim_had_flag:
            enemy_flag = s.flags[p.team]  # the flag the victim was carrying
            enemy_flag.status = FLAG_STRAY
            enemy_flag.carrier = None
            enemy_flag.cell = victim.pos
            victim.has_flag = False
        victim.pos = None
        victim.respawn_timer = RESPAWN_DELAY
        emit(EventKind.I_TAGGED_OPPONENT_WITH_FLAG if victim_had_flag
             else EventKind.I_TAGGED_OPPONENT_NO_FLAG, p.pid)
        emit(EventKind.I_TAGGED_WITH_FLAG if victim_had_flag
             else EventKind.I_TAGGED_NO_FLAG, victim.pid)

    # Flag interactions: return, then pick up, then capture.
    for p in s.players:
        if p.pos is None:
            continue
        own, opp = s.flags[p.team], s.flags[1 - p.team]
        if own.status == FLAG_STRAY and p.pos == own.cell:
            own.status = FLAG_AT_BASE
            own.cell = None
            emit_flag_event(p, EventKind.I_RETURNED_FLAG,
                            EventKind.TEAMMATE_RETURNED_FLAG,
                            EventKind.OPPONENTS_RETURNED_FLAG)
        opp_cell = (s.map.flag_stands[1 - p.team] if opp.status == FLAG_AT_BASE
                    else opp.cell if opp.status == FLAG_STRAY else None)
        if opp_cell is not None and p.pos == opp_cell and not p.has_flag:
            opp.status = FLAG_CARRIED
            opp.carrier = p.pid
            opp.cell = None
            p.has_flag = True
            emit_flag_event(p, EventKind.I_PICKED_UP_FLAG,
                            EventKind.TEAMMATE_PICKED_UP_FLAG,
                            EventKind.OPPONENTS_PICKED_UP_FLAG)
        if (p.has_flag and p.pos == s.map.flag_stands[p.team]
                and s.flags[p.team].status == FLAG_AT_BASE):
            s.captures[p.team] += 1
            opp.status = FLAG_AT_BASE
            opp.carrier = None
            opp.cell = None
            p.has_flag = False
            emit_flag_event(p, EventKind.I_CAPTURED_FLAG,
                            EventKind.TEAMMATE_CAPTURED_FLAG,
                            EventKind.OPPONENTS_CAPTURED_FLAG)

    s.tick += 1
    return s, events, s.done


def outcome(final: GameState, rng: np.random.Generator) -> tuple[int, int]:
    """Per-team result (red, blue) with 1 for win, 0 for loss.

    Equal captures pick a uniformly random winner; use ``match_y`` for the
    draw-preserving record that feeds rating fits.
    """
    if not final.done:
        raise EnvError("outcome requested before the game is done")
    if final.captures[RED] > final.captures[BLUE]:
        winner = RED
    elif final.captures[BLUE] > final.captures[RED]:
        winner = BLUE
    else:
        winner = int(rng.integers(0, 2))
    return (1, 0) if winner == RED else (0, 1)


def match_y(final: GameState) -> float:
    """Outcome for rating fits: 1 blue wins, 0 red wins, 1/2 for a draw."""
    if not final.done:
        raise EnvError("match_y requested before the game is done")
    if final.captures[BLUE] > final.captures[RED]:
        return 1.0
    if final.captures[RED] > final.captures[BLUE]:
        return 0.0
    return 0.5


@lru_cache(maxsize=256)
def _static_channels(map_spec: MapSpec, team: int) -> np.ndarray:
    """Padded static channels (wall, own base, opp base, corridor)."""
    side = map_spec.side
    p = EGO_HALF
    out = np.zeros((4, side + 2 * p, side + 2 * p), dtype=np.float32)
    out[0] = 1.0  # outside the map reads as wall
    cells = map_spec.cells
    own_code = ROOM_RED if team == RED else ROOM_BLUE
    opp_code = ROOM_BLUE if team == RED else ROOM_RED
    out[0, p:-p, p:-p] = cells == WALL
    out[1, p:-p, p:-p] = cells == own_code
    out[2, p:-p, p:-p] = cells == opp_code
    out[3, p:-p, p:-p] = cells == 4  # CORRIDOR
    return out


def _los_mask(map_spec: MapSpec, origin: tuple[int, int]) -> np.ndarray:
    """Window-sized visibility mask: a cell is visible when the straight ray
    from the origin reaches it without crossing a wall (walls themselves are
    visible)."""
    mask = np.zeros((EGO_WINDOW, EGO_WINDOW), dtype=np.float32)
    r0, c0 = origin
    for i in range(EGO_WINDOW):
        for j in range(EGO_WINDOW):
            tr, tc = r0 + i - EGO_HALF, c0 + j - EGO_HALF
            steps = max(abs(tr - r0), abs(tc - c0))
            visible = True
            for s_ in range(1, steps):
                rr = r0 + round((tr - r0) * s_ / steps)
                cc = c0 + round((tc - c0) * s_ / steps)
                if map_spec.is_wall(rr, cc):
                    visible = False
                    break
            if visible:
                mask[i, j] = 1.0
    return mask


def observe(state: GameState, pid: int) -> Observation:
    """Ego-centric facing-oriented window plus status scalars."""
    p = state.player(pid)
    scalars = np.zeros(NUM_SCALARS, dtype=np.float32)
    own, opp = state.flags[p.team], state.flags[1 - p.team]
    scalars[0] = float(p.has_flag)
    scalars[1 + own.status] = 1.0  # own flag: at base / carried / stray
    scalars[4 + opp.status] = 1.0
    diff = state.captures[p.team] - state.captures[1 - p.team]
    scalars[7] = float(np.clip(diff / SCORE_NORM, -1.0, 1.0))
    scalars[8] = (state.episode_length - state.tick) / state.episode_length
    scalars[9] = float(p.respawning)

    if p.respawning or p.pos is None:
        return Observation(
            window=np.zeros((EGO_WINDOW, EGO_WINDOW, NUM_CHANNELS), dtype=np.float32),
            scalars=scalars,
        )

    static = _static_channels(state.map, p.team)
    r, c = p.pos  # padded coords are (r, c) .. (r + 2*EGO_HALF, ...)
    sl = (slice(r, r + EGO_WINDOW), slice(c, c + EGO_WINDOW))
    window = np.zeros((NUM_CHANNELS, EGO_WINDOW, EGO_WINDOW), dtype=np.float32)
    window[CH_WALL] = static[0][sl]
    window[CH_OWN_BASE] = static[1][sl]
    window[CH_OPP_BASE] = static[2][sl]
    window[CH_CORRIDOR] = static[3][sl]

    def mark(channel: int, cell: tuple[int, int] | None) -> None:
        if cell is None:
            return
        wr, wc = cell[0] - r + EGO_HALF, cell[1] - c + EGO_HALF
        if 0 <= wr < EGO_WINDOW and 0 <= wc < EGO_WINDOW:
            window[channel, wr, wc] = 1.0

    for other in state.players:
        if other.pid == pid or other.pos is None:
            continue
        mark(CH_TEAMMATE if other.team == p.team else CH_OPPONENT, other.pos)
    mark(CH_OWN_FLAG, flag_cell(state, p.team))
    mark(CH_OPP_FLAG, flag_cell(state, 1 - p.team))

    if state.fog_of_war:
        window *= _los_mask(state.map, p.pos)[None, :, :]

    # Rotate so "forward" is the top row of the window.
    oriented = np.rot90(window, k=p.facing, axes=(1, 2))
    return Observation(window=np.ascontiguousarray(oriented.transpose(1, 2, 0)),
                       scalars=scalars)


def match_record(
    final: GameState,
    agent_ids: list,
    per_tick_events: list[GameEvent],
    map_seed: int,
    flagged: bool = False,
) -> dict:
    """Versioned JSON-safe record of one episode."""
    return {
        "version": MATCH_LOG_VERSION,
        "map_seed": int(map_seed),
        "map_side": final.map.side,
        "agent_ids": list(agent_ids),
        "teams": [p.team for p in final.players],
        "events": [[e.tick, int(e.kind), e.subject] for e in per_tick_events],
        "final_score": list(final.captures),
        "y": match_y(final),
        "flagged": bool(flagged),
    }


def replay_score(record: dict) -> list[int]:
    """Recompute the final score from the event log alone."""
    teams = record["teams"]
    score = [0, 0]
    for _tick, kind, subject in record["events"]:
        if kind == int(EventKind.I_CAPTURED_FLAG):
            score[teams[subject]] += 1
    return score
