"""The 13 scoring events of the game and their fixed point values.

Every event is emitted from the point of view of a single player ("I" /
"teammate" / "opponents").  Each kind carries a fixed sign (+1 for things
that are good for the player's team, -1 for bad ones) and the classic
Quake point value used by the reward-shaping baselines.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum


class EventKind(IntEnum):
    I_TAGGED_WITH_FLAG = 1
    I_TAGGED_NO_FLAG = 2
    I_CAPTURED_FLAG = 3
    I_PICKED_UP_FLAG = 4
    I_RETURNED_FLAG = 5
    TEAMMATE_CAPTURED_FLAG = 6
    TEAMMATE_PICKED_UP_FLAG = 7
    TEAMMATE_RETURNED_FLAG = 8
    I_TAGGED_OPPONENT_WITH_FLAG = 9
    I_TAGGED_OPPONENT_NO_FLAG = 10
    OPPONENTS_CAPTURED_FLAG = 11
    OPPONENTS_PICKED_UP_FLAG = 12
    OPPONENTS_RETURNED_FLAG = 13


NUM_EVENT_KINDS = 13

# Sign of each event kind, indexed by EventKind value.
_SIGNS = {
    EventKind.I_TAGGED_WITH_FLAG: -1,
    EventKind.I_TAGGED_NO_FLAG: -1,
    EventKind.I_CAPTURED_FLAG: +1,
    EventKind.I_PICKED_UP_FLAG: +1,
    EventKind.I_RETURNED_FLAG: +1,
    EventKind.TEAMMATE_CAPTURED_FLAG: +1,
    EventKind.TEAMMATE_PICKED_UP_FLAG: +1,
    EventKind.TEAMMATE_RETURNED_FLAG: +1,
    EventKind.I_TAGGED_OPPONENT_WITH_FLAG: +1,
    EventKind.I_TAGGED_OPPONENT_NO_FLAG: +1,
    EventKind.OPPONENTS_CAPTURED_FLAG: -1,
    EventKind.OPPONENTS_PICKED_UP_FLAG: -1,
    EventKind.OPPONENTS_RETURNED_FLAG: -1,
}

# Default Quake point scheme, used verbatim by the reward-shaping baselines.
_QUAKE_WEIGHTS = {
    EventKind.I_TAGGED_WITH_FLAG: 0.0,
    EventKind.I_TAGGED_NO_FLAG: 0.0,
    EventKind.I_CAPTURED_FLAG: 6.0,
    EventKind.I_PICKED_UP_FLAG: 1.0,
    EventKind.I_RETURNED_FLAG: 1.0,
    EventKind.TEAMMATE_CAPTURED_FLAG: 5.0,
    EventKind.TEAMMATE_PICKED_UP_FLAG: 0.0,
    EventKind.TEAMMATE_RETURNED_FLAG: 0.0,
    EventKind.I_TAGGED_OPPONENT_WITH_FLAG: 2.0,
    EventKind.I_TAGGED_OPPONENT_NO_FLAG: 1.0,
    EventKind.OPPONENTS_CAPTURED_FLAG: 0.0,
    EventKind.OPPONENTS_PICKED_UP_FLAG: 0.0,
    EventKind.OPPONENTS_RETURNED_FLAG: 0.0,
}


def event_points(kind: EventKind) -> int:
    """Signed unit value of an event kind (+1 or -1)."""
    kind = EventKind(kind)
    return _SIGNS[kind]


def quake_weight(kind: EventKind) -> float:
    """Classic Quake point value for reward shaping."""
    kind = EventKind(kind)
    return _QUAKE_WEIGHTS[kind]


def sign_vector():
    """All 13 signs as a list indexed by kind-1."""
    return [_SIGNS[EventKind(i)] for i in range(1, NUM_EVENT_KINDS + 1)]


def quake_vector():
    """All 13 Quake weights as a list indexed by kind-1."""
    return [_QUAKE_WEIGHTS[EventKind(i)] for i in range(1, NUM_EVENT_KINDS + 1)]


@dataclass(frozen=True)
class GameEvent:
    """A single scoring event, attributed to one player at one tick."""

    kind: EventKind
    subject: int
    tick: int

    def points(self) -> int:
        return event_points(self.kind)
