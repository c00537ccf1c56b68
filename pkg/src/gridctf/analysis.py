"""Post-hoc interpretation: linear probes on hidden states, single selective
neurons, and behaviour fingerprints from clustered game-play windows.

Ground-truth binary features are computed from the full game state while
recording episodes (never from the agent's observation), then probed
against the recurrent state at five temporal offsets.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.metrics import roc_auc_score
from sklearn.mixture import GaussianMixture
from sklearn.model_selection import GroupKFold
from sklearn.tree import DecisionTreeClassifier

from .env import (
    CH_OPP_BASE,
    CH_OPP_FLAG,
    CH_OPPONENT,
    CH_OWN_BASE,
    CH_OWN_FLAG,
    CH_TEAMMATE,
    FLAG_AT_BASE,
    FLAG_CARRIED,
    FLAG_STRAY,
    RESPAWN_DELAY,
    GameState,
    flag_cell,
)
from .events import EventKind
from .maps import CORRIDOR, ROOM, ROOM_BLUE, ROOM_RED, MapSpec

PROBE_OFFSETS = (-20, -10, 0, 10, 20)
NEAR_DISTANCE = 4
BEHAVIOUR_WINDOW = 30
NUM_CLUSTERS = 32
DISTINCT_ACCURACY = 0.97


class AnalysisError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Ground-truth feature extraction

def _path_distances(map_spec: MapSpec, origin) -> np.ndarray:
    from .bots import _distance_field

    return _distance_field(map_spec, origin)


def _room_code(map_spec: MapSpec, cell, team: int) -> str:
    code = map_spec.cells[cell]
    own = ROOM_RED if team == 0 else ROOM_BLUE
    opp = ROOM_BLUE if team == 0 else ROOM_RED
    if code == own:
        return "own_base"
    if code == opp:
        return "opp_base"
    if code == CORRIDOR:
        return "corridor"
    if code == ROOM:
        return "neutral_room"
    return "wall"


PROBE_QUESTION_NAMES = [
    "i_have_flag", "own_flag_at_base", "own_flag_carried", "own_flag_stray",
    "opp_flag_at_base", "opp_flag_carried", "opp_flag_stray", "teammate_has_flag",
    "both_flags_stray", "i_am_respawning", "in_own_base", "in_opp_base",
    "in_corridor", "in_neutral_room", "near_own_base", "near_opp_base",
    "closer_to_own_base", "opponent_visible", "two_opponents_visible",
    "teammate_visible", "opponent_taggable_ahead", "carrying_near_home",
    "team_leading", "score_tied", "team_trailing", "late_game",
    "i_was_just_tagged", "on_own_stand", "on_opp_stand", "facing_opp_base",
    "teammate_respawning", "opponent_respawning", "flag_carrier_visible",
    "own_flag_in_view", "opp_flag_in_view", "teammate_same_room",
    "opponent_same_room", "teammate_near", "opponent_near", "in_centre_region",
]

BEHAVIOUR_FEATURE_NAMES = (
    [f"near_agent_{i}" for i in range(3)]
    + ["near_own_base", "near_opp_base", "near_own_flag", "near_opp_flag"]
    + [f"opp_{e}" for e in ("captured", "dropped", "picked", "returned")]
    + [f"me_{e}" for e in ("captured", "dropped", "picked", "returned")]
    + [f"mate_{e}" for e in ("captured", "dropped", "picked", "returned")]
    + ["i_tagged_with_flag", "i_tagged_no_flag", "tagged_with_flag", "tagged_no_flag"]
    + ["room_own_base", "room_opp_base", "room_corridor", "room_neutral"]
    + ["mate_visible", "one_opp_visible", "two_opp_visible"]
    + ["mate_same_room", "opp_same_room", "two_opp_same_room"]
    + ["own_base_visible", "opp_base_visible"]
    + ["own_flag_at_base", "own_flag_carried", "own_flag_stray"]
    + ["i_have_flag", "respawning"]
)

NUM_PROBE_QUESTIONS = len(PROBE_QUESTION_NAMES)
NUM_BEHAVIOUR_FEATURES = len(BEHAVIOUR_FEATURE_NAMES)


def _room_labels(map_spec: MapSpec) -> np.ndarray:
    """Connected walkable regions, used for 'same room' features."""
    side = map_spec.side
    labels = -np.ones((side, side), dtype=np.int32)
    nxt = 0
    for r in range(side):
        for c in range(side):
            if map_spec.cells[r, c] == 0 or labels[r, c] >= 0:  # WALL
                continue
            code = map_spec.cells[r, c]
            stack = [(r, c)]
            labels[r, c] = nxt
            while stack:
                cr, cc = stack.pop()
                for nr, nc in ((cr - 1, cc), (cr + 1, cc), (cr, cc - 1), (cr, cc + 1)):
                    if (0 <= nr < side and 0 <= nc < side and labels[nr, nc] < 0
                            and map_spec.cells[nr, nc] == code):
                        labels[nr, nc] = nxt
                        stack.append((nr, nc))
            nxt += 1
    return labels


def probe_features(state: GameState, pid: int, window: np.ndarray) -> np.ndarray:
    """The 40 binary probe questions for player ``pid`` at the current tick."""
    p = state.player(pid)
    team = p.team
    own, opp = state.flags[team], state.flags[1 - team]
    m = state.map
    out = np.zeros(NUM_PROBE_QUESTIONS, dtype=np.uint8)

    def setf(name: str, value) -> None:
        out[PROBE_QUESTION_NAMES.index(name)] = 1 if value else 0

    teammates = [q for q in state.players if q.team == team and q.pid != pid]
    opponents = [q for q in state.players if q.team != team]
    visible_opponents = int(window[:, :, CH_OPPONENT].sum())
    own_stand, opp_stand = m.flag_stands[team], m.flag_stands[1 - team]

    setf("i_have_flag", p.has_flag)
    setf("own_flag_at_base", own.status == FLAG_AT_BASE)
    setf("own_flag_carried", own.status == FLAG_CARRIED)
    setf("own_flag_stray", own.status == FLAG_STRAY)
    setf("opp_flag_at_base", opp.status == FLAG_AT_BASE)
    setf("opp_flag_carried", opp.status == FLAG_CARRIED)
    setf("opp_flag_stray", opp.status == FLAG_STRAY)
    setf("teammate_has_flag", opp.status == FLAG_CARRIED and opp.carrier != pid)
    setf("both_flags_stray", own.status == FLAG_STRAY and opp.status == FLAG_STRAY)
    setf("i_am_respawning", p.respawning)
    if p.pos is not None:
        room = _room_code(m, p.pos, team)
        setf("in_own_base", room == "own_base")
        setf("in_opp_base", room == "opp_base")
        setf("in_corridor", room == "corridor")
        setf("in_neutral_room", room == "neutral_room")
        d_own = _path_distances(m, own_stand)[p.pos]
        d_opp = _path_distances(m, opp_stand)[p.pos]
        setf("near_own_base", d_own <= NEAR_DISTANCE)
        setf("near_opp_base", d_opp <= NEAR_DISTANCE)
        setf("closer_to_own_base", d_own < d_opp)
        setf("carrying_near_home", p.has_flag and d_own <= NEAR_DISTANCE)
        setf("on_own_stand", p.pos == own_stand)
        setf("on_opp_stand", p.pos == opp_stand)
        dr = opp_stand[0] - p.pos[0]
        dc = opp_stand[1] - p.pos[1]
        dominant = (0 if dr < 0 else 2) if abs(dr) >= abs(dc) else (3 if dc < 0 else 1)
        setf("facing_opp_base", p.facing == dominant)
        labels = _room_labels(m)
        my_room = labels[p.pos]
        setf("teammate_same_room",
             any(q.pos is not None and labels[q.pos] == my_room for q in teammates))
        setf("opponent_same_room",
             any(q.pos is not None and labels[q.pos] == my_room for q in opponents))
        dists = [_path_distances(m, q.pos)[p.pos] for q in teammates if q.pos is not None]
        setf("teammate_near", any(d <= NEAR_DISTANCE for d in dists))
        odists = [_path_distances(m, q.pos)[p.pos] for q in opponents if q.pos is not None]
        setf("opponent_near", any(d <= NEAR_DISTANCE for d in odists))
        third = m.side // 3
        setf("in_centre_region",
             third <= p.pos[0] < m.side - third and third <= p.pos[1] < m.side - third)
    setf("opponent_visible", visible_opponents >= 1)
    setf("two_opponents_visible", visible_opponents >= 2)
    setf("teammate_visible", window[:, :, CH_TEAMMATE].sum() >= 1)
    from .env import EGO_HALF, TAG_RANGE

    ahead = window[max(0, EGO_HALF - TAG_RANGE) : EGO_HALF, EGO_HALF, CH_OPPONENT]
    setf("opponent_taggable_ahead", ahead.any())
    diff = state.captures[team] - state.captures[1 - team]
    setf("team_leading", diff > 0)
    setf("score_tied", diff == 0)
    setf("team_trailing", diff < 0)
    setf("late_game", state.tick > state.episode_length / 2)
    setf("i_was_just_tagged", p.respawn_timer == RESPAWN_DELAY)
    setf("teammate_respawning", any(q.respawning for q in teammates))
    setf("opponent_respawning", any(q.respawning for q in opponents))
    carrier_visible = False
    if own.status == FLAG_CARRIED:
        carrier = state.players[own.carrier]
        if carrier.pos is not None and p.pos is not None:
            carrier_visible = (abs(carrier.pos[0] - p.pos[0]) <= 4
                               and abs(carrier.pos[1] - p.pos[1]) <= 4)
    setf("flag_carrier_visible", carrier_visible)
    setf("own_flag_in_view", window[:, :, CH_OWN_FLAG].sum() >= 1)
    setf("opp_flag_in_view", window[:, :, CH_OPP_FLAG].sum() >= 1)
    return out


def behaviour_features(state: GameState, pid: int, window: np.ndarray, events) -> np.ndarray:
    """The 40 agent-centric behaviour features for one step."""
    p = state.player(pid)
    team = p.team
    m = state.map
    out = np.zeros(NUM_BEHAVIOUR_FEATURES, dtype=np.uint8)

    def setf(name: str, value) -> None:
        out[BEHAVIOUR_FEATURE_NAMES.index(name)] = 1 if value else 0

    others = [q for q in state.players if q.pid != pid]
    if p.pos is not None:
        for i, q in enumerate(others[:3]):
            if q.pos is not None:
                d = _path_distances(m, q.pos)[p.pos]
                setf(f"near_agent_{i}", d <= 2 * NEAR_DISTANCE)
        for name, target in (
            ("near_own_base", m.flag_stands[team]),
            ("near_opp_base", m.flag_stands[1 - team]),
            ("near_own_flag", flag_cell(state, team)),
            ("near_opp_flag", flag_cell(state, 1 - team)),
        ):
            if target is not None:
                setf(name, _path_distances(m, target)[p.pos] <= 2 * NEAR_DISTANCE)
        room = _room_code(m, p.pos, team)
        setf("room_own_base", room == "own_base")
        setf("room_opp_base", room == "opp_base")
        setf("room_corridor", room == "corridor")
        setf("room_neutral", room == "neutral_room")
        labels = _room_labels(m)
        my_room = labels[p.pos]
        mates = [q for q in others if q.team == team]
        opps = [q for q in others if q.team != team]
        setf("mate_same_room", any(q.pos is not None and labels[q.pos] == my_room for q in mates))
        opp_same = sum(1 for q in opps if q.pos is not None and labels[q.pos] == my_room)
        setf("opp_same_room", opp_same >= 1)
        setf("two_opp_same_room", opp_same >= 2)

    my_events = {int(e.kind) for e in events.get(pid, [])}
    setf("me_captured", int(EventKind.I_CAPTURED_FLAG) in my_events)
    setf("me_dropped", int(EventKind.I_TAGGED_WITH_FLAG) in my_events)
    setf("me_picked", int(EventKind.I_PICKED_UP_FLAG) in my_events)
    setf("me_returned", int(EventKind.I_RETURNED_FLAG) in my_events)
    setf("mate_captured", int(EventKind.TEAMMATE_CAPTURED_FLAG) in my_events)
    setf("mate_picked", int(EventKind.TEAMMATE_PICKED_UP_FLAG) in my_events)
    setf("mate_returned", int(EventKind.TEAMMATE_RETURNED_FLAG) in my_events)
    mate_dropped = any(
        int(EventKind.I_TAGGED_WITH_FLAG) in {int(e.kind) for e in events.get(q.pid, [])}
        for q in others if q.team == team
    )
    setf("mate_dropped", mate_dropped)
    setf("opp_captured", int(EventKind.OPPONENTS_CAPTURED_FLAG) in my_events)
    setf("opp_picked", int(EventKind.OPPONENTS_PICKED_UP_FLAG) in my_events)
    setf("opp_returned", int(EventKind.OPPONENTS_RETURNED_FLAG) in my_events)
    setf("opp_dropped", int(EventKind.I_TAGGED_OPPONENT_WITH_FLAG) in my_events
         or any(int(EventKind.I_TAGGED_OPPONENT_WITH_FLAG)
                in {int(e.kind) for e in events.get(q.pid, [])}
                for q in others if q.team == team))
    setf("i_tagged_with_flag", int(EventKind.I_TAGGED_OPPONENT_WITH_FLAG) in my_events)
    setf("i_tagged_no_flag", int(EventKind.I_TAGGED_OPPONENT_NO_FLAG) in my_events)
    setf("tagged_with_flag", int(EventKind.I_TAGGED_WITH_FLAG) in my_events)
    setf("tagged_no_flag", int(EventKind.I_TAGGED_NO_FLAG) in my_events)

    mates_visible = window[:, :, CH_TEAMMATE].sum()
    opps_visible = window[:, :, CH_OPPONENT].sum()
    setf("mate_visible", mates_visible >= 1)
    setf("one_opp_visible", opps_visible >= 1)
    setf("two_opp_visible", opps_visible >= 2)
    setf("own_base_visible", window[:, :, CH_OWN_BASE].sum() >= 1)
    setf("opp_base_visible", window[:, :, CH_OPP_BASE].sum() >= 1)
    own = state.flags[team]
    setf("own_flag_at_base", own.status == FLAG_AT_BASE)
    setf("own_flag_carried", own.status == FLAG_CARRIED)
    setf("own_flag_stray", own.status == FLAG_STRAY)
    setf("i_have_flag", p.has_flag)
    setf("respawning", p.respawning)
    return out


# ---------------------------------------------------------------------------
# Probe datasets and fitting

@dataclass
class EpisodeTrace:
    episode_id: int
    hidden: np.ndarray  # (T, H) float32, concat of slow and fast cores
    probe: np.ndarray  # (T, 40) uint8
    behaviour: np.ndarray  # (T, 40) uint8
    # the focal player's input stream, kept so other networks can be
    # replayed over the same episodes (control probes)
    obs_windows: np.ndarray | None = None  # (T, W, W, C) uint8
    obs_scalars: np.ndarray | None = None  # (T, S) float32
    prev_actions: np.ndarray | None = None  # (T,) int64
    prev_rewards: np.ndarray | None = None  # (T,) float32


@dataclass
class ProbeDataset:
    """Hidden states with 40 questions x 5 offsets = 200 labels."""

    hidden: np.ndarray  # (N, H)
    labels: np.ndarray  # (N, 200) int8, -1 where the offset is clipped
    episode_ids: np.ndarray  # (N,)
    feature_names: list[str] = field(default_factory=list)

    @staticmethod
    def feature_index(question: int, offset: int) -> int:
        return question * len(PROBE_OFFSETS) + PROBE_OFFSETS.index(offset)


def build_probe_dataset(traces: list[EpisodeTrace]) -> ProbeDataset:
    hidden, labels, episode_ids = [], [], []
    names = [f"{q}@{o:+d}" for q in PROBE_QUESTION_NAMES for o in PROBE_OFFSETS]
    for trace in traces:
        t_len = trace.hidden.shape[0]
        lab = -np.ones((t_len, NUM_PROBE_QUESTIONS * len(PROBE_OFFSETS)), dtype=np.int8)
        for q in range(NUM_PROBE_QUESTIONS):
            for oi, off in enumerate(PROBE_OFFSETS):
                idx = q * len(PROBE_OFFSETS) + oi
                src = np.arange(t_len) + off
                ok = (src >= 0) & (src < t_len)
                lab[ok, idx] = trace.probe[src[ok], q]
        hidden.append(trace.hidden)
        labels.append(lab)
        episode_ids.append(np.full(t_len, trace.episode_id))
    return ProbeDataset(
        hidden=np.concatenate(hidden),
        labels=np.concatenate(labels),
        episode_ids=np.concatenate(episode_ids),
        feature_names=names,
    )


def fit_probe(dataset: ProbeDataset, feature_index: int, folds: int = 3,
              seed: int = 0) -> float | None:
    """Class-balanced logistic probe, episode-wise cross-validated AUCROC.

    Returns None when a fold lacks both classes (undefined feature)."""
    valid = dataset.labels[:, feature_index] >= 0
    x = dataset.hidden[valid]
    y = dataset.labels[valid, feature_index].astype(int)
    groups = dataset.episode_ids[valid]
    if len(np.unique(y)) < 2:
        return None
    if len(np.unique(groups)) < folds:
        return None
    aucs = []
    for train_idx, test_idx in GroupKFold(n_splits=folds).split(x, y, groups):
        if len(np.unique(y[train_idx])) < 2 or len(np.unique(y[test_idx])) < 2:
            return None
        # effectively unregularised: separable features must reach AUC 1.0
        clf = LogisticRegression(class_weight="balanced", max_iter=2000, C=1e4)
        clf.fit(x[train_idx], y[train_idx])
        scores = clf.decision_function(x[test_idx])
        aucs.append(roc_auc_score(y[test_idx], scores))
    return float(np.mean(aucs))


@dataclass
class SelectiveNeuron:
    neuron: int
    threshold: float
    accuracy: float
    is_distinct: bool


def selective_neuron(hidden: np.ndarray, labels: np.ndarray) -> SelectiveNeuron:
    """Depth-1 Gini stump over individual hidden dimensions."""
    tree = DecisionTreeClassifier(max_depth=1, criterion="gini", random_state=0)
    tree.fit(hidden, labels)
    acc = float(tree.score(hidden, labels))
    neuron = int(tree.tree_.feature[0]) if tree.tree_.node_count > 1 else -1
    threshold = float(tree.tree_.threshold[0]) if tree.tree_.node_count > 1 else 0.0
    return SelectiveNeuron(neuron=neuron, threshold=threshold, accuracy=acc,
                           is_distinct=acc > DISTINCT_ACCURACY)


# ---------------------------------------------------------------------------
# Behaviour clustering

def behaviour_windows(trace: EpisodeTrace) -> np.ndarray:
    """Non-overlapping windows of 30 steps, shape (n, 30, K)."""
    t_len = trace.behaviour.shape[0]
    n = t_len // BEHAVIOUR_WINDOW
    if n == 0:
        return np.zeros((0, BEHAVIOUR_WINDOW, NUM_BEHAVIOUR_FEATURES), dtype=np.uint8)
    return trace.behaviour[: n * BEHAVIOUR_WINDOW].reshape(n, BEHAVIOUR_WINDOW, -1)


def embed_windows(windows: np.ndarray) -> np.ndarray:
    """Mean-pooled features plus last-first deltas (2K dims per window)."""
    mean = windows.mean(axis=1)
    delta = windows[:, -1].astype(np.float64) - windows[:, 0].astype(np.float64)
    return np.concatenate([mean, delta], axis=1)


def fit_behaviour_model(traces: list[EpisodeTrace], n_components: int = NUM_CLUSTERS,
                        seed: int = 0) -> GaussianMixture:
    windows = np.concatenate([behaviour_windows(t) for t in traces])
    if windows.shape[0] < n_components:
        raise AnalysisError(
            f"{windows.shape[0]} windows cannot support {n_components} mixture components")
    emb = embed_windows(windows)
    gmm = GaussianMixture(n_components=n_components, covariance_type="diag",
                          n_init=10, random_state=seed, reg_covar=1e-4)
    gmm.fit(emb)
    return gmm


def behaviour_fingerprint(traces: list[EpisodeTrace], model: GaussianMixture) -> np.ndarray:
    """Per-episode normalised cluster histograms, averaged over episodes."""
    try:
        n_components = model.n_components
        _ = model.means_
    except AttributeError as e:
        raise AnalysisError("behaviour model is not fitted") from e
    hists = []
    for trace in traces:
        windows = behaviour_windows(trace)
        if windows.shape[0] == 0:
            continue
        assign = model.predict(embed_windows(windows))
        h = np.bincount(assign, minlength=n_components).astype(np.float64)
        hists.append(h / h.sum())
    if not hists:
        raise AnalysisError("no behaviour windows in the supplied episodes")
    return np.mean(hists, axis=0)


def hellinger(p: np.ndarray, q: np.ndarray) -> float:
    """sqrt(1 - sum(sqrt(p q))) over two normalised histograms."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise AnalysisError("histogram shapes differ")
    for h in (p, q):
        if np.any(h < -1e-12) or abs(h.sum() - 1.0) > 1e-6:
            raise AnalysisError("hellinger expects normalised histograms")
    bc = np.sum(np.sqrt(np.clip(p, 0, None) * np.clip(q, 0, None)))
    return float(np.sqrt(max(0.0, 1.0 - bc)))


# ---------------------------------------------------------------------------
# Episode recording and on-disk format

def record_episodes(
    params,
    n_episodes: int,
    seed: int = 0,
    map_side: int = 13,
    episode_length: int = 1000,
    opponent_level: int = 3,
    tau: int | None = None,
    out_dir: str | None = None,
) -> list[EpisodeTrace]:
    """Play the agent (two copies) against two scripted bots and record the
    focal player's hidden states and ground-truth features each tick."""
    from .env import new_game, observe, step
    from .harness import BotController, PolicyController, REWARD_QUAKE
    from .mapgen import GenConfig, generate_indoor

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(11,)))
    traces = []
    for ep in range(n_episodes):
        map_spec = generate_indoor(GenConfig(side=map_side, seed=int(rng.integers(0, 2**63 - 1))))
        controllers = [
            PolicyController(agent_id=0, params=params, tau=tau or params.cfg.tau,
                             reward_source=REWARD_QUAKE, greedy=False, collect=False),
            PolicyController(agent_id=0, params=params, tau=tau or params.cfg.tau,
                             reward_source=REWARD_QUAKE, greedy=False, collect=False),
            BotController(opponent_level, seed=int(rng.integers(0, 2**31))),
            BotController(opponent_level, seed=int(rng.integers(0, 2**31))),
        ]
        state = new_game(map_spec, 2, int(rng.integers(0, 2**63 - 1)),
                         episode_length=episode_length)
        for pid, ctrl in enumerate(controllers):
            ctrl.begin(pid, state.players[pid].team, np.random.default_rng(rng.integers(0, 2**63 - 1)))
        hidden, probe, behaviour = [], [], []
        obs_windows, obs_scalars, prev_actions, prev_rewards = [], [], [], []
        done = False
        while not done:
            focal = controllers[0]
            obs0 = observe(state, 0)
            obs_windows.append(obs0.window.astype(np.uint8))
            obs_scalars.append(obs0.scalars.copy())
            prev_actions.append(focal.prev_action)
            prev_rewards.append(focal.prev_reward)
            actions = {pid: ctrl.act(state) for pid, ctrl in enumerate(controllers)}
            h_parts = [focal.state.h_fast.data[0]]
            if focal.state.h_slow is not None:
                h_parts.insert(0, focal.state.h_slow.data[0])
            hidden.append(np.concatenate(h_parts).astype(np.float32))
            pre_state = state
            state, events, done = step(state, actions)
            for pid, ctrl in enumerate(controllers):
                ctrl.observe_result(events[pid], done, None if not done else (0, 0), state)
            # Features describe the state the recorded hidden state has seen.
            probe.append(probe_features(pre_state, 0, window=obs0.window))
            behaviour.append(behaviour_features(pre_state, 0, obs0.window, events))
        traces.append(EpisodeTrace(
            episode_id=ep,
            hidden=np.stack(hidden),
            probe=np.stack(probe),
            behaviour=np.stack(behaviour),
            obs_windows=np.stack(obs_windows),
            obs_scalars=np.stack(obs_scalars),
            prev_actions=np.array(prev_actions, dtype=np.int64),
            prev_rewards=np.array(prev_rewards, dtype=np.float32),
        ))
    if out_dir is not None:
        save_traces(traces, out_dir)
    return traces


def replay_hidden(params, trace: EpisodeTrace, tau: int | None = None,
                  seed: int = 0) -> np.ndarray:
    """Run a (different) network over a recorded episode's input stream and
    return its hidden states, aligned step-for-step with ``trace.hidden``.

    Latent noise is drawn from a fixed seed; hidden states do not depend on
    the replayed network's action choices because the recorded actions and
    rewards are fed back instead."""
    from .agent import fast_step, obs_to_arrays, reset_state

    if trace.obs_windows is None:
        raise AnalysisError("trace was recorded without observations; cannot replay")
    rng = np.random.default_rng(seed)
    state = reset_state(params.cfg, batch=1, dtype=np.float32, tau=tau)
    out = np.zeros((trace.obs_windows.shape[0],
                    (params.cfg.slow_hidden if params.cfg.variant == "FTW" else 0)
                    + params.cfg.fast_hidden), dtype=np.float32)
    for t in range(trace.obs_windows.shape[0]):
        flat = obs_to_arrays(trace.obs_windows[t], trace.obs_scalars[t], dtype=np.float32)
        _, _, state = fast_step(params, state, flat,
                                int(trace.prev_actions[t]), float(trace.prev_rewards[t]), rng)
        parts = [state.h_fast.data[0]]
        if state.h_slow is not None:
            parts.insert(0, state.h_slow.data[0])
        out[t] = np.concatenate(parts)
    return out


def with_hidden(trace: EpisodeTrace, hidden: np.ndarray) -> EpisodeTrace:
    """Same episode and labels, different network's hidden states."""
    return EpisodeTrace(
        episode_id=trace.episode_id, hidden=hidden,
        probe=trace.probe, behaviour=trace.behaviour,
        obs_windows=trace.obs_windows, obs_scalars=trace.obs_scalars,
        prev_actions=trace.prev_actions, prev_rewards=trace.prev_rewards,
    )


def save_traces(traces: list[EpisodeTrace], out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "probe_questions": PROBE_QUESTION_NAMES,
        "behaviour_features": BEHAVIOUR_FEATURE_NAMES,
        "offsets": list(PROBE_OFFSETS),
    }
    with open(os.path.join(out_dir, "features.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1)
    for trace in traces:
        arrays = {"hidden": trace.hidden, "probe": trace.probe, "behaviour": trace.behaviour}
        if trace.obs_windows is not None:
            arrays.update(obs_windows=trace.obs_windows, obs_scalars=trace.obs_scalars,
                          prev_actions=trace.prev_actions, prev_rewards=trace.prev_rewards)
        np.savez_compressed(
            os.path.join(out_dir, f"episode_{trace.episode_id:05d}.npz"), **arrays)


def load_traces(in_dir: str) -> list[EpisodeTrace]:
    traces = []
    for name in sorted(os.listdir(in_dir)):
        if not name.startswith("episode_") or not name.endswith(".npz"):
            continue
        data = np.load(os.path.join(in_dir, name))
        traces.append(EpisodeTrace(
            episode_id=int(name[8:13]),
            hidden=data["hidden"], probe=data["probe"], behaviour=data["behaviour"],
            obs_windows=data.get("obs_windows"), obs_scalars=data.get("obs_scalars"),
            prev_actions=data.get("prev_actions"), prev_rewards=data.get("prev_rewards"),
        ))
    if not traces:
        raise AnalysisError(f"no episode files found in {in_dir}")
    return traces
