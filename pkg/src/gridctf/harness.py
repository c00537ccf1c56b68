"""Arena/learner orchestration: training runs, tournaments, fetch evaluation.

Games are played by per-slot controllers (policy networks or scripted
bots).  A training run repeatedly samples a focal agent, assembles a game
through matchmaking, plays it on a freshly generated map, feeds the
resulting trajectories to that agent's learner, updates Elo estimates from
the match record, and lets the population controller replace losers.
Everything that varies per game derives from (master seed, game index), so
a serialized single-worker run is bit-reproducible and resumable.
"""

from __future__ import annotations

import io
import json
import struct
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import agent as agent_mod
from . import learner as learner_mod
from . import nn
from .agent import AgentConfig, AgentParams, VARIANT_FTW, VARIANT_NO_TH
from .bots import BotView, ScriptedBot
from .env import (
    EGO_WINDOW,
    FLAG_STRAY,
    NUM_CHANNELS,
    NUM_SCALARS,
    GameState,
    flag_cell,
    match_record,
    match_y,
    new_game,
    observe,
    outcome,
    step,
)
from .events import quake_vector
from .learner import Learner, LossWeights, RewardPredReplay, ReplaySequence, Trajectory, reward_label
from .mapgen import GenConfig, generate_indoor
from .maps import MapSpec, from_json_dict, to_json_dict
from .population import (
    DEFAULT_BURN_IN_GAMES,
    ENTROPY_COST_RANGE,
    FAST_TO_SLOW_RANGE,
    KL_POSTERIOR_PRIOR_RANGE,
    KL_PRIOR_REG_RANGE,
    LEARNING_RATE_RANGE,
    REWARD_PRED_RANGE,
    HyperParams,
    InternalReward,
    PopulationRecord,
    explore,
    init_rewards,
    matchmake,
    pbt_step,
    sample_hyperparams,
)
from .rating import MatchRecord, Ratings, fit, make_record, win_prob

REWARD_OUTCOME = "outcome"
REWARD_QUAKE = "quake"
REWARD_EVOLVED = "evolved"

VARIANT_SELF_PLAY = "SelfPlay"
VARIANT_SELF_PLAY_RS = "SelfPlay+RS"
VARIANT_PBT_RS = "PBT+RS"
VARIANT_FTW_NO_TH = "FTW-TH"
VARIANT_FULL_FTW = "FTW"


@dataclass(frozen=True)
class VariantSpec:
    temporal_hierarchy: bool
    reward_source: str
    population_based: bool  # matchmaking + Elo + PBT


VARIANTS = {
    VARIANT_SELF_PLAY: VariantSpec(False, REWARD_OUTCOME, False),
    VARIANT_SELF_PLAY_RS: VariantSpec(False, REWARD_QUAKE, False),
    VARIANT_PBT_RS: VariantSpec(False, REWARD_QUAKE, True),
    VARIANT_FTW_NO_TH: VariantSpec(False, REWARD_EVOLVED, True),
    VARIANT_FULL_FTW: VariantSpec(True, REWARD_EVOLVED, True),
}

ELO_K = 32.0
CHECKPOINT_MAGIC = b"GCTFCK01"


def _geometric_mid(lo: float, hi: float) -> float:
    return float(np.sqrt(lo * hi))


def median_hyperparams() -> HyperParams:
    """Geometric midpoint of every sampling range; used by the single-agent
    variants, which have no population to evolve away an unlucky draw."""
    return HyperParams(
        learning_rate=_geometric_mid(*LEARNING_RATE_RANGE),
        entropy_cost=_geometric_mid(*ENTROPY_COST_RANGE),
        reward_pred_weight=_geometric_mid(*REWARD_PRED_RANGE),
        kl_posterior_prior=_geometric_mid(*KL_POSTERIOR_PRIOR_RANGE),
        kl_prior_reg=_geometric_mid(*KL_PRIOR_REG_RANGE),
        fast_to_slow_scale=_geometric_mid(*FAST_TO_SLOW_RANGE),
        tau=12,
    )


class HarnessError(ValueError):
    pass


@dataclass
class TrainConfig:
    variant: str = VARIANT_FULL_FTW
    population_size: int = 8
    team_size: int = 2
    episode_length: int = 1000
    total_games: int = 100
    arena_workers: int = 1
    map_sides: tuple[int, ...] = (13,)
    master_seed: int = 0
    unroll_length: int = 100
    batch_size: int = 32
    queue_capacity: int = 64
    burn_in_games: int = DEFAULT_BURN_IN_GAMES
    elo_refit_interval: int = 100
    encoder_widths: tuple[int, ...] = (128, 64)
    fast_hidden: int = 128
    slow_hidden: int = 128
    latent_dim: int = 32
    head_hidden: int = 64
    metrics_path: str | None = None
    match_log_path: str | None = None
    checkpoint_path: str | None = None
    checkpoint_interval: int = 0  # games; 0 disables periodic checkpoints

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise HarnessError(f"unknown variant {self.variant!r}; choose from {sorted(VARIANTS)}")
        if not VARIANTS[self.variant].population_based and self.population_size != 1:
            raise HarnessError(f"{self.variant} trains a single agent; set population_size = 1")
        if VARIANTS[self.variant].population_based and self.population_size < 4:
            raise HarnessError("population-based variants need population_size >= 4")
        if not 1 <= self.team_size <= 4:
            raise HarnessError("team_size must be in [1, 4]")
        if VARIANTS[self.variant].population_based and self.team_size != 2:
            raise HarnessError("matchmaking assembles 2v2 games; population training needs team_size = 2")
        self.map_sides = tuple(self.map_sides)
        self.encoder_widths = tuple(self.encoder_widths)

    @property
    def spec(self) -> VariantSpec:
        return VARIANTS[self.variant]

    def agent_config(self) -> AgentConfig:
        return AgentConfig(
            variant=VARIANT_FTW if self.spec.temporal_hierarchy else VARIANT_NO_TH,
            encoder_widths=self.encoder_widths,
            fast_hidden=self.fast_hidden,
            slow_hidden=self.slow_hidden,
            latent_dim=self.latent_dim,
            head_hidden=self.head_hidden,
        )


# ---------------------------------------------------------------------------
# Seed derivation: everything per-game comes from (master_seed, game index).

_DOMAIN_AGENT_INIT = 1
_DOMAIN_GAME_SETUP = 2
_DOMAIN_CONTROL = 3
_DOMAIN_GAME_EXEC = 4


def _setup_rng(master_seed: int, game_idx: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(_DOMAIN_GAME_SETUP, game_idx))
    return np.random.default_rng(ss)


def _exec_rngs(master_seed: int, game_idx: int, n: int) -> list[np.random.Generator]:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(_DOMAIN_GAME_EXEC, game_idx))
    return [np.random.default_rng(c) for c in ss.spawn(n)]


def _agent_init_rng(master_seed: int, agent_id: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(_DOMAIN_AGENT_INIT, agent_id))
    return np.random.default_rng(ss)


def _control_rng(master_seed: int, which: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=(_DOMAIN_CONTROL, which))
    return np.random.default_rng(ss)


# ---------------------------------------------------------------------------
# Controllers

class TrajectoryBuilder:
    """Accumulates one player's steps and cuts fixed-length unrolls."""

    def __init__(self, unroll: int, latent_dim: int, agent_id: int, policy_version: int):
        self.unroll = unroll
        self.latent_dim = latent_dim
        self.agent_id = agent_id
        self.policy_version = policy_version
        self.steps: list[dict] = []
        self.init_state: dict | None = None
        self.out: list[Trajectory] = []

    def begin_window(self, state_arrays: dict) -> None:
        self.init_state = state_arrays
        self.steps = []

    def add_step(self, **kw) -> None:
        self.steps.append(kw)

    def _finalize(self, bootstrap: dict) -> Trajectory:
        t, u = len(self.steps), self.unroll
        w = EGO_WINDOW
        windows = np.zeros((u + 1, w, w, NUM_CHANNELS), dtype=np.uint8)
        scalars = np.zeros((u + 1, NUM_SCALARS), dtype=np.float32)
        prev_actions = np.full(u + 1, -1, dtype=np.int64)
        prev_rewards = np.zeros(u + 1, dtype=np.float32)
        actions = np.zeros(u, dtype=np.int64)
        rewards = np.zeros(u, dtype=np.float32)
        lps = np.zeros(u, dtype=np.float32)
        vals = np.zeros(u, dtype=np.float32)
        dones = np.zeros(u, dtype=bool)
        mask = np.zeros(u, dtype=np.float32)
        noise = np.zeros((u + 1, self.latent_dim), dtype=np.float32)
        post_stats = np.zeros((u, 2 * self.latent_dim), dtype=np.float32)
        prior_stats = np.zeros((u, 2 * self.latent_dim), dtype=np.float32)
        for i, s in enumerate(self.steps):
            windows[i] = s["window"]
            scalars[i] = s["scalars"]
            prev_actions[i] = s["prev_action"]
            prev_rewards[i] = s["prev_reward"]
            actions[i] = s["action"]
            rewards[i] = s["reward"]
            lps[i] = s["log_prob"]
            vals[i] = s["value"]
            dones[i] = s["done"]
            mask[i] = 1.0
            noise[i] = s["noise"]
            post_stats[i] = s["posterior"]
            if s["prior"] is not None:
                prior_stats[i] = s["prior"]
        windows[t] = bootstrap["window"]
        scalars[t] = bootstrap["scalars"]
        prev_actions[t] = bootstrap["prev_action"]
        prev_rewards[t] = bootstrap["prev_reward"]
        noise[t] = bootstrap["noise"]
        traj = Trajectory(
            length=t, windows=windows, scalars=scalars, prev_actions=prev_actions,
            prev_rewards=prev_rewards, actions=actions, rewards=rewards,
            behavior_log_probs=lps, behavior_values=vals, dones=dones, mask=mask,
            latent_noise=noise, init_state=self.init_state,
            policy_version=self.policy_version, agent_id=self.agent_id,
            posterior_stats=post_stats, prior_stats=prior_stats,
        )
        self.out.append(traj)
        return traj

    def on_new_step_start(self, state_arrays: dict, bootstrap: dict) -> None:
        """Cut a full window using the upcoming step's observation as bootstrap."""
        if len(self.steps) == self.unroll:
            self._finalize(bootstrap)
            self.begin_window(state_arrays)

    def finish_episode(self, bootstrap: dict) -> None:
        if self.steps:
            self._finalize(bootstrap)
            self.steps = []


class PolicyController:
    """Drives one player slot with a policy network."""

    def __init__(
        self,
        agent_id: int,
        params: AgentParams,
        tau: int,
        reward_source: str,
        w: InternalReward | None = None,
        greedy: bool = False,
        collect: bool = False,
        unroll: int = learner_mod.UNROLL_LENGTH,
    ):
        self.agent_id = agent_id
        self.params = params
        self.tau = tau
        self.reward_source = reward_source
        self.w = w
        self.greedy = greedy
        self.collect = collect
        self.unroll = unroll
        self.quake = np.array(quake_vector())
        self.rng: np.random.Generator | None = None
        self.builder: TrajectoryBuilder | None = None

    def begin(self, pid: int, team: int, rng: np.random.Generator) -> None:
        self.pid = pid
        self.team = team
        self.rng = rng
        cfg = self.params.cfg
        self.state = agent_mod.reset_state(cfg, batch=1, dtype=np.float32, tau=self.tau)
        self.prev_action = -1
        self.prev_reward = 0.0
        if self.collect:
            self.builder = TrajectoryBuilder(self.unroll, cfg.latent_dim,
                                             self.agent_id, self.params.policy_version)
            self.builder.begin_window(agent_mod.state_to_arrays(self.state))
        self._pending: dict | None = None

    def act(self, game: GameState) -> int:
        obs = observe(game, self.pid)
        flat = agent_mod.obs_to_arrays(obs.window, obs.scalars, dtype=np.float32)
        action, info, new_state = agent_mod.fast_step(
            self.params, self.state, flat, self.prev_action, self.prev_reward,
            self.rng, greedy=self.greedy,
        )
        if self.collect:
            window_u8 = obs.window.astype(np.uint8)
            bootstrap = {
                "window": window_u8, "scalars": obs.scalars,
                "prev_action": self.prev_action, "prev_reward": self.prev_reward,
                "noise": info["noise"],
            }
            self.builder.on_new_step_start(agent_mod.state_to_arrays(self.state), bootstrap)
            self._pending = {
                "window": window_u8, "scalars": obs.scalars,
                "prev_action": self.prev_action, "prev_reward": self.prev_reward,
                "action": action, "log_prob": info["log_prob"], "value": info["value"],
                "noise": info["noise"], "posterior": info["posterior"], "prior": info["prior"],
            }
        self.state = new_state
        self.prev_action = action
        return action

    def observe_result(self, events, done: bool, team_results, game: GameState) -> None:
        if self.reward_source == REWARD_EVOLVED:
            reward = float(sum(self.w.w[int(e.kind) - 1] for e in events))
        elif self.reward_source == REWARD_QUAKE:
            reward = float(sum(self.quake[int(e.kind) - 1] for e in events))
        else:  # outcome: +-1 at the final tick only
            reward = 0.0
            if done:
                reward = 1.0 if team_results[self.team] == 1 else -1.0
        self.prev_reward = reward
        if self.collect and self._pending is not None:
            self._pending["reward"] = reward
            self._pending["done"] = done
            self.builder.add_step(**self._pending)
            self._pending = None
            if done:
                obs = observe(game, self.pid)
                self.builder.finish_episode({
                    "window": obs.window.astype(np.uint8), "scalars": obs.scalars,
                    "prev_action": self.prev_action, "prev_reward": reward,
                    "noise": np.zeros(self.params.cfg.latent_dim, dtype=np.float32),
                })

    def trajectories(self) -> list[Trajectory]:
        return self.builder.out if self.builder is not None else []


class BotController:
    def __init__(self, level: int, seed: int = 0):
        self.level = level
        self.bot = ScriptedBot(level, seed=seed)
        self.agent_id = -level  # negative ids mark bots in records

    def begin(self, pid: int, team: int, rng: np.random.Generator) -> None:
        self.pid = pid
        self.team = team
        self.bot.reset()

    def act(self, game: GameState) -> int:
        p = game.player(self.pid)
        obs = observe(game, self.pid)
        own, opp = game.flags[p.team], game.flags[1 - p.team]
        view = BotView(
            map=game.map, pos=p.pos, facing=p.facing, has_flag=p.has_flag,
            respawning=p.respawning, team=p.team,
            own_flag_status=own.status,
            own_flag_cell=own.cell if own.status == FLAG_STRAY else None,
            opp_flag_status=opp.status,
            opp_flag_cell=opp.cell if opp.status == FLAG_STRAY else None,
            window=obs.window,
        )
        return self.bot.act(view)

    def observe_result(self, events, done, team_results, game) -> None:
        pass

    def trajectories(self) -> list[Trajectory]:
        return []


@dataclass
class EpisodeResult:
    record: dict
    trajectories: list[Trajectory]
    final_state: GameState
    team_results: tuple[int, int]


def play_episode(
    map_spec: MapSpec,
    controllers: list,
    team_size: int,
    game_seed: int,
    tie_rng: np.random.Generator,
    controller_rngs: list[np.random.Generator],
    episode_length: int,
    map_seed: int = 0,
    fetch: bool = False,
) -> EpisodeResult:
    state = new_game(map_spec, team_size, game_seed,
                     episode_length=episode_length, fetch=fetch)
    if len(controllers) != len(state.players):
        raise HarnessError(f"{len(controllers)} controllers for {len(state.players)} players")
    for pid, (ctrl, rng) in enumerate(zip(controllers, controller_rngs)):
        ctrl.begin(pid, state.players[pid].team, rng)

    events_log = []
    done = False
    while not done:
        actions = {pid: ctrl.act(state) for pid, ctrl in enumerate(controllers)}
        state, events, done = step(state, actions)
        for pid in sorted(events):
            events_log.extend(events[pid])
        team_results = outcome(state, tie_rng) if done else None
        for pid, ctrl in enumerate(controllers):
            ctrl.observe_result(events[pid], done, team_results, state)

    record = match_record(state, [c.agent_id for c in controllers], events_log, map_seed)
    trajectories = [t for c in controllers for t in c.trajectories()]
    return EpisodeResult(record=record, trajectories=trajectories,
                         final_state=state, team_results=team_results)


# ---------------------------------------------------------------------------
# Worker-side game task (used by the process pool; also the serial path).

_WORKER_LIMITER = None


def play_game_task(payload: dict) -> dict:
    """Play one training game from a self-contained payload."""
    global _WORKER_LIMITER
    if _WORKER_LIMITER is None:
        try:
            from threadpoolctl import threadpool_limits

            _WORKER_LIMITER = threadpool_limits(limits=1)
        except ImportError:
            _WORKER_LIMITER = False
    map_spec = from_json_dict(payload["map"])
    controllers = []
    for slot in payload["slots"]:
        params = agent_mod.params_from_bytes(slot["params"])
        w = InternalReward(np.asarray(slot["w"])) if slot.get("w") is not None else None
        controllers.append(PolicyController(
            agent_id=slot["agent_id"], params=params, tau=slot["tau"],
            reward_source=payload["reward_source"], w=w,
            greedy=False, collect=True, unroll=payload["unroll"],
        ))
    rngs = _exec_rngs(payload["master_seed"], payload["game_idx"], len(controllers) + 1)
    tie_rng, controller_rngs = rngs[0], rngs[1:]
    result = play_episode(
        map_spec, controllers, payload["team_size"], payload["game_seed"],
        tie_rng, controller_rngs, payload["episode_length"], map_seed=payload["map_seed"],
    )
    return {
        "record": result.record,
        "trajectories": result.trajectories,
        "team_results": result.team_results,
        "game_idx": payload["game_idx"],
        "slots": [s["agent_id"] for s in payload["slots"]],
    }


# ---------------------------------------------------------------------------
# The trainer

@dataclass
class AgentSlot:
    record: PopulationRecord
    learner: Learner
    queue: deque
    replay_rng: np.random.Generator
    agent_cfg: AgentConfig


class Trainer:
    def __init__(self, cfg: TrainConfig):
        self.cfg = cfg
        self.games_played = 0
        self.rated_matches = 0
        self.match_records: list[MatchRecord] = []
        self.matchmake_rng = _control_rng(cfg.master_seed, 0)
        self.pbt_rng = _control_rng(cfg.master_seed, 1)
        self.slots: list[AgentSlot] = []
        self.metrics: list[dict] = []
        self._metrics_file = None
        self._match_log_file = None
        base_cfg = cfg.agent_config()
        for aid in range(cfg.population_size):
            rng = _agent_init_rng(cfg.master_seed, aid)
            params = agent_mod.init_params(base_cfg, rng, dtype=np.float32)
            w = init_rewards(rng)
            # Single-agent variants cannot evolve away a bad draw, so they
            # train at the middle of every hyperparameter range.
            phi = sample_hyperparams(rng) if cfg.spec.population_based else median_hyperparams()
            rec = PopulationRecord(agent_id=aid, w=w, phi=phi, psi=1000.0,
                                   games=0, burn_in=cfg.burn_in_games)
            lrn = Learner(params=params, weights=self._weights_from_phi(phi),
                          use_reward_pred=True)
            self.slots.append(AgentSlot(
                record=rec, learner=lrn,
                queue=deque(maxlen=cfg.queue_capacity),
                replay_rng=_control_rng(cfg.master_seed, 100 + aid),
                agent_cfg=base_cfg,
            ))

    # -- helpers ----------------------------------------------------------

    @staticmethod
    def _weights_from_phi(phi: HyperParams) -> LossWeights:
        return LossWeights(
            learning_rate=phi.learning_rate,
            entropy_cost=phi.entropy_cost,
            reward_pred_weight=phi.reward_pred_weight,
            kl_posterior_prior=phi.kl_posterior_prior,
            kl_prior_reg=phi.kl_prior_reg,
            fast_to_slow_scale=phi.fast_to_slow_scale,
        )

    @property
    def psi(self) -> np.ndarray:
        return np.array([s.record.psi for s in self.slots])

    def _emit(self, line: dict) -> None:
        # Serialising every line keeps the in-memory stream identical to the
        # file stream and catches stray numpy scalars early.
        encoded = json.dumps(line, sort_keys=True)
        self.metrics.append(json.loads(encoded))
        if self._metrics_file is not None:
            self._metrics_file.write(encoded + "\n")

    def _emit_match(self, record: dict) -> None:
        if self._match_log_file is not None:
            self._match_log_file.write(json.dumps(record, sort_keys=True) + "\n")

    # -- game assembly ----------------------------------------------------

    def _next_game_payload(self, game_idx: int) -> dict:
        cfg = self.cfg
        setup_rng = _setup_rng(cfg.master_seed, game_idx)
        side = int(setup_rng.choice(np.array(cfg.map_sides)))
        map_seed = int(setup_rng.integers(0, 2**63 - 1))
        game_seed = int(setup_rng.integers(0, 2**63 - 1))
        map_spec = generate_indoor(GenConfig(side=side, seed=map_seed))

        # env assigns the first team_size player ids to red, the rest to blue
        if cfg.spec.population_based:
            focal = int(self.matchmake_rng.integers(0, cfg.population_size))
            matchup = matchmake(focal, self.psi, self.matchmake_rng)
            red_agents = [matchup.players[i] for i in matchup.red]
            blue_agents = [matchup.players[i] for i in matchup.blue]
        else:
            red_agents = [0] * cfg.team_size
            blue_agents = [0] * cfg.team_size
        by_player = red_agents + blue_agents

        slots = []
        for aid in by_player:
            s = self.slots[aid]
            slots.append({
                "agent_id": aid,
                "params": agent_mod.params_to_bytes(s.learner.params),
                "tau": s.record.phi.tau,
                "w": s.record.w.w.tolist() if cfg.spec.reward_source == REWARD_EVOLVED else None,
            })
        return {
            "map": to_json_dict(map_spec),
            "map_seed": map_seed,
            "game_seed": game_seed,
            "game_idx": game_idx,
            "slots": slots,
            "team_size": cfg.team_size,
            "episode_length": cfg.episode_length,
            "unroll": cfg.unroll_length,
            "reward_source": cfg.spec.reward_source,
            "master_seed": cfg.master_seed,
        }

    # -- result intake ----------------------------------------------------

    def _elo_update(self, record: dict) -> None:
        cfg = self.cfg
        m = np.zeros(cfg.population_size)
        teams = record["teams"]
        for slot, aid in enumerate(record["agent_ids"]):
            m[aid] += 1 if teams[slot] == 1 else -1  # blue minus red
        rec = MatchRecord(m=m, y=record["y"])
        self.match_records.append(rec)
        self.rated_matches += 1
        p_blue = win_prob(self.psi, m)
        delta = ELO_K * (record["y"] - p_blue) / self.cfg.team_size
        for aid in range(cfg.population_size):
            if m[aid]:
                self.slots[aid].record.psi = float(self.slots[aid].record.psi + delta * m[aid])
        if self.rated_matches % cfg.elo_refit_interval == 0:
            ratings = fit(self.match_records, anchor=0)
            for aid, slot in enumerate(self.slots):
                if not np.isnan(ratings.psi[aid]):
                    slot.record.psi = float(ratings.psi[aid])
            self._emit({"type": "elo_refit", "game": self.games_played,
                        "psi": [round(s.record.psi, 3) for s in self.slots]})

    def _push_replay(self, slot: AgentSlot, traj: Trajectory) -> None:
        for t in range(2, traj.length):
            slot.learner.replay.push(ReplaySequence(
                windows=traj.windows[t - 2 : t + 1].copy(),
                scalars=traj.scalars[t - 2 : t + 1].copy(),
                label=reward_label(float(traj.rewards[t])),
            ))

    def _consume_result(self, result: dict) -> None:
        cfg = self.cfg
        record = result["record"]
        self._emit_match(record)
        if cfg.spec.population_based:
            self._elo_update(record)
        self._emit({
            "type": "game", "game": self.games_played, "agents": record["agent_ids"],
            "score": record["final_score"], "y": record["y"],
        })

        for traj in result["trajectories"]:
            slot = self.slots[traj.agent_id]
            slot.queue.append(traj)
            self._push_replay(slot, traj)

        participants = sorted(set(result["slots"]))
        for aid in participants:
            rec = self.slots[aid].record
            rec.games += 1
            if rec.burn_in > 0:
                rec.burn_in -= 1

        for aid in participants:
            slot = self.slots[aid]
            while len(slot.queue) >= cfg.batch_size:
                batch = [slot.queue.pop() for _ in range(cfg.batch_size)][::-1]
                lag = slot.learner.params.policy_version - float(
                    np.mean([t.policy_version for t in batch]))
                stats = slot.learner.update(batch, slot.replay_rng)
                self._emit({
                    "type": "update", "game": self.games_played, "agent": aid,
                    "updates": slot.learner.updates, "version_lag": lag,
                    "psi": round(slot.record.psi, 3), "games": slot.record.games,
                    **{k: (round(v, 6) if isinstance(v, float) else v) for k, v in stats.items()},
                })

        if cfg.spec.population_based:
            for aid in participants:
                self._maybe_pbt(aid)

        self.games_played += 1

    def _maybe_pbt(self, aid: int) -> None:
        cfg = self.cfg
        records = [s.record for s in self.slots]
        decision = pbt_step(aid, records, self.pbt_rng)
        if decision.inherit_from is None:
            return
        src = self.slots[decision.inherit_from]
        dst = self.slots[aid]
        old_version = dst.learner.params.policy_version
        dst.learner.params = src.learner.params.copy()
        dst.learner.params.policy_version = old_version + 1
        dst.learner.optimizer.load_state_arrays(src.learner.optimizer.state_arrays())
        dst.record.phi = src.record.phi.copy()
        if cfg.spec.reward_source == REWARD_EVOLVED:
            dst.record.w = src.record.w.copy()
        dst.record.psi = src.record.psi
        new_w, new_phi = explore(dst.record.w, dst.record.phi, self.pbt_rng)
        if cfg.spec.reward_source == REWARD_EVOLVED:
            dst.record.w = new_w
        dst.record.phi = new_phi
        dst.learner.weights = self._weights_from_phi(new_phi)
        dst.record.burn_in = cfg.burn_in_games
        dst.queue.clear()
        self._emit({
            "type": "pbt", "game": self.games_played, "agent": aid,
            "inherited_from": decision.inherit_from,
            "win_prob": round(decision.win_prob, 4),
            "w": [round(x, 5) for x in dst.record.w.w],
            "phi": {k: (round(v, 8) if isinstance(v, float) else v)
                    for k, v in vars(dst.record.phi).items()},
        })

    # -- main loop --------------------------------------------------------

    def run(self) -> "Trainer":
        cfg = self.cfg
        try:
            # Small matrices gain nothing from threaded BLAS, and parallel
            # arenas thrash badly when every process spawns a thread pool.
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=1)
        except ImportError:
            limiter = None
        try:
            if cfg.metrics_path:
                self._metrics_file = open(cfg.metrics_path, "a", encoding="utf-8")
            if cfg.match_log_path:
                self._match_log_file = open(cfg.match_log_path, "a", encoding="utf-8")
            if cfg.arena_workers <= 1:
                self._run_serial()
            else:
                self._run_parallel()
            self._emit({"type": "done", "games": self.games_played})
        finally:
            for f in (self._metrics_file, self._match_log_file):
                if f is not None:
                    f.close()
            self._metrics_file = self._match_log_file = None
            if limiter is not None:
                limiter.restore_original_limits()
        return self

    def _run_serial(self) -> None:
        cfg = self.cfg
        while self.games_played < cfg.total_games:
            payload = self._next_game_payload(self.games_played)
            result = play_game_task(payload)
            self._consume_result(result)
            self._maybe_checkpoint()

    def _run_parallel(self) -> None:
        import concurrent.futures as cf

        cfg = self.cfg
        submitted = 0
        discarded = 0
        with cf.ProcessPoolExecutor(max_workers=cfg.arena_workers) as pool:
            pending = set()
            while submitted < cfg.total_games and len(pending) < cfg.arena_workers:
                pending.add(pool.submit(play_game_task, self._next_game_payload(submitted)))
                submitted += 1
            while pending:
                done, pending = cf.wait(pending, return_when=cf.FIRST_COMPLETED)
                for fut in done:
                    exc = fut.exception()
                    if exc is not None:
                        discarded += 1
                        self._emit({"type": "game_discarded", "error": repr(exc)})
                        if discarded > max(10, cfg.total_games // 10):
                            raise HarnessError(f"too many discarded games ({discarded})") from exc
                        self.games_played += 1  # budget still spent
                    else:
                        self._consume_result(fut.result())
                    self._maybe_checkpoint()
                    if submitted < cfg.total_games:
                        pending.add(pool.submit(play_game_task, self._next_game_payload(submitted)))
                        submitted += 1

    def _maybe_checkpoint(self) -> None:
        cfg = self.cfg
        if (cfg.checkpoint_path and cfg.checkpoint_interval
                and self.games_played and self.games_played % cfg.checkpoint_interval == 0):
            save_checkpoint(self, cfg.checkpoint_path)

    # -- population export --------------------------------------------------

    def population_json(self) -> dict:
        return {
            "variant": self.cfg.variant,
            "games_played": self.games_played,
            "agents": [
                {
                    "id": s.record.agent_id,
                    "w": [float(x) for x in s.record.w.w],
                    "phi": {k: v for k, v in vars(s.record.phi).items()},
                    "psi": s.record.psi,
                    "games": s.record.games,
                    "burn_in": s.record.burn_in,
                    "policy_version": s.learner.params.policy_version,
                }
                for s in self.slots
            ],
        }


def run_training(cfg: TrainConfig, resume_from: str | None = None) -> Trainer:
    """Train to the games budget; optionally resume from a checkpoint file."""
    if resume_from:
        trainer = load_checkpoint(resume_from)
        if trainer.cfg != cfg:
            raise HarnessError("checkpoint config does not match requested config")
    else:
        trainer = Trainer(cfg)
    return trainer.run()


# ---------------------------------------------------------------------------
# Checkpointing: single binary file, JSON header + named raw blocks.

def _state_blocks(trainer: Trainer) -> dict[str, np.ndarray]:
    blocks: dict[str, np.ndarray] = {}
    for s in trainer.slots:
        aid = s.record.agent_id
        for name, tensor in s.learner.params.tensors.items():
            blocks[f"params/{aid}/{name}"] = tensor.data
        for name, arr in s.learner.optimizer.state_arrays().items():
            blocks[f"opt/{aid}/{name}"] = arr
        replay = s.learner.replay.state_arrays()
        for buf in ("nonzero", "zero"):
            for fieldname, arr in replay[buf].items():
                blocks[f"replay/{aid}/{buf}/{fieldname}"] = np.asarray(arr)
        for i, traj in enumerate(s.queue):
            prefix = f"queue/{aid}/{i}"
            blocks[f"{prefix}/windows"] = traj.windows
            blocks[f"{prefix}/scalars"] = traj.scalars
            blocks[f"{prefix}/prev_actions"] = traj.prev_actions
            blocks[f"{prefix}/prev_rewards"] = traj.prev_rewards
            blocks[f"{prefix}/actions"] = traj.actions
            blocks[f"{prefix}/rewards"] = traj.rewards
            blocks[f"{prefix}/behavior_log_probs"] = traj.behavior_log_probs
            blocks[f"{prefix}/behavior_values"] = traj.behavior_values
            blocks[f"{prefix}/dones"] = traj.dones
            blocks[f"{prefix}/mask"] = traj.mask
            blocks[f"{prefix}/latent_noise"] = traj.latent_noise
            blocks[f"{prefix}/posterior_stats"] = traj.posterior_stats
            blocks[f"{prefix}/prior_stats"] = traj.prior_stats
            for k, v in traj.init_state.items():
                blocks[f"{prefix}/init/{k}"] = v
    if trainer.match_records:
        blocks["records/m"] = np.stack([r.m for r in trainer.match_records])
        blocks["records/y"] = np.array([r.y for r in trainer.match_records])
    return blocks


def save_checkpoint(trainer: Trainer, path: str) -> None:
    cfg = trainer.cfg
    blocks = _state_blocks(trainer)
    names = sorted(blocks)
    header = {
        "version": 1,
        "cfg": {**{k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(cfg).items()}},
        "games_played": trainer.games_played,
        "rated_matches": trainer.rated_matches,
        "rng": {
            "matchmake": trainer.matchmake_rng.bit_generator.state,
            "pbt": trainer.pbt_rng.bit_generator.state,
            "replay": [s.replay_rng.bit_generator.state for s in trainer.slots],
        },
        "agents": [
            {
                "id": s.record.agent_id,
                "w": [repr(float(x)) for x in s.record.w.w],
                "phi": {k: (repr(v) if isinstance(v, float) else v)
                        for k, v in vars(s.record.phi).items()},
                "psi": repr(s.record.psi),
                "games": s.record.games,
                "burn_in": s.record.burn_in,
                "policy_version": s.learner.params.policy_version,
                "updates": s.learner.updates,
                "queue_len": len(s.queue),
                "traj_meta": [
                    {"length": t.length, "policy_version": t.policy_version,
                     "agent_id": t.agent_id}
                    for t in s.queue
                ],
            }
            for s in trainer.slots
        ],
        "blocks": [
            {"name": n, "shape": list(blocks[n].shape), "dtype": str(blocks[n].dtype)}
            for n in names
        ],
    }
    head_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(head_bytes)))
    buf.write(head_bytes)
    for n in names:
        buf.write(np.ascontiguousarray(blocks[n]).tobytes())
    data = buf.getvalue()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    import os

    os.replace(tmp, path)


def load_checkpoint(path: str) -> Trainer:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise HarnessError("bad checkpoint: wrong magic")
    (head_len,) = struct.unpack_from("<I", blob, len(CHECKPOINT_MAGIC))
    off = len(CHECKPOINT_MAGIC) + 4
    try:
        header = json.loads(blob[off : off + head_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise HarnessError(f"bad checkpoint: corrupt header ({e})") from e
    off += head_len

    blocks: dict[str, np.ndarray] = {}
    for blk in header["blocks"]:
        shape = tuple(blk["shape"])
        dtype = np.dtype(blk["dtype"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if off + nbytes > len(blob):
            raise HarnessError("bad checkpoint: truncated block data")
        blocks[blk["name"]] = np.frombuffer(blob[off : off + nbytes], dtype=dtype).reshape(shape).copy()
        off += nbytes
    if off != len(blob):
        raise HarnessError("bad checkpoint: trailing data")

    cfg_d = dict(header["cfg"])
    for key in ("map_sides", "encoder_widths"):
        cfg_d[key] = tuple(cfg_d[key])
    cfg = TrainConfig(**cfg_d)
    trainer = Trainer(cfg)
    trainer.games_played = header["games_played"]
    trainer.rated_matches = header["rated_matches"]
    trainer.matchmake_rng.bit_generator.state = header["rng"]["matchmake"]
    trainer.pbt_rng.bit_generator.state = header["rng"]["pbt"]
    if "records/m" in blocks:
        trainer.match_records = [
            MatchRecord(m=blocks["records/m"][i], y=float(blocks["records/y"][i]))
            for i in range(blocks["records/m"].shape[0])
        ]

    for s, meta, rng_state in zip(trainer.slots, header["agents"], header["rng"]["replay"]):
        aid = meta["id"]
        s.replay_rng.bit_generator.state = rng_state
        s.record.w = InternalReward(np.array([float(x) for x in meta["w"]]))
        phi_d = {k: (float(v) if k != "tau" else int(v)) for k, v in meta["phi"].items()}
        s.record.phi = HyperParams(**phi_d)
        s.record.psi = float(meta["psi"])
        s.record.games = meta["games"]
        s.record.burn_in = meta["burn_in"]
        s.learner.weights = Trainer._weights_from_phi(s.record.phi)
        for name in list(s.learner.params.tensors):
            s.learner.params.tensors[name] = nn.parameter(blocks[f"params/{aid}/{name}"].copy())
        s.learner.params.policy_version = meta["policy_version"]
        s.learner.updates = meta["updates"]
        s.learner.optimizer.load_state_arrays(
            {name: blocks[f"opt/{aid}/{name}"] for name in s.learner.optimizer.avg})
        replay_state = {
            buf: {fieldname: blocks[f"replay/{aid}/{buf}/{fieldname}"]
                  for fieldname in ("windows", "scalars", "labels")}
            for buf in ("nonzero", "zero")
        }
        s.learner.replay = RewardPredReplay.from_state_arrays(replay_state)
        s.queue.clear()
        for i, tmeta in enumerate(meta["traj_meta"]):
            prefix = f"queue/{aid}/{i}"
            init = {k.split("/")[-1]: blocks[k] for k in blocks if k.startswith(f"{prefix}/init/")}
            s.queue.append(Trajectory(
                length=tmeta["length"],
                windows=blocks[f"{prefix}/windows"],
                scalars=blocks[f"{prefix}/scalars"],
                prev_actions=blocks[f"{prefix}/prev_actions"],
                prev_rewards=blocks[f"{prefix}/prev_rewards"],
                actions=blocks[f"{prefix}/actions"],
                rewards=blocks[f"{prefix}/rewards"],
                behavior_log_probs=blocks[f"{prefix}/behavior_log_probs"],
                behavior_values=blocks[f"{prefix}/behavior_values"],
                dones=blocks[f"{prefix}/dones"],
                mask=blocks[f"{prefix}/mask"],
                latent_noise=blocks[f"{prefix}/latent_noise"],
                init_state=init,
                policy_version=tmeta["policy_version"],
                agent_id=tmeta["agent_id"],
                posterior_stats=blocks[f"{prefix}/posterior_stats"],
                prior_stats=blocks[f"{prefix}/prior_stats"],
            ))
    return trainer


# ---------------------------------------------------------------------------
# Tournaments and fetch evaluation

@dataclass
class Participant:
    name: str
    kind: str  # "agent" or "bot"
    params: AgentParams | None = None
    tau: int | None = None
    bot_level: int | None = None

    def controller(self, seed: int):
        if self.kind == "agent":
            return PolicyController(
                agent_id=0, params=self.params,
                tau=self.tau or self.params.cfg.tau,
                reward_source=REWARD_QUAKE, greedy=True, collect=False,
            )
        return BotController(self.bot_level, seed=seed)


@dataclass
class TournamentResult:
    records: list[MatchRecord]
    ratings: Ratings
    match_logs: list[dict]
    wins: np.ndarray  # per participant
    games: np.ndarray


def run_tournament(
    participants: list[Participant],
    n_games: int,
    map_sides: tuple[int, ...] = (13,),
    team_size: int = 2,
    episode_length: int = 1000,
    seed: int = 0,
    anchor: int | None = None,
) -> TournamentResult:
    """Ad-hoc evaluation: every slot sampled uniformly with replacement."""
    if len(participants) < 2:
        raise HarnessError("tournament needs at least two participants")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(9,)))
    records: list[MatchRecord] = []
    logs: list[dict] = []
    wins = np.zeros(len(participants))
    games = np.zeros(len(participants))
    for g in range(n_games):
        side = int(rng.choice(np.array(map_sides)))
        map_seed = int(rng.integers(0, 2**63 - 1))
        map_spec = generate_indoor(GenConfig(side=side, seed=map_seed))
        picks = [int(rng.integers(0, len(participants))) for _ in range(2 * team_size)]
        controllers = []
        for i in picks:
            ctrl = participants[i].controller(seed=int(rng.integers(0, 2**31)))
            ctrl.agent_id = i  # participant index, so match logs stay attributable
            controllers.append(ctrl)
        ctrl_rngs = [np.random.default_rng(rng.integers(0, 2**63 - 1)) for _ in controllers]
        tie_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        result = play_episode(map_spec, controllers, team_size,
                              int(rng.integers(0, 2**63 - 1)), tie_rng, ctrl_rngs,
                              episode_length, map_seed=map_seed)
        red = picks[:team_size]
        blue = picks[team_size:]
        y = result.record["y"]
        records.append(make_record(blue, red, y, len(participants)))
        logs.append(result.record)
        for i in blue:
            games[i] += 1
            wins[i] += result.team_results[1]
        for i in red:
            games[i] += 1
            wins[i] += result.team_results[0]
    if anchor is None:
        bot_ids = [i for i, p in enumerate(participants) if p.kind == "bot"]
        anchor = bot_ids[0] if bot_ids else 0
    ratings = fit(records, anchor=anchor)
    return TournamentResult(records=records, ratings=ratings, match_logs=logs,
                            wins=wins, games=games)


def run_fetch(
    params: AgentParams,
    n_games: int,
    map_sides: tuple[int, ...] = (13,),
    episode_length: int = 1000,
    seed: int = 0,
    tau: int | None = None,
) -> float:
    """Mean flags captured per opponent-free match by two copies of the agent."""
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(10,)))
    total = 0
    for g in range(n_games):
        side = int(rng.choice(np.array(map_sides)))
        map_seed = int(rng.integers(0, 2**63 - 1))
        map_spec = generate_indoor(GenConfig(side=side, seed=map_seed))
        controllers = [
            PolicyController(agent_id=0, params=params, tau=tau or params.cfg.tau,
                             reward_source=REWARD_QUAKE, greedy=True, collect=False)
            for _ in range(2)
        ]
        ctrl_rngs = [np.random.default_rng(rng.integers(0, 2**63 - 1)) for _ in controllers]
        tie_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        result = play_episode(map_spec, controllers, 2, int(rng.integers(0, 2**63 - 1)),
                              tie_rng, ctrl_rngs, episode_length,
                              map_seed=map_seed, fetch=True)
        total += result.final_state.captures[0]  # red is the fetch team
    return total / n_games
