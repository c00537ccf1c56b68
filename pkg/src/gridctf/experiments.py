"""Desk-scale ablation ladder: train the five variants at equal game
budgets, rate them in a mixed tournament, and run the downstream
evaluations (random-baseline matches, fetch, probes, reward drift).

Every stage checkpoints its artifacts under one directory so an
interrupted run resumes where it stopped and finished stages are reused.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from . import agent as agent_mod
from .agent import AgentConfig, AgentParams, VARIANT_FTW, init_params
from .analysis import (
    PROBE_QUESTION_NAMES,
    ProbeDataset,
    build_probe_dataset,
    fit_probe,
    record_episodes,
)
from .env import NUM_ACTIONS
from .harness import (
    Participant,
    TrainConfig,
    Trainer,
    VARIANT_FULL_FTW,
    VARIANT_FTW_NO_TH,
    VARIANT_PBT_RS,
    VARIANT_SELF_PLAY,
    VARIANT_SELF_PLAY_RS,
    load_checkpoint,
    run_fetch,
    run_tournament,
    save_checkpoint,
)

LADDER_VARIANTS = (
    VARIANT_SELF_PLAY,
    VARIANT_SELF_PLAY_RS,
    VARIANT_PBT_RS,
    VARIANT_FTW_NO_TH,
    VARIANT_FULL_FTW,
)


@dataclass
class LadderConfig:
    out_dir: str
    # ~10.5h for all five rungs on an 8-core desktop at measured throughput
    games_per_variant: int = 8000
    tournament_games: int = 600
    head_to_head_games: int = 200
    fetch_matches: int = 200
    probe_episodes: int = 40
    arena_workers: int = max(1, (os.cpu_count() or 2) - 1)
    master_seed: int = 2026
    episode_length: int = 1000
    population_size: int = 8
    burn_in_games: int = 50
    map_sides: tuple[int, ...] = (13,)
    encoder_widths: tuple[int, ...] = (64,)
    fast_hidden: int = 64
    slow_hidden: int = 64
    latent_dim: int = 16
    head_hidden: int = 32
    checkpoint_interval: int = 200
    eval_episode_length: int = 1000


class RandomController:
    """Uniform-random policy used as the tournament baseline."""

    agent_id = 0

    def __init__(self, seed: int):
        self.rng = np.random.default_rng(seed)

    def begin(self, pid, team, rng):
        self.rng = rng

    def act(self, game):
        return int(self.rng.integers(0, NUM_ACTIONS))

    def observe_result(self, *a):
        pass

    def trajectories(self):
        return []


def random_participant(name: str = "random") -> Participant:
    p = Participant(name=name, kind="bot", bot_level=1)
    p.controller = lambda seed: RandomController(seed)  # type: ignore[assignment]
    return p


def _variant_train_config(cfg: LadderConfig, variant: str) -> TrainConfig:
    population = cfg.population_size if variant in (VARIANT_PBT_RS, VARIANT_FTW_NO_TH, VARIANT_FULL_FTW) else 1
    return TrainConfig(
        variant=variant,
        population_size=population,
        team_size=2,
        episode_length=cfg.episode_length,
        total_games=cfg.games_per_variant,
        arena_workers=cfg.arena_workers,
        map_sides=cfg.map_sides,
        master_seed=cfg.master_seed + LADDER_VARIANTS.index(variant),
        burn_in_games=cfg.burn_in_games,
        encoder_widths=cfg.encoder_widths,
        fast_hidden=cfg.fast_hidden,
        slow_hidden=cfg.slow_hidden,
        latent_dim=cfg.latent_dim,
        head_hidden=cfg.head_hidden,
        metrics_path=os.path.join(cfg.out_dir, f"{_slug(variant)}_metrics.jsonl"),
        checkpoint_path=os.path.join(cfg.out_dir, f"{_slug(variant)}.ck"),
        checkpoint_interval=cfg.checkpoint_interval,
    )


def _slug(variant: str) -> str:
    return variant.replace("+", "_").replace("-", "_").lower()


def train_variant(cfg: LadderConfig, variant: str) -> Trainer:
    """Train (or resume, or reuse) one rung of the ladder."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    ck_path = os.path.join(cfg.out_dir, f"{_slug(variant)}.ck")
    init_path = os.path.join(cfg.out_dir, f"{_slug(variant)}_init.json")
    train_cfg = _variant_train_config(cfg, variant)
    if os.path.exists(ck_path):
        trainer = load_checkpoint(ck_path)
        if trainer.games_played >= train_cfg.total_games:
            return trainer
    else:
        trainer = Trainer(train_cfg)
        with open(init_path, "w", encoding="utf-8") as f:
            json.dump(trainer.population_json(), f, indent=1)
    trainer.run()
    save_checkpoint(trainer, ck_path)
    with open(os.path.join(cfg.out_dir, f"{_slug(variant)}_population.json"), "w",
              encoding="utf-8") as f:
        json.dump(trainer.population_json(), f, indent=1)
    return trainer


def best_agent(trainer: Trainer) -> tuple[AgentParams, int]:
    """Highest-rated population member (the only member for self-play)."""
    best = max(trainer.slots, key=lambda s: s.record.psi)
    return best.learner.params, best.record.phi.tau


def export_ladder_agents(cfg: LadderConfig) -> dict[str, dict]:
    """Train all rungs and save each rung's best agent checkpoint."""
    out = {}
    for variant in LADDER_VARIANTS:
        trainer = train_variant(cfg, variant)
        params, tau = best_agent(trainer)
        path = os.path.join(cfg.out_dir, f"{_slug(variant)}_best.bin")
        agent_mod.save_agent(params, path)
        out[variant] = {"path": path, "tau": tau,
                        "psi": [s.record.psi for s in trainer.slots],
                        "games": trainer.games_played}
    return out


def head_to_head(
    team_a: Participant, team_b: Participant, n_games: int,
    episode_length: int, seed: int, map_sides=(13,),
) -> float:
    """Win rate of two copies of A against two copies of B (ties count half)."""
    from .harness import play_episode
    from .mapgen import GenConfig, generate_indoor

    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(21,)))
    wins = 0.0
    for g in range(n_games):
        side = int(rng.choice(np.array(map_sides)))
        map_spec = generate_indoor(GenConfig(side=side, seed=int(rng.integers(0, 2**63 - 1))))
        controllers = [team_a.controller(int(rng.integers(0, 2**31))) for _ in range(2)]
        controllers += [team_b.controller(int(rng.integers(0, 2**31))) for _ in range(2)]
        ctrl_rngs = [np.random.default_rng(rng.integers(0, 2**63 - 1)) for _ in range(4)]
        tie_rng = np.random.default_rng(rng.integers(0, 2**63 - 1))
        result = play_episode(map_spec, controllers, 2, int(rng.integers(0, 2**63 - 1)),
                              tie_rng, ctrl_rngs, episode_length)
        score = result.record["final_score"]
        if score[0] > score[1]:  # A fills the red slots
            wins += 1.0
        elif score[0] == score[1]:
            wins += 0.5
    return wins / n_games


def run_ladder(cfg: LadderConfig) -> dict:
    """Full pipeline; returns (and writes) the summary dictionary."""
    os.makedirs(cfg.out_dir, exist_ok=True)
    summary_path = os.path.join(cfg.out_dir, "summary.json")

    agents = export_ladder_agents(cfg)

    def participant(variant: str, name: str | None = None) -> Participant:
        info = agents[variant]
        return Participant(
            name=name or _slug(variant), kind="agent",
            params=agent_mod.load_agent(info["path"]), tau=info["tau"],
        )

    # Mixed tournament for the Elo ladder.
    participants = [participant(v) for v in LADDER_VARIANTS] + [random_participant()]
    tournament = run_tournament(
        participants, n_games=cfg.tournament_games, map_sides=cfg.map_sides,
        episode_length=cfg.eval_episode_length, seed=cfg.master_seed + 50,
        anchor=len(participants) - 1,
    )
    elo = {p.name: (None if np.isnan(tournament.ratings.psi[i]) else float(tournament.ratings.psi[i]))
           for i, p in enumerate(participants)}

    # Dedicated head-to-head matches for the two strict claims.
    ftw_vs_random = head_to_head(
        participant(VARIANT_FULL_FTW), random_participant(),
        cfg.head_to_head_games, cfg.eval_episode_length, cfg.master_seed + 60,
        cfg.map_sides,
    )
    selfplay_vs_random = head_to_head(
        participant(VARIANT_SELF_PLAY), random_participant(),
        cfg.head_to_head_games, cfg.eval_episode_length, cfg.master_seed + 61,
        cfg.map_sides,
    )

    # Fetch ordering.
    ftw_info = agents[VARIANT_FULL_FTW]
    noth_info = agents[VARIANT_FTW_NO_TH]
    fetch_ftw = run_fetch(agent_mod.load_agent(ftw_info["path"]), cfg.fetch_matches,
                          map_sides=cfg.map_sides, episode_length=cfg.eval_episode_length,
                          seed=cfg.master_seed + 70, tau=ftw_info["tau"])
    fetch_noth = run_fetch(agent_mod.load_agent(noth_info["path"]), cfg.fetch_matches,
                           map_sides=cfg.map_sides, episode_length=cfg.eval_episode_length,
                           seed=cfg.master_seed + 70, tau=noth_info["tau"])

    # Probes: trained FTW vs an untrained twin, each on its own recordings.
    probe = probe_comparison(cfg, agents)

    # Internal-reward drift in the FTW population.
    drift = reward_drift(cfg)

    summary = {
        "games_per_variant": cfg.games_per_variant,
        "elo": elo,
        "ftw_vs_random_winrate": ftw_vs_random,
        "selfplay_vs_random_winrate": selfplay_vs_random,
        "fetch": {"ftw": fetch_ftw, "ftw_no_th": fetch_noth},
        "probe": probe,
        "reward_drift": drift,
    }
    with open(summary_path, "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=1)
    return summary


def probe_comparison(cfg: LadderConfig, agents: dict) -> dict:
    """Trained agent probed on its own play; an untrained twin replayed over
    the same episodes, so both probes share data and labels."""
    from .analysis import replay_hidden, with_hidden

    feature = ProbeDataset.feature_index(PROBE_QUESTION_NAMES.index("teammate_has_flag"), 0)
    info = agents[VARIANT_FULL_FTW]
    trained = agent_mod.load_agent(info["path"])
    untrained = init_params(trained.cfg, np.random.default_rng(cfg.master_seed + 999))

    traces = record_episodes(
        trained, n_episodes=cfg.probe_episodes, seed=cfg.master_seed + 80,
        map_side=cfg.map_sides[0], episode_length=cfg.eval_episode_length,
        opponent_level=3, tau=info["tau"],
    )
    replayed = [with_hidden(t, replay_hidden(untrained, t)) for t in traces]
    return {
        "trained": fit_probe(build_probe_dataset(traces), feature),
        "untrained": fit_probe(build_probe_dataset(replayed), feature),
    }


def reward_drift(cfg: LadderConfig) -> dict:
    """Max relative drift of any internal-reward weight vs its own init."""
    slug = _slug(VARIANT_FULL_FTW)
    with open(os.path.join(cfg.out_dir, f"{slug}_init.json"), encoding="utf-8") as f:
        init = json.load(f)
    with open(os.path.join(cfg.out_dir, f"{slug}_population.json"), encoding="utf-8") as f:
        final = json.load(f)
    max_rel = 0.0
    for rec0, rec1 in zip(init["agents"], final["agents"]):
        w0 = np.array(rec0["w"])
        w1 = np.array(rec1["w"])
        rel = np.max(np.abs(w1 - w0) / np.maximum(1e-12, np.abs(w0)))
        max_rel = max(max_rel, float(rel))
    return {"max_relative_drift": max_rel}


def load_summary(out_dir: str) -> dict | None:
    path = os.path.join(out_dir, "summary.json")
    if not os.path.exists(path):
        return None
    with open(path, encoding="utf-8") as f:
        return json.load(f)
