"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line
(run with ``pytest -s`` to see them).

The desk-scale training ladder and the evaluations that need trained
agents run for hours, so they are gated: set ``GRIDCTF_RUN_TRAINING=1`` to
train (budget configurable via ``GRIDCTF_ACCEPT_GAMES``), or point
``GRIDCTF_ACCEPT_DIR`` at a directory holding a finished run's artifacts.
Everything else runs by default.
"""

import json
import os
import time
from contextlib import contextmanager

import numpy as np
import pytest

from gridctf import nn
from gridctf import agent as agent_mod
from gridctf import learner as learner_mod
from gridctf.env import (
    FLAG_AT_BASE,
    FLAG_CARRIED,
    FLAG_STRAY,
    NUM_ACTIONS,
    new_game,
    step,
)
from gridctf.events import EventKind
from gridctf.harness import TrainConfig, Trainer, load_checkpoint, save_checkpoint
from gridctf.mapgen import GenConfig, generate_indoor
from gridctf.maps import validate
from gridctf.rating import MatchRecord, fit, win_prob

ACCEPT_DIR = os.environ.get(
    "GRIDCTF_ACCEPT_DIR",
    os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "acceptance_artifacts"),
)
RUN_TRAINING = os.environ.get("GRIDCTF_RUN_TRAINING") == "1"
TRAINING_GATE_MSG = (
    "training-backed criterion: set GRIDCTF_RUN_TRAINING=1 (hours; see README) "
    f"or point GRIDCTF_ACCEPT_DIR at finished artifacts (looked in {ACCEPT_DIR})"
)


@contextmanager
def criterion(name):
    try:
        yield
    except pytest.skip.Exception:
        print(f"ACCEPTANCE {name}: SKIP ({TRAINING_GATE_MSG})")
        raise
    except Exception:
        print(f"ACCEPTANCE {name}: FAIL")
        raise
    print(f"ACCEPTANCE {name}: PASS")


_LADDER_CACHE: list = []


def ladder_summary():
    """Memoized ladder artifacts; skips when gated off."""
    from gridctf.experiments import LadderConfig, load_summary, run_ladder

    if _LADDER_CACHE:
        return _LADDER_CACHE[0]
    summary = load_summary(ACCEPT_DIR)
    if summary is None:
        if not RUN_TRAINING:
            pytest.skip(TRAINING_GATE_MSG)
        cfg = LadderConfig(
            out_dir=ACCEPT_DIR,
            games_per_variant=int(os.environ.get("GRIDCTF_ACCEPT_GAMES", "8000")),
            arena_workers=int(os.environ.get("GRIDCTF_ACCEPT_WORKERS",
                                             str(max(1, (os.cpu_count() or 2) - 1)))),
        )
        summary = run_ladder(cfg)
    _LADDER_CACHE.append(summary)
    return summary


# ---------------------------------------------------------------------------
# Rules suite: 1e5 random ticks over 100 generated maps, zero violations.

def _check_tick_invariants(pre, post, events):
    for team in (0, 1):
        f = post.flags[team]
        states = [f.status == FLAG_AT_BASE, f.status == FLAG_CARRIED, f.status == FLAG_STRAY]
        assert sum(states) == 1, "flag must be in exactly one state"
        if f.status == FLAG_CARRIED:
            carrier = post.players[f.carrier]
            assert carrier.team == 1 - team, "flags are carried by opponents"
            assert carrier.has_flag and not carrier.respawning
            assert carrier.pos is not None
        elif f.status == FLAG_STRAY:
            assert f.cell is not None and not post.map.is_wall(*f.cell)
            assert f.carrier is None
        else:
            assert f.carrier is None and f.cell is None
    carriers = [f.carrier for f in post.flags if f.status == FLAG_CARRIED]
    assert len(carriers) == len(set(carriers))
    for p in post.players:
        if p.has_flag:
            opp = post.flags[1 - p.team]
            assert opp.status == FLAG_CARRIED and opp.carrier == p.pid, \
                "a player holds at most one flag, and only the opposing one"
        if p.respawning:
            assert p.pos is None and not p.has_flag
    live_positions = [p.pos for p in post.players if p.pos is not None]
    assert len(live_positions) == len(set(live_positions)), "one player per cell"
    for team in (0, 1):
        assert post.captures[team] >= pre.captures[team], "captures never decrease"
    for pid, evs in events.items():
        for e in evs:
            if e.kind == EventKind.I_CAPTURED_FLAG:
                p = post.players[pid]
                assert p.pos == post.map.flag_stands[p.team], "capture happens on own stand"
                assert post.flags[p.team].status == FLAG_AT_BASE, "own flag safe at capture"
                assert pre.players[pid].has_flag, "scorer held the flag before the tick"


def test_rules_suite():
    with criterion("rules-suite"):
        start = time.time()
        rng = np.random.default_rng(20_260_808)
        total_ticks = 0
        maps_used = 0
        team_size = 2
        while maps_used < 100:
            spec = generate_indoor(GenConfig(side=13, seed=maps_used))
            state = new_game(spec, team_size, seed=maps_used, episode_length=1000)
            event_counts = {k: [0, 0] for k in (EventKind.I_CAPTURED_FLAG,
                                                EventKind.TEAMMATE_CAPTURED_FLAG,
                                                EventKind.OPPONENTS_CAPTURED_FLAG)}
            while not state.done:
                actions = {p.pid: int(rng.integers(0, NUM_ACTIONS)) for p in state.players}
                nxt, events, _ = step(state, actions)
                _check_tick_invariants(state, nxt, events)
                for pid, evs in events.items():
                    team = nxt.players[pid].team
                    for e in evs:
                        if e.kind in event_counts:
                            event_counts[e.kind][team] += 1
                state = nxt
                total_ticks += 1
            for team in (0, 1):
                assert event_counts[EventKind.I_CAPTURED_FLAG][team] == state.captures[team]
                assert event_counts[EventKind.TEAMMATE_CAPTURED_FLAG][team] == \
                    state.captures[team] * (team_size - 1)
                assert event_counts[EventKind.OPPONENTS_CAPTURED_FLAG][1 - team] == \
                    state.captures[team] * team_size
            maps_used += 1
        elapsed = time.time() - start
        assert total_ticks == 100_000
        assert elapsed < 120, f"rules suite took {elapsed:.0f}s (budget 120s)"


# ---------------------------------------------------------------------------
# Mapgen suite: 1000 seeds per size, all constraints hold.

def test_mapgen_suite():
    with criterion("mapgen-suite"):
        start = time.time()
        for side in (13, 17):
            for seed in range(1000):
                spec = generate_indoor(GenConfig(side=side, seed=seed))
                report = validate(spec)
                assert report.solvable, (side, seed)
                assert report.symmetric, (side, seed)
                assert min(report.base_areas) >= 9, (side, seed)
                assert report.dead_end_count == 0, (side, seed)
        elapsed = time.time() - start
        assert elapsed < 60, f"mapgen suite took {elapsed:.0f}s (budget 60s)"


# ---------------------------------------------------------------------------
# Numerical suite.

def test_numerical_suite():
    from test_learner import make_traj, default_weights, random_inputs, vtrace_oracle, tiny_cfg

    with criterion("numerical-suite"):
        # grad checks on randomized small shapes, 64-bit, < 1e-4 relative
        rng = np.random.default_rng(0)
        for trial in range(3):
            w = nn.parameter(rng.normal(size=(rng.integers(2, 5), rng.integers(2, 5))))
            b = nn.parameter(rng.normal(size=w.data.shape[1]))
            x = rng.normal(size=(2, w.data.shape[0]))

            def f():
                return nn.sum_(nn.tanh(nn.affine(nn.Tensor(x), w, b)))

            assert nn.grad_check(f, [w, b]) < 1e-4

        cfg = tiny_cfg()
        params = agent_mod.init_params(cfg, np.random.default_rng(1), dtype=np.float64)
        batch = learner_mod.stack_batch([make_traj(cfg, 3), make_traj(cfg, 4)])
        weights = default_weights()
        _, comps = learner_mod.build_loss(batch, params, weights)
        targets = comps["vtrace_targets"]

        def full_loss():
            loss, _ = learner_mod.build_loss(batch, params, weights, frozen_targets=targets)
            return loss

        assert nn.grad_check(full_loss, params.tensors, eps=1e-5) < 1e-4

        # KL closed form vs Monte Carlo within 1%
        mc_rng = np.random.default_rng(42)
        q = nn.DiagGaussian(nn.Tensor(np.array([[0.3]])), nn.Tensor(np.array([[0.0]])))
        p = nn.DiagGaussian(nn.Tensor(np.array([[-0.2]])), nn.Tensor(np.array([[np.log(0.5)]])))
        closed = float(nn.kl_diag_gauss(q, p).data[0])
        z = mc_rng.normal(0.3, 1.0, size=2_000_000)

        def logpdf(x, mu, s):
            return -0.5 * ((x - mu) / s) ** 2 - np.log(s) - 0.5 * np.log(2 * np.pi)

        mc = np.mean(logpdf(z, 0.3, 1.0) - logpdf(z, -0.2, 0.5))
        assert abs(closed - mc) / abs(closed) < 0.01

        # V-trace vs brute force within 1e-8; on-policy collapse within 1e-12
        b_lp, t_lp, rewards, values, discounts, mask = random_inputs(np.random.default_rng(5))
        vs, _ = learner_mod.vtrace(b_lp, t_lp, rewards, values, discounts, mask)
        assert np.max(np.abs(vs - vtrace_oracle(b_lp, t_lp, rewards, values, discounts))) < 1e-8

        vs_on, _ = learner_mod.vtrace(b_lp, b_lp.copy(), rewards, values, discounts, mask)
        expected = np.zeros_like(rewards)
        for i in range(rewards.shape[0]):
            ret = values[i, -1]
            for s in range(rewards.shape[1] - 1, -1, -1):
                ret = rewards[i, s] + discounts[i, s] * ret
                expected[i, s] = ret
        assert np.max(np.abs(vs_on - expected)) < 1e-12


# ---------------------------------------------------------------------------
# Elo suite.

def test_elo_suite():
    with criterion("elo-suite"):
        rng = np.random.default_rng(7)
        true_psi = np.array([1000.0, 1060.0, 940.0, 1120.0, 980.0, 1030.0, 890.0, 1075.0])
        records = []
        for _ in range(10_000):
            picks = rng.choice(8, size=4, replace=False)
            m = np.zeros(8)
            for i in picks[:2]:
                m[i] += 1
            for i in picks[2:]:
                m[i] -= 1
            y = 1.0 if rng.random() < win_prob(true_psi, m) else 0.0
            records.append(MatchRecord(m=m, y=y))
        ratings = fit(records, anchor=0)
        assert ratings.grad_norm < 1e-6
        for i in range(8):
            for j in range(8):
                assert abs((true_psi[i] - true_psi[j]) - (ratings.psi[i] - ratings.psi[j])) < 25.0

        # exact translation invariance and antisymmetry
        psi = np.array([1200.0, 1000.0, 900.0, 1100.0])
        m = np.array([1.0, 1.0, -1.0, -1.0])
        for c in (64.0, -512.0, 1000.0):
            assert win_prob(psi + c, m) == win_prob(psi, m)
        check_rng = np.random.default_rng(0)
        for _ in range(100):
            psi_r = check_rng.normal(1000, 150, size=6)
            m_r = check_rng.integers(-2, 3, size=6).astype(float)
            assert win_prob(psi_r, m_r) + win_prob(psi_r, -m_r) == 1.0


# ---------------------------------------------------------------------------
# PBT mechanics.

def test_pbt_mechanics():
    from gridctf.population import (
        PERTURB_PROB,
        PopulationRecord,
        explore,
        init_rewards,
        pbt_step,
        sample_hyperparams,
    )

    with criterion("pbt-mechanics"):
        # inheritance fires iff estimated win probability < 0.7, post burn-in
        def pop(delta, burn_in=0):
            rng = np.random.default_rng(0)
            return [PopulationRecord(agent_id=i, w=init_rewards(rng),
                                     phi=sample_hyperparams(rng), psi=p, burn_in=burn_in)
                    for i, p in enumerate([1000.0 + delta, 1000.0])]

        boundary = 400.0 * np.log10(0.7 / 0.3) / 2.0
        assert pbt_step(0, pop(boundary + 1), np.random.default_rng(0)).inherit_from is None
        assert pbt_step(0, pop(boundary - 1), np.random.default_rng(0)).inherit_from == 1
        assert pbt_step(0, pop(-500.0, burn_in=3), np.random.default_rng(0)).inherit_from is None

        # perturbation frequency 5% +- 0.3% over >= 1e5 scalar draws
        rng = np.random.default_rng(9)
        w = init_rewards(np.random.default_rng(0))
        phi = sample_hyperparams(np.random.default_rng(1))
        perturbed, total = 0, 0
        taus = set()
        while total < 100_000:
            w2, phi2 = explore(w, phi, rng)
            perturbed += int(np.sum(~np.isclose(w2.w, w.w)))
            total += 13
            taus.add(phi2.tau)
        freq = perturbed / total
        assert abs(freq - PERTURB_PROB) < 0.003, freq
        assert all(5 <= t < 20 for t in taus)
        assert len(taus) > 3  # tau resampling is live


# ---------------------------------------------------------------------------
# Determinism: bit-identical serialized runs and checkpoint resume.

def _determinism_cfg(**kw):
    base = dict(
        variant="FTW", population_size=4, team_size=2, episode_length=200,
        total_games=50, arena_workers=1, map_sides=(13,), master_seed=11,
        unroll_length=100, batch_size=32, queue_capacity=64, burn_in_games=10,
        encoder_widths=(24,), fast_hidden=16, slow_hidden=16, latent_dim=6,
        head_hidden=12,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_determinism(tmp_path):
    with criterion("determinism"):
        run_a = Trainer(_determinism_cfg()).run().metrics
        run_b = Trainer(_determinism_cfg()).run().metrics
        assert run_a == run_b, "two serialized runs diverged"

        half = Trainer(_determinism_cfg(total_games=25)).run()
        ck = tmp_path / "half.ck"
        save_checkpoint(half, str(ck))
        resumed = load_checkpoint(str(ck))
        resumed.cfg.total_games = 50
        resumed.run()
        tail_a = [m for m in run_a if m.get("game", 10**9) >= 25 and m["type"] != "done"]
        tail_r = [m for m in resumed.metrics if m["type"] != "done"]
        assert tail_a == tail_r, "resumed run diverged from the uninterrupted one"


# ---------------------------------------------------------------------------
# Probes: synthetic selective-neuron machinery at the 97% threshold.

def test_probes_synthetic():
    from gridctf.analysis import selective_neuron

    with criterion("probes-synthetic-neurons"):
        rng = np.random.default_rng(3)
        labels = rng.integers(0, 2, size=2000)
        hidden = rng.normal(size=(2000, 12)).astype(np.float32)
        hidden[:, 4] = labels + 0.01 * rng.normal(size=2000)
        found = selective_neuron(hidden, labels)
        assert found.neuron == 4
        assert found.accuracy > 0.97 and found.is_distinct
        # barely-noisy construction right at the threshold is NOT distinct
        hidden2 = rng.normal(size=(2000, 12)).astype(np.float32)
        hidden2[:, 4] = labels + 1.5 * rng.normal(size=2000)
        weak = selective_neuron(hidden2, labels)
        assert not weak.is_distinct


# ---------------------------------------------------------------------------
# Training-backed criteria (gated behind artifacts / GRIDCTF_RUN_TRAINING).

ELO_TIE_TOLERANCE = 30.0


def test_training_ordering():
    with criterion("training-ordering"):
        summary = ladder_summary()
        elo = summary["elo"]
        ladder = ["selfplay", "selfplay_rs", "pbt_rs", "ftw_th", "ftw"]
        for lower, upper in zip(ladder, ladder[1:]):
            assert elo[upper] >= elo[lower] - ELO_TIE_TOLERANCE, \
                f"{upper} ({elo[upper]:.0f}) below {lower} ({elo[lower]:.0f}) beyond tolerance"
        assert summary["ftw_vs_random_winrate"] >= 0.95, \
            f"FTW vs random win rate {summary['ftw_vs_random_winrate']:.3f}"
        assert abs(summary["selfplay_vs_random_winrate"] - 0.5) <= 0.15, \
            f"SelfPlay vs random win rate {summary['selfplay_vs_random_winrate']:.3f}"


def test_internal_reward_evolution():
    with criterion("internal-reward-evolution"):
        drift = ladder_summary()["reward_drift"]["max_relative_drift"]
        assert drift > 0.2, f"max relative drift {drift:.3f} <= 20%"


def test_fetch_ordering():
    with criterion("fetch-ordering"):
        fetch = ladder_summary()["fetch"]
        assert fetch["ftw"] >= fetch["ftw_no_th"], \
            f"fetch FTW {fetch['ftw']:.2f} < FTW-TH {fetch['ftw_no_th']:.2f}"


def test_probes_trained_agent():
    with criterion("probes-trained-agent"):
        probe = ladder_summary()["probe"]
        assert probe["trained"] is not None, \
            "feature undefined on trained-agent episodes (no positive labels)"
        assert probe["untrained"] is not None, \
            "feature undefined for the untrained control on the shared episodes"
        assert probe["trained"] >= 0.85, f"trained AUCROC {probe['trained']:.3f}"
        assert abs(probe["untrained"] - 0.5) <= 0.05, \
            f"untrained AUCROC {probe['untrained']:.3f}"


# ---------------------------------------------------------------------------
# [SECONDARY] Protocol conformance and live smoke test.

def test_protocol_conformance_secondary(tmp_path):
    import asyncio

    from gridctf.env import encode_action
    from gridctf.server import HeadlessClient, MatchServer, RosterEntry, ServerConfig, fit_ratings_from_log

    with criterion("secondary-protocol-conformance"):
        # roster: trained agents when the ladder artifacts exist, otherwise a
        # freshly trained miniature population (still real checkpoints)
        trained = os.path.join(ACCEPT_DIR, "ftw_best.bin")
        if os.path.exists(trained):
            agent_path = trained
        else:
            trainer = Trainer(_determinism_cfg(total_games=4, episode_length=80)).run()
            agent_path = str(tmp_path / "smoke_agent.bin")
            agent_mod.save_agent(trainer.slots[0].learner.params, agent_path)
        roster = [
            RosterEntry(kind="agent", name="agent_a", path=agent_path),
            RosterEntry(kind="agent", name="agent_b", path=agent_path),
            RosterEntry(kind="bot", name="bot3", level=3),
        ]
        tick_hz = 25.0

        async def main():
            server = MatchServer(ServerConfig(
                port=0, roster=roster, tick_hz=tick_hz, episode_length=60,
                map_sides=(13,), seed=3,
            ))
            await server.start()
            client = HeadlessClient("human", policy=lambda f: encode_action(1, 0, 0))
            await asyncio.wait_for(client.play("127.0.0.1", server.port), timeout=120)
            await server.stop()
            return server, client

        server, client = asyncio.run(main())
        assert client.final is not None, "match did not complete"
        # server-applied human actions equal the client's send log
        assert server._last_human_logs["human"] == client.action_log
        # stable cadence: no tick above twice the nominal period (first tick
        # excluded: it includes session setup)
        periods = server.last_stats.tick_durations[1:]
        assert max(periods) <= 2.0 / tick_hz, f"worst tick {max(periods)*1e3:.1f}ms"
        # the match enters the ratings table
        names, ratings = fit_ratings_from_log(server.match_log, anchor_name="bot3")
        assert "human" in names
        assert not np.isnan(ratings.psi[names.index("human")])
