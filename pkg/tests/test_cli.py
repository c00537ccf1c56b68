import json

import numpy as np
import pytest

from gridctf.cli import main


def test_mapgen_cli(tmp_path, capsys):
    out = tmp_path / "map.json"
    assert main(["mapgen", "--side", "13", "--seed", "5", "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    assert data["side"] == 13
    # without --out the rows print
    assert main(["mapgen", "--side", "13", "--seed", "5"]) == 0
    printed = capsys.readouterr().out
    assert "#" in printed


def test_train_cli_from_config(tmp_path, capsys):
    cfg = tmp_path / "train.cfg"
    cfg.write_text(
        "variant = FTW\n"
        "population_size = 4\n"
        "team_size = 2\n"
        "episode_length = 40  # short smoke run\n"
        "total_games = 2\n"
        "arena_workers = 1\n"
        "map_sides = 13\n"
        "master_seed = 3\n"
        "unroll_length = 20\n"
        "batch_size = 4\n"
        "burn_in_games = 1\n"
        "encoder_widths = 16\n"
        "fast_hidden = 8\n"
        "slow_hidden = 8\n"
        "latent_dim = 4\n"
        "head_hidden = 8\n"
    )
    pop = tmp_path / "pop.json"
    agents = tmp_path / "agents"
    agents.mkdir()
    assert main(["train", "--config", str(cfg), "--out-population", str(pop),
                 "--out-agents", str(agents)]) == 0
    data = json.loads(pop.read_text())
    assert len(data["agents"]) == 4
    assert (agents / "agent_0.bin").exists()


def test_train_cli_rejects_unknown_key(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("not_a_real_option = 3\n")
    with pytest.raises(ValueError, match="unknown config key"):
        main(["train", "--config", str(cfg)])


def test_tournament_and_fetch_cli(tmp_path, capsys):
    # make a tiny agent checkpoint first
    from gridctf.agent import AgentConfig, init_params, save_agent

    cfg = AgentConfig(variant="FTW", encoder_widths=(16,), fast_hidden=8,
                      slow_hidden=8, latent_dim=4, head_hidden=8)
    path = tmp_path / "agent.bin"
    save_agent(init_params(cfg, np.random.default_rng(0)), str(path))

    out = tmp_path / "ratings.csv"
    assert main(["tournament", "--agents", str(path), "--bots", "3",
                 "--games", "4", "--episode-length", "40", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "agent_id,psi,games,last_refit"
    assert len(lines) == 3

    assert main(["fetch", "--agent", str(path), "--games", "2",
                 "--episode-length", "40"]) == 0
    assert "mean flags per match" in capsys.readouterr().out


def test_record_and_analyze_cli(tmp_path, capsys):
    from gridctf.agent import AgentConfig, init_params, save_agent

    cfg = AgentConfig(variant="FTW", encoder_widths=(16,), fast_hidden=8,
                      slow_hidden=8, latent_dim=4, head_hidden=8)
    agent_path = tmp_path / "agent.bin"
    save_agent(init_params(cfg, np.random.default_rng(0)), str(agent_path))
    episodes = tmp_path / "episodes"
    assert main(["record", "--agent", str(agent_path), "--episodes", "2",
                 "--episode-length", "60", "--out", str(episodes)]) == 0
    assert main(["analyze", "neurons", "--episodes", str(episodes)]) == 0
    probes_out = tmp_path / "probes.csv"
    assert main(["analyze", "probes", "--episodes", str(episodes),
                 "--out", str(probes_out)]) == 0
    header = probes_out.read_text().splitlines()[0]
    assert header == "feature,offset,aucroc"
