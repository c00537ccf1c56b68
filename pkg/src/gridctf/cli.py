"""Command-line surface: train, tournament, fetch, analyze, serve, mapgen, record."""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import numpy as np


def _parse_config_file(path: str) -> dict:
    """Key-value text config: one `key = value` per line, `#` comments.

    Tuples are comma-separated, booleans are true/false.
    """
    out: dict[str, object] = {}
    with open(path, encoding="utf-8") as f:
        for raw in f:
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"bad config line (expected key = value): {raw.rstrip()}")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _coerce_train_config(raw: dict):
    from .harness import TrainConfig

    kwargs: dict[str, object] = {}
    fields = TrainConfig.__dataclass_fields__
    for key, value in raw.items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        hint = fields[key].type
        if key in ("map_sides", "encoder_widths"):
            kwargs[key] = tuple(int(x) for x in str(value).split(","))
        elif hint in ("int", int):
            kwargs[key] = int(value)
        elif hint in ("float", float):
            kwargs[key] = float(value)
        elif "str | None" in str(hint):
            kwargs[key] = None if str(value).lower() in ("none", "") else str(value)
        else:
            kwargs[key] = value
    return TrainConfig(**kwargs)


def cmd_mapgen(args) -> int:
    from .mapgen import GenConfig, generate_indoor
    from .maps import save_map, to_rows

    spec = generate_indoor(GenConfig(side=args.side, seed=args.seed))
    if args.out:
        save_map(spec, args.out)
        print(f"wrote {args.out}")
    else:
        print("\n".join(to_rows(spec)))
    return 0


def cmd_train(args) -> int:
    from .harness import run_training

    cfg = _coerce_train_config(_parse_config_file(args.config))
    trainer = run_training(cfg, resume_from=args.resume)
    if args.out_population:
        with open(args.out_population, "w", encoding="utf-8") as f:
            json.dump(trainer.population_json(), f, indent=1)
        print(f"wrote {args.out_population}")
    if args.out_checkpoint:
        from .harness import save_checkpoint

        save_checkpoint(trainer, args.out_checkpoint)
        print(f"wrote {args.out_checkpoint}")
    if args.out_agents:
        from .agent import save_agent

        for slot in trainer.slots:
            path = f"{args.out_agents}/agent_{slot.record.agent_id}.bin"
            save_agent(slot.learner.params, path)
        print(f"wrote {len(trainer.slots)} agent checkpoints to {args.out_agents}")
    print(f"trained {trainer.games_played} games "
          f"(psi: {[round(s.record.psi, 1) for s in trainer.slots]})")
    return 0


def _load_participants(agent_paths, bot_levels):
    from .agent import load_agent
    from .harness import Participant

    participants = []
    for path in agent_paths or []:
        participants.append(Participant(name=path, kind="agent", params=load_agent(path)))
    for level in bot_levels or []:
        participants.append(Participant(name=f"bot{level}", kind="bot", bot_level=level))
    return participants


def cmd_tournament(args) -> int:
    from .harness import run_tournament
    from .rating import export_csv

    participants = _load_participants(args.agents, args.bots)
    result = run_tournament(
        participants, n_games=args.games, map_sides=tuple(args.map_sides),
        team_size=args.team_size, episode_length=args.episode_length, seed=args.seed,
    )
    for i, p in enumerate(participants):
        psi = result.ratings.psi[i]
        shown = "unrated" if np.isnan(psi) else f"{psi:8.1f}"
        print(f"{p.name:40s} {shown}  wins {int(result.wins[i])}/{int(result.games[i])}")
    if args.out:
        games = {i: int(result.games[i]) for i in range(len(participants))}
        export_csv(result.ratings, games, args.out)
        print(f"wrote {args.out}")
    return 0


def cmd_fetch(args) -> int:
    from .agent import load_agent
    from .harness import run_fetch

    params = load_agent(args.agent)
    flags = run_fetch(params, n_games=args.games, map_sides=tuple(args.map_sides),
                      episode_length=args.episode_length, seed=args.seed)
    print(f"mean flags per match: {flags:.3f}")
    return 0


def cmd_record(args) -> int:
    from .agent import load_agent
    from .analysis import record_episodes

    params = load_agent(args.agent)
    record_episodes(params, n_episodes=args.episodes, seed=args.seed,
                    map_side=args.map_side, episode_length=args.episode_length,
                    opponent_level=args.bot_level, out_dir=args.out)
    print(f"recorded {args.episodes} episodes to {args.out}")
    return 0


def cmd_analyze(args) -> int:
    from .analysis import (
        PROBE_OFFSETS,
        PROBE_QUESTION_NAMES,
        ProbeDataset,
        behaviour_fingerprint,
        build_probe_dataset,
        fit_behaviour_model,
        fit_probe,
        load_traces,
        selective_neuron,
    )

    traces = load_traces(args.episodes)
    if args.what == "probes":
        dataset = build_probe_dataset(traces)
        rows = []
        for q, name in enumerate(PROBE_QUESTION_NAMES):
            for off in PROBE_OFFSETS:
                idx = ProbeDataset.feature_index(q, off)
                auc = fit_probe(dataset, idx)
                rows.append((name, off, auc))
        out = args.out or "probes.csv"
        with open(out, "w", encoding="utf-8") as f:
            f.write("feature,offset,aucroc\n")
            for name, off, auc in rows:
                f.write(f"{name},{off},{'' if auc is None else f'{auc:.4f}'}\n")
        defined = [r[2] for r in rows if r[2] is not None]
        mean = f"{np.mean(defined):.3f}" if defined else "n/a"
        print(f"wrote {out}; mean AUCROC over {len(defined)} defined features: {mean}")
    elif args.what == "neurons":
        dataset = build_probe_dataset(traces)
        for q, name in enumerate(PROBE_QUESTION_NAMES):
            idx = ProbeDataset.feature_index(q, 0)
            valid = dataset.labels[:, idx] >= 0
            labels = dataset.labels[valid, idx]
            if len(np.unique(labels)) < 2:
                continue
            result = selective_neuron(dataset.hidden[valid], labels)
            marker = " *distinct*" if result.is_distinct else ""
            print(f"{name:28s} neuron {result.neuron:4d} acc {result.accuracy:.3f}{marker}")
    elif args.what == "behaviour":
        model = fit_behaviour_model(traces, seed=args.seed)
        fp = behaviour_fingerprint(traces, model)
        out = args.out or "fingerprint.json"
        with open(out, "w", encoding="utf-8") as f:
            json.dump({"histogram": fp.tolist()}, f, indent=1)
        print(f"wrote {out}")
    return 0


def cmd_serve(args) -> int:
    from .server import RosterEntry, ServerConfig, serve_forever

    roster = []
    with open(args.roster, encoding="utf-8") as f:
        for entry in json.load(f):
            roster.append(RosterEntry(**entry))
    config = ServerConfig(
        port=args.port, roster=roster, tick_hz=args.tick_hz,
        team_size=args.team_size, episode_length=args.episode_length,
        map_sides=tuple(args.map_sides), seed=args.seed,
        match_log_path=args.match_log, static_dir=args.static_dir,
    )
    print(f"serving on ws://127.0.0.1:{args.port}/ws (ctrl-c to stop)")
    try:
        asyncio.run(serve_forever(config))
    except KeyboardInterrupt:
        pass
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gridctf",
                                     description="Grid CTF population training and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mapgen", help="generate an indoor map")
    p.add_argument("--side", type=int, default=13, choices=(13, 17))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_mapgen)

    p = sub.add_parser("train", help="run a training session from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--out-population", default=None)
    p.add_argument("--out-checkpoint", default=None)
    p.add_argument("--out-agents", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("tournament", help="ad-hoc evaluation tournament")
    p.add_argument("--agents", nargs="*", default=[], help="agent checkpoint files")
    p.add_argument("--bots", nargs="*", type=int, default=[], help="bot levels to include")
    p.add_argument("--games", type=int, default=100)
    p.add_argument("--map-sides", nargs="*", type=int, default=[13])
    p.add_argument("--team-size", type=int, default=2)
    p.add_argument("--episode-length", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="ratings CSV path")
    p.set_defaults(func=cmd_tournament)

    p = sub.add_parser("fetch", help="opponent-free flag-running evaluation")
    p.add_argument("--agent", required=True)
    p.add_argument("--games", type=int, default=200)
    p.add_argument("--map-sides", nargs="*", type=int, default=[13])
    p.add_argument("--episode-length", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fetch)

    p = sub.add_parser("record", help="record analysis episodes for an agent")
    p.add_argument("--agent", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--map-side", type=int, default=13)
    p.add_argument("--episode-length", type=int, default=1000)
    p.add_argument("--bot-level", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("analyze", help="probes, selective neurons, behaviour fingerprints")
    p.add_argument("what", choices=("probes", "neurons", "behaviour"))
    p.add_argument("--episodes", required=True, help="directory from `gridctf record`")
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("serve", help="host live matches for humans")
    p.add_argument("--port", type=int, default=8750)
    p.add_argument("--roster", required=True, help="JSON roster file")
    p.add_argument("--tick-hz", type=float, default=7.5)
    p.add_argument("--team-size", type=int, default=2)
    p.add_argument("--episode-length", type=int, default=450)
    p.add_argument("--map-sides", nargs="*", type=int, default=[13])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--match-log", default=None)
    p.add_argument("--static-dir", default=None)
    p.set_defaults(func=cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
