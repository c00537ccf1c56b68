"""Live match hosting: humans join over WebSocket and play alongside or
against agent checkpoints and scripted bots.

The tick task is the only mutator of a session's game state; connection
readers merely fill per-slot input buffers (latest action wins, stale
ticks are dropped).  Frames are pushed each tick without awaiting slow
clients, so one laggy connection can never stall the match.
"""

from __future__ import annotations

import asyncio
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import agent as agent_mod
from .env import NOOP_ACTION, NUM_ACTIONS, match_record, new_game, observe, outcome, step
from .harness import BotController, PolicyController, REWARD_QUAKE
from .mapgen import GenConfig, generate_indoor
from .maps import to_rows
from .rating import Ratings, fit, make_record
from .ws import WsClient, accept_key, read_message, send_json_frame

PROTOCOL_VERSION = 1
STALE_TICKS = 2
PING_INTERVAL_TICKS = 30
MAX_WRITE_BUFFER = 1 << 20

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".map": "application/json",
    ".json": "application/json",
}

_FALLBACK_PAGE = b"""<!doctype html>
<html><head><title>gridctf</title></head>
<body><h1>gridctf match server</h1>
<p>No web client bundle is configured; connect over the WebSocket protocol at <code>/ws</code>.</p>
</body></html>"""


@dataclass
class RosterEntry:
    kind: str  # "agent" or "bot"
    name: str
    path: str | None = None
    level: int | None = None
    tau: int | None = None


@dataclass
class ServerConfig:
    port: int = 8750
    host: str = "127.0.0.1"
    roster: list[RosterEntry] = field(default_factory=list)
    tick_hz: float = 7.5
    team_size: int = 2
    episode_length: int = 450
    map_sides: tuple[int, ...] = (13,)
    seed: int = 0
    match_log_path: str | None = None
    static_dir: str | None = None
    autostart_bots: bool = False  # run roster-only matches with no humans


@dataclass
class HumanSlot:
    name: str
    writer: asyncio.StreamWriter | None
    buffered: tuple[int, int] | None = None  # (tick, action)
    pong_token: int | None = None
    ping_sent_at: float = 0.0
    latency_ms: float | None = None
    action_log: list[tuple[int, int]] = field(default_factory=list)
    connected: bool = True


@dataclass
class SessionStats:
    tick_durations: list[float] = field(default_factory=list)
    final_score: list[int] | None = None
    flagged: bool = False


class MatchServer:
    def __init__(self, config: ServerConfig):
        self.config = config
        self.rng = np.random.default_rng(np.random.SeedSequence(entropy=config.seed, spawn_key=(12,)))
        self.participants: list[str] = [r.name for r in config.roster]
        self.lobby: list[tuple[str, asyncio.StreamWriter, asyncio.StreamReader]] = []
        self.session_task: asyncio.Task | None = None
        self.sessions_played = 0
        self.last_stats: SessionStats | None = None
        self.match_log: list[dict] = []
        self._last_human_logs: dict[str, list] = {}
        self._server: asyncio.AbstractServer | None = None
        self._conn_sessions: dict[int, tuple] = {}

    # -- lifecycle ----------------------------------------------------------

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._handle_conn, self.config.host, self.config.port)
        if self.config.autostart_bots:
            self.session_task = asyncio.create_task(self._run_session({}))

    async def stop(self) -> None:
        if self.session_task:
            self.session_task.cancel()
            try:
                await self.session_task
            except (asyncio.CancelledError, Exception):
                pass
        if self._server:
            self._server.close()
            await self._server.wait_closed()

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    # -- connection handling -------------------------------------------------

    async def _handle_conn(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        try:
            request_line = await reader.readline()
            if not request_line:
                writer.close()
                return
            parts = request_line.decode("latin1").split()
            if len(parts) < 2:
                writer.close()
                return
            method, path = parts[0], parts[1]
            headers = {}
            while True:
                line = await reader.readline()
                if line in (b"\r\n", b"", b"\n"):
                    break
                name, _, value = line.decode("latin1").partition(":")
                headers[name.strip().lower()] = value.strip()
            if headers.get("upgrade", "").lower() == "websocket":
                await self._handshake_ws(reader, writer, headers)
            elif method == "GET":
                self._serve_static(writer, path)
                await writer.drain()
                writer.close()
            else:
                writer.write(b"HTTP/1.1 405 Method Not Allowed\r\nContent-Length: 0\r\n\r\n")
                await writer.drain()
                writer.close()
        except (ConnectionError, asyncio.IncompleteReadError):
            writer.close()

    def _serve_static(self, writer: asyncio.StreamWriter, path: str) -> None:
        base = self.config.static_dir
        rel = "index.html" if path in ("/", "/index.html") else path.lstrip("/")
        body, ctype = None, "text/html; charset=utf-8"
        if base:
            full = os.path.realpath(os.path.join(base, rel))
            if full.startswith(os.path.realpath(base)) and os.path.isfile(full):
                with open(full, "rb") as f:
                    body = f.read()
                ctype = _CONTENT_TYPES.get(os.path.splitext(full)[1], "application/octet-stream")
        if body is None:
            if rel == "index.html":
                body = _FALLBACK_PAGE
            else:
                writer.write(b"HTTP/1.1 404 Not Found\r\nContent-Length: 0\r\n\r\n")
                return
        head = (
            f"HTTP/1.1 200 OK\r\nContent-Type: {ctype}\r\n"
            f"Content-Length: {len(body)}\r\nConnection: close\r\n\r\n"
        ).encode()
        writer.write(head + body)

    async def _handshake_ws(self, reader, writer, headers) -> None:
        key = headers.get("sec-websocket-key")
        if not key:
            writer.write(b"HTTP/1.1 400 Bad Request\r\n\r\n")
            await writer.drain()
            writer.close()
            return
        response = (
            "HTTP/1.1 101 Switching Protocols\r\n"
            "Upgrade: websocket\r\nConnection: Upgrade\r\n"
            f"Sec-WebSocket-Accept: {accept_key(key)}\r\n\r\n"
        )
        writer.write(response.encode())
        await writer.drain()
        await self._ws_loop(reader, writer)

    async def _ws_loop(self, reader, writer) -> None:
        slot_ref: dict | None = None
        while True:
            text = await read_message(reader, writer)
            if text is None:
                break
            try:
                msg = json.loads(text)
                mtype = msg.get("type")
            except (json.JSONDecodeError, AttributeError):
                send_json_frame(writer, {"type": "error", "message": "malformed message"})
                continue
            if mtype == "join":
                name = str(msg.get("name", "anonymous"))[:32]
                slot_ref = {"name": name, "writer": writer}
                self.lobby.append(slot_ref)
                if name not in self.participants:
                    self.participants.append(name)
                if self.session_task is None or self.session_task.done():
                    self.session_task = asyncio.create_task(self._start_session_from_lobby())
            elif mtype == "act":
                self._handle_act(writer, msg)
            elif mtype == "ping":
                send_json_frame(writer, {"type": "pong", "token": msg.get("token")})
            else:
                send_json_frame(writer, {"type": "error", "message": f"unknown type {mtype!r}"})
        # reader gone: mark the human slot disconnected
        session = self._conn_sessions.get(id(writer))
        if session is not None:
            human = session[1]
            human.connected = False
            human.writer = None

    def _handle_act(self, writer, msg) -> None:
        entry = self._conn_sessions.get(id(writer))
        if entry is None:
            send_json_frame(writer, {"type": "error", "message": "not in a running match"})
            return
        session_state, human = entry
        action = msg.get("action")
        tick = msg.get("tick", -1)
        if not isinstance(action, int) or not 0 <= action < NUM_ACTIONS:
            send_json_frame(writer, {"type": "error", "message": "invalid action"})
            return
        if not isinstance(tick, int) or tick < session_state["tick"] - STALE_TICKS:
            return  # stale input is silently dropped
        human.buffered = (tick, action)
        if msg.get("pong") is not None and msg["pong"] == human.pong_token:
            human.latency_ms = (time.monotonic() - human.ping_sent_at) * 1000.0
            human.pong_token = None

    # -- session ------------------------------------------------------------

    async def _start_session_from_lobby(self) -> None:
        humans = {}
        order = [0, 2, 1, 3] if self.config.team_size == 2 else list(range(2 * self.config.team_size))
        for slot in order:
            if not self.lobby:
                break
            entry = self.lobby.pop(0)
            humans[slot] = HumanSlot(name=entry["name"], writer=entry["writer"])
        await self._run_session(humans)

    def _build_controllers(self, humans: dict[int, HumanSlot]):
        controllers: dict[int, object] = {}
        roster = list(self.config.roster)
        names: dict[int, str] = {}
        for slot in range(2 * self.config.team_size):
            if slot in humans:
                names[slot] = humans[slot].name
                continue
            if not roster:
                raise RuntimeError("roster too small to fill the match")
            entry = roster.pop(0)
            names[slot] = entry.name
            if entry.kind == "bot":
                controllers[slot] = BotController(entry.level or 3, seed=int(self.rng.integers(0, 2**31)))
            else:
                params = agent_mod.load_agent(entry.path)
                controllers[slot] = PolicyController(
                    agent_id=0, params=params, tau=entry.tau or params.cfg.tau,
                    reward_source=REWARD_QUAKE, greedy=True, collect=False)
        return controllers, names

    async def _run_session(self, humans: dict[int, HumanSlot]) -> None:
        cfg = self.config
        stats = SessionStats()
        controllers, names = self._build_controllers(humans)
        side = int(self.rng.choice(np.array(cfg.map_sides)))
        map_seed = int(self.rng.integers(0, 2**63 - 1))
        map_spec = generate_indoor(GenConfig(side=side, seed=map_seed))
        state = new_game(map_spec, cfg.team_size, int(self.rng.integers(0, 2**63 - 1)),
                         episode_length=cfg.episode_length)
        tie_rng = np.random.default_rng(self.rng.integers(0, 2**63 - 1))
        for pid, ctrl in controllers.items():
            ctrl.begin(pid, state.players[pid].team,
                       np.random.default_rng(self.rng.integers(0, 2**63 - 1)))

        session_state = {"tick": 0}
        map_rows = to_rows(map_spec)
        for slot, human in humans.items():
            self._conn_sessions[id(human.writer)] = (session_state, human)
            send_json_frame(human.writer, {
                "type": "joined", "protocol": PROTOCOL_VERSION, "slot": slot,
                "team": state.players[slot].team, "name": human.name,
                "map": {"side": map_spec.side, "rows": map_rows},
                "tick_hz": cfg.tick_hz, "episode_length": cfg.episode_length,
            })

        events_log = []
        period = 1.0 / cfg.tick_hz
        loop = asyncio.get_running_loop()
        next_deadline = loop.time() + period
        done = False
        team_results = None
        last_tick_at = time.monotonic()
        while not done:
            session_state["tick"] = state.tick
            actions = {}
            for pid in range(len(state.players)):
                if pid in controllers:
                    actions[pid] = controllers[pid].act(state)
                else:
                    human = humans[pid]
                    if human.buffered is not None:
                        claimed_tick, action = human.buffered
                        actions[pid] = action
                        # Log under the client's tick so the applied stream is
                        # comparable with the client's own send log.
                        human.action_log.append((claimed_tick, action))
                        human.buffered = None
                    else:
                        actions[pid] = NOOP_ACTION
            state, events, done = step(state, actions)
            for pid in sorted(events):
                events_log.extend(events[pid])
            if done:
                team_results = outcome(state, tie_rng)
            for pid, ctrl in controllers.items():
                ctrl.observe_result(events[pid], done, team_results, state)
            self._push_frames(state, humans)
            now = time.monotonic()
            stats.tick_durations.append(now - last_tick_at)
            last_tick_at = now
            await asyncio.sleep(max(0.0, next_deadline - loop.time()))
            next_deadline += period

        stats.final_score = list(state.captures)
        stats.flagged = any(not h.connected for h in humans.values())
        agent_ids = [
            self.participants.index(names[slot]) if names[slot] in self.participants else -99
            for slot in range(len(state.players))
        ]
        record = match_record(state, agent_ids, events_log, map_seed, flagged=stats.flagged)
        record["participants"] = [names[s] for s in range(len(state.players))]
        record["participant_universe"] = list(self.participants)
        self.match_log.append(record)
        if cfg.match_log_path:
            with open(cfg.match_log_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(record, sort_keys=True) + "\n")
        for slot, human in humans.items():
            if human.writer is not None:
                send_json_frame(human.writer, {
                    "type": "score", "final_score": list(state.captures),
                    "y": record["y"], "your_team": state.players[slot].team,
                    "team_results": list(team_results),
                })
                self._conn_sessions.pop(id(human.writer), None)
        self.sessions_played += 1
        self.last_stats = stats
        self._last_human_logs = {h.name: list(h.action_log) for h in humans.values()}

    def _push_frames(self, state, humans: dict[int, HumanSlot]) -> None:
        base = {
            "type": "frame",
            "tick": state.tick,
            "score": list(state.captures),
            "time_remaining": state.episode_length - state.tick,
            "players": [
                {"slot": p.pid, "team": p.team,
                 "pos": list(p.pos) if p.pos else None,
                 "facing": p.facing, "has_flag": p.has_flag,
                 "respawning": p.respawning}
                for p in state.players
            ],
            "flags": [
                {"team": t, "status": f.status,
                 "cell": list(f.cell) if f.cell else None,
                 "carrier": f.carrier}
                for t, f in enumerate(state.flags)
            ],
        }
        for slot, human in humans.items():
            if human.writer is None or not human.connected:
                continue
            if human.writer.transport.get_write_buffer_size() > MAX_WRITE_BUFFER:
                human.connected = False
                human.writer = None
                continue
            frame = dict(base)
            frame["you"] = slot
            if human.latency_ms is not None:
                frame["latency_ms"] = round(human.latency_ms, 3)
            if state.tick % PING_INTERVAL_TICKS == 0:
                human.pong_token = state.tick
                human.ping_sent_at = time.monotonic()
                frame["ping"] = human.pong_token
            send_json_frame(human.writer, frame)


def fit_ratings_from_log(records: list[dict], anchor_name: str | None = None) -> tuple[list[str], Ratings]:
    """Rebuild a ratings table from served match records."""
    if not records:
        raise ValueError("no match records")
    names = records[-1]["participant_universe"]
    fitted = []
    for rec in records:
        blue, red = [], []
        for slot, team in enumerate(rec["teams"]):
            idx = names.index(rec["participants"][slot])
            (blue if team == 1 else red).append(idx)
        fitted.append(make_record(blue, red, rec["y"], len(names)))
    anchor = names.index(anchor_name) if anchor_name in (names or []) else 0
    return names, fit(fitted, anchor=anchor)


async def serve_forever(config: ServerConfig) -> None:
    server = MatchServer(config)
    await server.start()
    try:
        await asyncio.Event().wait()
    finally:
        await server.stop()


class HeadlessClient:
    """Scripted protocol client: joins, plays a policy over frames, records
    every action it sent."""

    def __init__(self, name: str, policy=None):
        self.name = name
        self.policy = policy or (lambda frame: NOOP_ACTION)
        self.action_log: list[tuple[int, int]] = []
        self.joined: dict | None = None
        self.final: dict | None = None
        self.frames_seen = 0

    async def play(self, host: str, port: int) -> None:
        client = await WsClient.connect(host, port)
        await client.send_json({"type": "join", "name": self.name})
        while True:
            msg = await client.recv_json(timeout=30)
            if msg is None:
                break
            if msg["type"] == "joined":
                self.joined = msg
            elif msg["type"] == "frame":
                self.frames_seen += 1
                if msg["time_remaining"] <= 0:
                    continue  # match over; the score message follows
                action = int(self.policy(msg))
                out = {"type": "act", "tick": msg["tick"], "action": action}
                if msg.get("ping") is not None:
                    out["pong"] = msg["ping"]
                self.action_log.append((msg["tick"], action))
                await client.send_json(out)
            elif msg["type"] == "score":
                self.final = msg
                break
        await client.close()
