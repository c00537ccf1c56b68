import { describe, expect, it } from "vitest";

import { GameClient, SocketLike } from "../src/client.js";
import { FrameMsg } from "../src/protocol.js";

class FakeSocket implements SocketLike {
  sent: string[] = [];
  closed = false;
  onopen: ((ev?: unknown) => void) | null = null;
  onmessage: ((ev: { data: unknown }) => void) | null = null;
  onclose: ((ev?: unknown) => void) | null = null;
  onerror: ((ev?: unknown) => void) | null = null;

  send(data: string): void {
    this.sent.push(data);
  }

  close(): void {
    this.closed = true;
  }

  open(): void {
    this.onopen?.();
  }

  push(obj: unknown): void {
    this.onmessage?.({ data: JSON.stringify(obj) });
  }
}

function frame(tick: number, extra: Partial<FrameMsg> = {}): FrameMsg {
  return {
    type: "frame",
    tick,
    score: [0, 0],
    time_remaining: 100 - tick,
    players: [],
    flags: [],
    you: 0,
    ...extra,
  };
}

function setup(actions: () => number = () => 7) {
  const socket = new FakeSocket();
  const frames: number[] = [];
  const client = new GameClient(socket, "tester", actions, {
    onFrame: (f) => frames.push(f.tick),
  });
  socket.open();
  return { socket, client, frames };
}

describe("GameClient", () => {
  it("joins on open", () => {
    const { socket } = setup();
    expect(JSON.parse(socket.sent[0])).toEqual({ type: "join", name: "tester" });
  });

  it("answers each frame with exactly one act", () => {
    const { socket, client } = setup(() => 13);
    socket.push(frame(1));
    socket.push(frame(2));
    const acts = socket.sent.slice(1).map((s) => JSON.parse(s));
    expect(acts).toEqual([
      { type: "act", tick: 1, action: 13 },
      { type: "act", tick: 2, action: 13 },
    ]);
    expect(client.actionLog).toEqual([[1, 13], [2, 13]]);
  });

  it("ignores stale frames", () => {
    const { socket, client, frames } = setup();
    socket.push(frame(5));
    socket.push(frame(3)); // stale: never overwrites
    socket.push(frame(5)); // duplicate: ignored
    expect(frames).toEqual([5]);
    expect(client.lastFrame?.tick).toBe(5);
    expect(socket.sent.length).toBe(2); // join + one act
  });

  it("does not act on the final frame", () => {
    const { socket } = setup();
    socket.push(frame(100, { time_remaining: 0 }));
    expect(socket.sent.length).toBe(1); // join only
  });

  it("echoes ping tokens as pong", () => {
    const { socket } = setup();
    socket.push(frame(30, { ping: 30 }));
    const act = JSON.parse(socket.sent[1]);
    expect(act.pong).toBe(30);
  });

  it("reports score and errors through callbacks", () => {
    const socket = new FakeSocket();
    let final: unknown = null;
    let errorMessage = "";
    new GameClient(socket, "x", () => 0, {
      onScore: (msg) => (final = msg.final_score),
      onError: (msg) => (errorMessage = msg),
    });
    socket.open();
    socket.push({ type: "error", message: "invalid action" });
    socket.push({
      type: "score", final_score: [2, 1], y: 0, your_team: 0, team_results: [1, 0],
    });
    expect(errorMessage).toBe("invalid action");
    expect(final).toEqual([2, 1]);
  });

  it("ignores malformed and unknown messages", () => {
    const { socket, frames } = setup();
    socket.onmessage?.({ data: "not json at all" });
    socket.push({ type: "mystery" });
    socket.push({ no_type: true });
    expect(frames).toEqual([]);
    expect(socket.sent.length).toBe(1);
  });

  it("tracks connection status", () => {
    const socket = new FakeSocket();
    const statuses: string[] = [];
    new GameClient(socket, "x", () => 0, { onStatus: (s) => statuses.push(s) });
    socket.open();
    socket.onclose?.();
    expect(statuses).toEqual(["open", "closed"]);
  });
});
