// Connection state machine: join, consume frames, answer each frame with
// at most one act message.  Rendering is driven by callbacks; the client
// performs no simulation of its own, the server is authoritative.

import {
  ActMsg,
  FrameMsg,
  JoinedMsg,
  ScoreMsg,
  ServerMsg,
  parseServerMsg,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "open" | "closed" | "error";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export interface ClientCallbacks {
  onStatus?(status: ConnectionStatus): void;
  onJoined?(msg: JoinedMsg): void;
  onFrame?(msg: FrameMsg): void;
  onScore?(msg: ScoreMsg): void;
  onError?(message: string): void;
}

export class GameClient {
  joined: JoinedMsg | null = null;
  lastFrame: FrameMsg | null = null;
  status: ConnectionStatus = "connecting";
  actionLog: Array<[number, number]> = [];

  private lastActTick = -1;

  constructor(
    private socket: SocketLike,
    private name: string,
    private actionSource: () => number,
    private callbacks: ClientCallbacks = {},
  ) {
    socket.onopen = () => {
      this.setStatus("open");
      this.socket.send(JSON.stringify({ type: "join", name: this.name }));
    };
    socket.onmessage = (ev) => this.handleMessage(String(ev.data));
    socket.onclose = () => this.setStatus("closed");
    socket.onerror = () => this.setStatus("error");
  }

  private setStatus(status: ConnectionStatus): void {
    this.status = status;
    this.callbacks.onStatus?.(status);
  }

  handleMessage(data: string): void {
    const msg = parseServerMsg(data);
    if (msg === null) return;
    switch (msg.type) {
      case "joined":
        this.joined = msg;
        this.callbacks.onJoined?.(msg);
        break;
      case "frame":
        this.handleFrame(msg);
        break;
      case "score":
        this.callbacks.onScore?.(msg);
        break;
      case "error":
        this.callbacks.onError?.(msg.message);
        break;
    }
  }

  private handleFrame(frame: FrameMsg): void {
    // stale frames never overwrite newer ones
    if (this.lastFrame !== null && frame.tick <= this.lastFrame.tick) return;
    this.lastFrame = frame;
    this.callbacks.onFrame?.(frame);
    if (frame.time_remaining <= 0) return; // match over; score follows
    if (frame.tick === this.lastActTick) return; // one act per server tick
    this.lastActTick = frame.tick;
    const act: ActMsg = {
      type: "act",
      tick: frame.tick,
      action: this.actionSource(),
    };
    if (frame.ping !== undefined) act.pong = frame.ping;
    this.actionLog.push([act.tick, act.action]);
    this.socket.send(JSON.stringify(act));
  }

  close(): void {
    this.socket.close();
  }
}

export function connect(
  url: string,
  name: string,
  actionSource: () => number,
  callbacks: ClientCallbacks = {},
  socketFactory?: (url: string) => SocketLike,
): GameClient {
  const factory = socketFactory ?? ((u: string) => new WebSocket(u) as unknown as SocketLike);
  return new GameClient(factory(url), name, actionSource, callbacks);
}
