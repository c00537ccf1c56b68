// Wire protocol types for the match server (one JSON message per WebSocket
// text frame; see docs/protocol.md in the repository root).

export interface JoinedMsg {
  type: "joined";
  protocol: number;
  slot: number;
  team: number;
  name: string;
  map: { side: number; rows: string[] };
  tick_hz: number;
  episode_length: number;
}

export interface PlayerView {
  slot: number;
  team: number;
  pos: [number, number] | null;
  facing: number;
  has_flag: boolean;
  respawning: boolean;
}

export interface FlagView {
  team: number;
  status: number; // 0 at base, 1 carried, 2 stray
  cell: [number, number] | null;
  carrier: number | null;
}

export interface FrameMsg {
  type: "frame";
  tick: number;
  score: [number, number];
  time_remaining: number;
  players: PlayerView[];
  flags: FlagView[];
  you: number;
  ping?: number;
  latency_ms?: number;
}

export interface ScoreMsg {
  type: "score";
  final_score: [number, number];
  y: number;
  your_team: number;
  team_results: [number, number];
}

export interface ErrorMsg {
  type: "error";
  message: string;
}

export type ServerMsg = JoinedMsg | FrameMsg | ScoreMsg | ErrorMsg;

export interface ActMsg {
  type: "act";
  tick: number;
  action: number;
  pong?: number;
}

export interface JoinMsg {
  type: "join";
  name: string;
}

export function parseServerMsg(data: string): ServerMsg | null {
  let obj: unknown;
  try {
    obj = JSON.parse(data);
  } catch {
    return null;
  }
  if (typeof obj !== "object" || obj === null || !("type" in obj)) return null;
  const type = (obj as { type: unknown }).type;
  if (type === "joined" || type === "frame" || type === "score" || type === "error") {
    return obj as ServerMsg;
  }
  return null;
}
