// Canvas rendering: a pure function of the last frame plus the static map.

import { FrameMsg, JoinedMsg } from "./protocol.js";

export const CELL = 32;

const CELL_COLOURS: Record<string, string> = {
  "#": "#262626",
  ".": "#b9b9b9",
  c: "#d8cf9a",
  r: "#d98c8c",
  b: "#8ca3d9",
  R: "#d98c8c",
  B: "#8ca3d9",
};

const TEAM_COLOURS = ["#c0392b", "#2a5bb7"]; // red, blue

type Ctx = CanvasRenderingContext2D;

export function canvasSize(side: number): number {
  return side * CELL;
}

export function drawMap(ctx: Ctx, map: JoinedMsg["map"]): void {
  for (let r = 0; r < map.side; r++) {
    for (let c = 0; c < map.side; c++) {
      ctx.fillStyle = CELL_COLOURS[map.rows[r][c]] ?? "#ff00ff";
      ctx.fillRect(c * CELL, r * CELL, CELL, CELL);
    }
  }
  // flag stands get a ring so they stay visible under players
  for (let r = 0; r < map.side; r++) {
    for (let c = 0; c < map.side; c++) {
      const ch = map.rows[r][c];
      if (ch === "R" || ch === "B") {
        ctx.strokeStyle = "#222";
        ctx.lineWidth = 2;
        ctx.beginPath();
        ctx.arc((c + 0.5) * CELL, (r + 0.5) * CELL, CELL * 0.38, 0, Math.PI * 2);
        ctx.stroke();
      }
    }
  }
}

function drawFlag(ctx: Ctx, cell: [number, number], team: number): void {
  const [r, c] = cell;
  const x = (c + 0.5) * CELL;
  const y = (r + 0.5) * CELL;
  ctx.fillStyle = TEAM_COLOURS[team];
  ctx.beginPath();
  ctx.moveTo(x - CELL * 0.1, y + CELL * 0.3);
  ctx.lineTo(x - CELL * 0.1, y - CELL * 0.35);
  ctx.lineTo(x + CELL * 0.3, y - CELL * 0.15);
  ctx.closePath();
  ctx.fill();
  ctx.strokeStyle = "#111";
  ctx.beginPath();
  ctx.moveTo(x - CELL * 0.1, y + CELL * 0.35);
  ctx.lineTo(x - CELL * 0.1, y - CELL * 0.35);
  ctx.stroke();
}

const FACING_ANGLES = [-Math.PI / 2, 0, Math.PI / 2, Math.PI]; // N E S W

export function drawFrame(ctx: Ctx, map: JoinedMsg["map"], frame: FrameMsg): void {
  drawMap(ctx, map);
  for (const flag of frame.flags) {
    let cell: [number, number] | null = flag.cell;
    if (flag.status === 0) {
      cell = standCell(map, flag.team);
    } else if (flag.status === 1 && flag.carrier !== null) {
      cell = frame.players[flag.carrier].pos;
    }
    if (cell) drawFlag(ctx, cell, flag.team);
  }
  for (const p of frame.players) {
    if (!p.pos) continue;
    const [r, c] = p.pos;
    const x = (c + 0.5) * CELL;
    const y = (r + 0.5) * CELL;
    ctx.fillStyle = TEAM_COLOURS[p.team];
    ctx.beginPath();
    ctx.arc(x, y, CELL * 0.3, 0, Math.PI * 2);
    ctx.fill();
    // facing tick
    const a = FACING_ANGLES[p.facing];
    ctx.strokeStyle = "#fff";
    ctx.lineWidth = 3;
    ctx.beginPath();
    ctx.moveTo(x, y);
    ctx.lineTo(x + Math.cos(a) * CELL * 0.32, y + Math.sin(a) * CELL * 0.32);
    ctx.stroke();
    if (p.slot === frame.you) {
      ctx.strokeStyle = "#ffe84a";
      ctx.lineWidth = 2.5;
      ctx.beginPath();
      ctx.arc(x, y, CELL * 0.42, 0, Math.PI * 2);
      ctx.stroke();
    }
    if (p.has_flag) {
      ctx.fillStyle = TEAM_COLOURS[1 - p.team];
      ctx.fillRect(x - 4, y - CELL * 0.52, 8, 8);
    }
  }
}

export function standCell(map: JoinedMsg["map"], team: number): [number, number] | null {
  const want = team === 0 ? "R" : "B";
  for (let r = 0; r < map.side; r++) {
    const c = map.rows[r].indexOf(want);
    if (c >= 0) return [r, c];
  }
  return null;
}

export function scoreboardText(frame: FrameMsg): string {
  const flagWords = ["at base", "carried", "dropped"];
  const red = frame.flags[0];
  const blue = frame.flags[1];
  return (
    `red ${frame.score[0]} : ${frame.score[1]} blue  |  ` +
    `red flag ${flagWords[red.status]}, blue flag ${flagWords[blue.status]}  |  ` +
    `${frame.time_remaining} ticks left` +
    (frame.latency_ms !== undefined ? `  |  ${frame.latency_ms.toFixed(0)} ms` : "")
  );
}
