// Browser entry point: DOM wiring for the live match client.

import { connect, GameClient } from "./client.js";
import { attachKeyboard, emptyKeys, inputToAction } from "./input.js";
import { canvasSize, drawFrame, scoreboardText } from "./render.js";
import { FrameMsg, JoinedMsg } from "./protocol.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const canvas = el<HTMLCanvasElement>("board");
const banner = el<HTMLDivElement>("banner");
const scoreboard = el<HTMLDivElement>("scoreboard");
const joinButton = el<HTMLButtonElement>("join");
const nameInput = el<HTMLInputElement>("name");

const keys = emptyKeys();
attachKeyboard(keys, window as unknown as {
  addEventListener(type: string, cb: (e: KeyboardEvent) => void): void;
});

let client: GameClient | null = null;
let map: JoinedMsg["map"] | null = null;

function showBanner(text: string, tone: "info" | "bad" | "good" = "info"): void {
  banner.textContent = text;
  banner.dataset.tone = tone;
  banner.style.display = text ? "block" : "none";
}

function renderFrame(frame: FrameMsg): void {
  if (!map) return;
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  drawFrame(ctx, map, frame);
  scoreboard.textContent = scoreboardText(frame);
}

function join(): void {
  const url = `ws://${location.host}/ws`;
  showBanner("connecting...");
  client = connect(url, nameInput.value || "player", () => inputToAction(keys), {
    onStatus: (status) => {
      if (status === "closed" || status === "error") {
        showBanner("connection lost - reload to rejoin", "bad");
      }
    },
    onJoined: (msg) => {
      map = msg.map;
      canvas.width = canvasSize(map.side);
      canvas.height = canvasSize(map.side);
      showBanner(`joined as slot ${msg.slot} (${msg.team === 0 ? "red" : "blue"} team)`, "good");
      setTimeout(() => showBanner(""), 2500);
    },
    onFrame: renderFrame,
    onScore: (msg) => {
      const yours = msg.team_results[msg.your_team];
      showBanner(
        `final ${msg.final_score[0]} : ${msg.final_score[1]} - you ${yours === 1 ? "win" : "lose"}`,
        yours === 1 ? "good" : "bad",
      );
    },
    onError: (message) => showBanner(message, "bad"),
  });
  joinButton.disabled = true;
}

joinButton.addEventListener("click", join);
