// Scripted headless client for protocol conformance against a live server.
//
// Usage: node dist/headless.js [host] [port] [name]
// Plays a full match (walking forward every tick), then prints its action
// log as JSON so it can be compared with the server's applied-action log.

import WebSocket from "ws";

import { GameClient, SocketLike } from "./client.js";
import { encodeAction, MOVE_FORWARD, TURN_NONE } from "./input.js";

function wsAdapter(url: string): SocketLike {
  const ws = new WebSocket(url);
  const adapter: SocketLike = {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
    onerror: null,
  };
  ws.on("open", () => adapter.onopen?.());
  ws.on("message", (data) => adapter.onmessage?.({ data: data.toString() }));
  ws.on("close", () => adapter.onclose?.());
  ws.on("error", () => adapter.onerror?.());
  return adapter;
}

export function playMatch(host: string, port: number, name: string): Promise<{
  actionLog: Array<[number, number]>;
  finalScore: [number, number];
}> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => reject(new Error("match timed out")), 120_000);
    const client = new GameClient(
      wsAdapter(`ws://${host}:${port}/ws`),
      name,
      () => encodeAction(MOVE_FORWARD, TURN_NONE, 0),
      {
        onScore: (msg) => {
          clearTimeout(timer);
          client.close();
          resolve({ actionLog: client.actionLog, finalScore: msg.final_score });
        },
        onStatus: (status) => {
          if (status === "error") {
            clearTimeout(timer);
            reject(new Error("connection failed"));
          }
        },
      },
    );
  });
}

const isMain = process.argv[1]?.endsWith("headless.js");
if (isMain) {
  const [host = "127.0.0.1", port = "8750", name = "headless_ts"] = process.argv.slice(2);
  playMatch(host, Number(port), name)
    .then((result) => {
      console.log(JSON.stringify(result));
    })
    .catch((err) => {
      console.error(String(err));
      process.exit(1);
    });
}
