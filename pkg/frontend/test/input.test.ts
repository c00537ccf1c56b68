import { describe, expect, it } from "vitest";

import {
  emptyKeys,
  encodeAction,
  inputToAction,
  keyFor,
  Keys,
  MOVE_FORWARD,
  NUM_ACTIONS,
  TURN_NONE,
} from "../src/input.js";

function keysFrom(partial: Partial<Keys>): Keys {
  return { ...emptyKeys(), ...partial };
}

describe("inputToAction", () => {
  it("maps no keys to the no-op action", () => {
    expect(inputToAction(emptyKeys())).toBe(0);
    expect(inputToAction(emptyKeys())).toBe(encodeAction(0, TURN_NONE, 0));
  });

  it("maps forward + tag to (forward, none, tag)", () => {
    expect(inputToAction(keysFrom({ forward: true, tag: true }))).toBe(
      encodeAction(MOVE_FORWARD, TURN_NONE, 1),
    );
  });

  it("maps every reachable key combination into [0, 30)", () => {
    const bools = [false, true];
    const seen = new Set<number>();
    for (const forward of bools)
      for (const backward of bools)
        for (const strafeLeft of bools)
          for (const strafeRight of bools)
            for (const turnLeft of bools)
              for (const turnRight of bools)
                for (const tag of bools) {
                  const action = inputToAction({
                    forward, backward, strafeLeft, strafeRight, turnLeft, turnRight, tag,
                  });
                  expect(action).toBeGreaterThanOrEqual(0);
                  expect(action).toBeLessThan(NUM_ACTIONS);
                  seen.add(action);
                }
    // all 5 moves x 3 turns x 2 tags are reachable
    expect(seen.size).toBe(NUM_ACTIONS);
  });

  it("gives forward precedence over other moves", () => {
    const action = inputToAction(keysFrom({ forward: true, backward: true, strafeLeft: true }));
    expect(Math.floor(action / 6)).toBe(MOVE_FORWARD);
  });
});

describe("keyFor", () => {
  it("recognises WASD, arrows, Q/E and space", () => {
    expect(keyFor("w")).toBe("forward");
    expect(keyFor("W")).toBe("forward");
    expect(keyFor("ArrowUp")).toBe("forward");
    expect(keyFor("s")).toBe("backward");
    expect(keyFor("a")).toBe("strafeLeft");
    expect(keyFor("d")).toBe("strafeRight");
    expect(keyFor("q")).toBe("turnLeft");
    expect(keyFor("ArrowLeft")).toBe("turnLeft");
    expect(keyFor("e")).toBe("turnRight");
    expect(keyFor(" ")).toBe("tag");
    expect(keyFor("x")).toBeNull();
  });
});
