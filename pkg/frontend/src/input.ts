// Keyboard state -> composite action index.
//
// The action space is move (5) x turn (3) x tag (2), encoded as
// move * 6 + turn * 2 + tag, 30 actions total.  WASD moves (W forward,
// S backward, A/D strafe), arrow keys or Q/E turn, space tags.

export const MOVE_NOOP = 0;
export const MOVE_FORWARD = 1;
export const MOVE_BACKWARD = 2;
export const MOVE_STRAFE_LEFT = 3;
export const MOVE_STRAFE_RIGHT = 4;
export const TURN_NONE = 0;
export const TURN_LEFT = 1;
export const TURN_RIGHT = 2;
export const NUM_ACTIONS = 30;

export interface Keys {
  forward: boolean;
  backward: boolean;
  strafeLeft: boolean;
  strafeRight: boolean;
  turnLeft: boolean;
  turnRight: boolean;
  tag: boolean;
}

export function emptyKeys(): Keys {
  return {
    forward: false,
    backward: false,
    strafeLeft: false,
    strafeRight: false,
    turnLeft: false,
    turnRight: false,
    tag: false,
  };
}

export function encodeAction(move: number, turn: number, tag: number): number {
  return move * 6 + turn * 2 + tag;
}

export function inputToAction(keys: Keys): number {
  let move = MOVE_NOOP;
  if (keys.forward) move = MOVE_FORWARD;
  else if (keys.backward) move = MOVE_BACKWARD;
  else if (keys.strafeLeft) move = MOVE_STRAFE_LEFT;
  else if (keys.strafeRight) move = MOVE_STRAFE_RIGHT;
  let turn = TURN_NONE;
  if (keys.turnLeft) turn = TURN_LEFT;
  else if (keys.turnRight) turn = TURN_RIGHT;
  return encodeAction(move, turn, keys.tag ? 1 : 0);
}

const KEY_MAP: Record<string, keyof Keys> = {
  w: "forward",
  arrowup: "forward",
  s: "backward",
  arrowdown: "backward",
  a: "strafeLeft",
  d: "strafeRight",
  q: "turnLeft",
  arrowleft: "turnLeft",
  e: "turnRight",
  arrowright: "turnRight",
  " ": "tag",
};

export function keyFor(eventKey: string): keyof Keys | null {
  return KEY_MAP[eventKey.toLowerCase()] ?? null;
}

export function attachKeyboard(keys: Keys, target: {
  addEventListener(type: string, cb: (e: KeyboardEvent) => void): void;
}): void {
  target.addEventListener("keydown", (e: KeyboardEvent) => {
    const k = keyFor(e.key);
    if (k) {
      keys[k] = true;
      e.preventDefault?.();
    }
  });
  target.addEventListener("keyup", (e: KeyboardEvent) => {
    const k = keyFor(e.key);
    if (k) keys[k] = false;
  });
}
