// Keyboard / gamepad bindings onto the adaptive primitive's action axes.
// Axis 0: lateral velocity (x), axis 1: rotation velocity (c).
// Space holds the override, Enter fires the stop/label button.

export interface InputState {
  axes: number[];
  override: boolean;
  stopButton: boolean;
}

export interface KeyBindings {
  axisNeg: string[];   // per action dim
  axisPos: string[];
  override: string;
  stop: string;
}

export const DEFAULT_BINDINGS: KeyBindings = {
  axisNeg: ['ArrowLeft', 'KeyA'],
  axisPos: ['ArrowRight', 'KeyD'],
  override: 'Space',
  stop: 'Enter',
};

export class KeyboardAxes {
  private held = new Set<string>();
  private stopEdge = false;
  readonly bindings: KeyBindings;
  readonly actDim: number;

  constructor(actDim = 2, bindings: KeyBindings = DEFAULT_BINDINGS) {
    this.actDim = actDim;
    this.bindings = bindings;
  }

  keyDown(code: string): void {
    if (code === this.bindings.stop && !this.held.has(code)) {
      this.stopEdge = true;
    }
    this.held.add(code);
  }

  keyUp(code: string): void {
    this.held.delete(code);
  }

  // One sample per control tick; the stop button is edge-triggered.
  sample(): InputState {
    const axes = new Array(this.actDim).fill(0);
    if (this.held.has(this.bindings.axisNeg[0])) axes[0] -= 1;
    if (this.held.has(this.bindings.axisPos[0])) axes[0] += 1;
    if (this.actDim > 1) {
      if (this.held.has(this.bindings.axisNeg[1])) axes[1] -= 1;
      if (this.held.has(this.bindings.axisPos[1])) axes[1] += 1;
    }
    const state = {
      axes,
      override: this.held.has(this.bindings.override),
      stopButton: this.stopEdge,
    };
    this.stopEdge = false;
    return state;
  }

  releaseAll(): void {
    this.held.clear();
    this.stopEdge = false;
  }
}

// Gamepad axes are mapped directly with a small dead zone; any face
// button acts as override, start button as stop.
export function mapGamepad(
  axes: readonly number[],
  buttons: readonly { pressed: boolean }[],
  actDim = 2,
  deadZone = 0.08,
): InputState {
  const out = new Array(actDim).fill(0);
  const src = [axes[0] ?? 0, axes[3] ?? axes[1] ?? 0];
  for (let i = 0; i < actDim && i < src.length; i++) {
    out[i] = Math.abs(src[i]) < deadZone ? 0 : Math.max(-1, Math.min(1, src[i]));
  }
  const override = buttons.some((b, i) => i < 4 && b.pressed);
  const stopButton = buttons[9]?.pressed ?? false;
  return { axes: out, override, stopButton };
}
