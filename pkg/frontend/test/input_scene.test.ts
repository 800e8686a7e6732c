import { describe, expect, it } from 'vitest';
import { KeyboardAxes, mapGamepad } from '../src/input.js';
import {
  DEFAULT_GEOMETRY,
  blockOutline,
  computeScene,
  pegPolygon,
} from '../src/scene.js';
import type { StateFrame } from '../src/protocol.js';

describe('keyboard axes', () => {
  it('maps held keys to saturated axes', () => {
    const kb = new KeyboardAxes(2);
    kb.keyDown('ArrowRight');
    kb.keyDown('KeyA');
    const s = kb.sample();
    expect(s.axes).toEqual([1, -1]);
    expect(s.override).toBe(false);
  });

  it('space holds the override, release drops it', () => {
    const kb = new KeyboardAxes(2);
    kb.keyDown('Space');
    expect(kb.sample().override).toBe(true);
    kb.keyUp('Space');
    expect(kb.sample().override).toBe(false);
  });

  it('stop button is edge triggered once per press', () => {
    const kb = new KeyboardAxes(2);
    kb.keyDown('Enter');
    expect(kb.sample().stopButton).toBe(true);
    expect(kb.sample().stopButton).toBe(false); // still held, no re-fire
    kb.keyUp('Enter');
    kb.keyDown('Enter');
    expect(kb.sample().stopButton).toBe(true);
  });

  it('releaseAll clears stuck keys on focus loss', () => {
    const kb = new KeyboardAxes(2);
    kb.keyDown('ArrowLeft');
    kb.keyDown('Space');
    kb.releaseAll();
    const s = kb.sample();
    expect(s.axes).toEqual([0, 0]);
    expect(s.override).toBe(false);
  });
});

describe('gamepad mapping', () => {
  it('applies a dead zone and clamps', () => {
    const s = mapGamepad([0.04, 0, 0, -1.4], [], 2);
    expect(s.axes).toEqual([0, -1]);
  });

  it('face buttons act as override', () => {
    const buttons = [{ pressed: false }, { pressed: true }];
    const s = mapGamepad([0, 0, 0, 0], buttons, 2);
    expect(s.override).toBe(true);
  });
});

function frame(pose: [number, number, number],
               wrench: [number, number, number]): StateFrame {
  return {
    type: 'state', tick: 1, episode: 0, primitive: 'insert',
    pose, velocity: [0, 0, 0], wrench, image: null, intervened: false,
    metrics: {},
  };
}

describe('scene geometry', () => {
  it('peg polygon translates with the pose', () => {
    const poly = pegPolygon(5, 2, 0, DEFAULT_GEOMETRY);
    expect(poly[0][0]).toBeCloseTo(0); // x - w/2
    expect(poly[1][0]).toBeCloseTo(10);
    expect(poly[2][1]).toBeCloseTo(32); // z + length
  });

  it('rotation by 90 degrees swaps extents', () => {
    const poly = pegPolygon(0, 0, 90, DEFAULT_GEOMETRY);
    // the tip edge becomes vertical: first two corners share x≈0 offsets in z
    expect(poly[0][1]).toBeCloseTo(-5);
    expect(poly[1][1]).toBeCloseTo(5);
    // the far end extends in -x
    expect(poly[2][0]).toBeCloseTo(-30);
  });

  it('block outline carves the slot at its center', () => {
    const o = blockOutline(DEFAULT_GEOMETRY);
    expect(o.length).toBe(6);
    expect(o[1][0]).toBeCloseTo(-5.15);
    expect(o[2][1]).toBeCloseTo(-12);
  });

  it('zero wrench draws no force arrow', () => {
    const model = computeScene(frame([0, 5, 0], [0, 0, 0]));
    expect(model.forceArrow).toBeNull();
  });

  it('force arrow points along the wrench', () => {
    const model = computeScene(frame([0, 5, 0], [0, 2, 0]));
    expect(model.forceArrow).not.toBeNull();
    expect(model.forceArrow!.to[1]).toBeGreaterThan(model.forceArrow!.from[1]);
  });
});
