// 2-D schematic scene model. Pure geometry: the renderer just strokes
// what this module computes, which keeps it testable without a canvas.

import type { StateFrame } from './protocol.js';

export interface SceneGeometry {
  pegWidth: number;     // mm
  pegLength: number;
  slotWidth: number;
  slotDepth: number;
  slotCenterX: number;
  blockHalfExtent: number;
}

export const DEFAULT_GEOMETRY: SceneGeometry = {
  pegWidth: 10,
  pegLength: 30,
  slotWidth: 10.3,
  slotDepth: 12,
  slotCenterX: 0,
  blockHalfExtent: 80,
};

export type Point = [number, number];

export interface SceneModel {
  pegPolygon: Point[];        // world mm, tip first
  blockOutline: Point[];      // polyline around the slot profile
  forceArrow: { from: Point; to: Point } | null;
  torqueIndicator: number;    // N*m, signed
  primitive: string;
  intervened: boolean;
}

export function pegPolygon(
  x: number,
  z: number,
  cDeg: number,
  geom: SceneGeometry,
): Point[] {
  const w = geom.pegWidth / 2;
  const L = geom.pegLength;
  const body: Point[] = [
    [-w, 0],
    [w, 0],
    [w, L],
    [-w, L],
  ];
  const c = (cDeg * Math.PI) / 180;
  const cos = Math.cos(c);
  const sin = Math.sin(c);
  return body.map(([bx, bz]) => [
    x + cos * bx - sin * bz,
    z + sin * bx + cos * bz,
  ]);
}

export function blockOutline(geom: SceneGeometry): Point[] {
  const hw = geom.slotWidth / 2;
  const cx = geom.slotCenterX;
  const e = geom.blockHalfExtent;
  const d = geom.slotDepth;
  return [
    [-e, 0],
    [cx - hw, 0],
    [cx - hw, -d],
    [cx + hw, -d],
    [cx + hw, 0],
    [e, 0],
  ];
}

// Force arrows are drawn at a fixed mm-per-newton scale; zero wrench
// draws nothing.
export const FORCE_SCALE_MM_PER_N = 2.0;

export function computeScene(
  frame: StateFrame,
  geom: SceneGeometry = DEFAULT_GEOMETRY,
): SceneModel {
  const [x, z] = frame.pose;
  const [fx, fz, mc] = frame.wrench;
  const mag = Math.hypot(fx, fz);
  const forceArrow =
    mag > 1e-9
      ? {
          from: [x, z] as Point,
          to: [
            x + fx * FORCE_SCALE_MM_PER_N,
            z + fz * FORCE_SCALE_MM_PER_N,
          ] as Point,
        }
      : null;
  return {
    pegPolygon: pegPolygon(x, z, frame.pose[2], geom),
    blockOutline: blockOutline(geom),
    forceArrow,
    torqueIndicator: mc,
    primitive: frame.primitive,
    intervened: frame.intervened,
  };
}
