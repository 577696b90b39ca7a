/**
 * Orbit camera around a target point, plus screen/world conversions.
 *
 * The projection is a simple perspective pinhole; picking unprojects a
 * screen point to a unit world ray through the camera origin, which the
 * server intersects against the splats (the client never does geometry).
 */

import { Vec3 } from './types.js';

export interface OrbitState {
  target: Vec3;
  distance: number;
  azimuth: number;   // radians around +z
  elevation: number; // radians above the xy plane
  fovY: number;      // radians
}

export function defaultOrbit(center: Vec3, radius: number): OrbitState {
  return {
    target: { ...center },
    distance: Math.max(radius * 2.5, 1e-3),
    azimuth: Math.PI / 4,
    elevation: Math.PI / 6,
    fovY: (45 * Math.PI) / 180,
  };
}

export function cameraPosition(orbit: OrbitState): Vec3 {
  const ce = Math.cos(orbit.elevation);
  return {
    x: orbit.target.x + orbit.distance * ce * Math.cos(orbit.azimuth),
    y: orbit.target.y + orbit.distance * ce * Math.sin(orbit.azimuth),
    z: orbit.target.z + orbit.distance * Math.sin(orbit.elevation),
  };
}

function sub(a: Vec3, b: Vec3): Vec3 {
  return { x: a.x - b.x, y: a.y - b.y, z: a.z - b.z };
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return {
    x: a.y * b.z - a.z * b.y,
    y: a.z * b.x - a.x * b.z,
    z: a.x * b.y - a.y * b.x,
  };
}

function dot(a: Vec3, b: Vec3): number {
  return a.x * b.x + a.y * b.y + a.z * b.z;
}

export function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v.x, v.y, v.z);
  if (n === 0) return { x: 0, y: 0, z: 1 };
  return { x: v.x / n, y: v.y / n, z: v.z / n };
}

export interface CameraBasis {
  origin: Vec3;
  forward: Vec3;
  right: Vec3;
  up: Vec3;
}

export function cameraBasis(orbit: OrbitState): CameraBasis {
  const origin = cameraPosition(orbit);
  const forward = normalize(sub(orbit.target, origin));
  const worldUp: Vec3 = { x: 0, y: 0, z: 1 };
  let right = cross(forward, worldUp);
  const rn = Math.hypot(right.x, right.y, right.z);
  right = rn < 1e-9 ? { x: 1, y: 0, z: 0 }
    : { x: right.x / rn, y: right.y / rn, z: right.z / rn };
  const up = cross(right, forward);
  return { origin, forward, right, up };
}

export interface Projected {
  x: number;   // pixels
  y: number;
  depth: number; // camera-space distance along forward, < 0 behind camera
}

/** Project a world point into pixel coordinates of a w-by-h canvas. */
export function project(orbit: OrbitState, w: number, h: number,
                        p: Vec3): Projected {
  const basis = cameraBasis(orbit);
  const rel = sub(p, basis.origin);
  const depth = dot(rel, basis.forward);
  const focal = (h / 2) / Math.tan(orbit.fovY / 2);
  const x = w / 2 + (dot(rel, basis.right) / depth) * focal;
  const y = h / 2 - (dot(rel, basis.up) / depth) * focal;
  return { x, y, depth };
}

/** Unproject a pixel to a unit world ray from the camera origin. */
export function pickRay(orbit: OrbitState, w: number, h: number,
                        px: number, py: number): { origin: Vec3; direction: Vec3 } {
  const basis = cameraBasis(orbit);
  const focal = (h / 2) / Math.tan(orbit.fovY / 2);
  const dx = (px - w / 2) / focal;
  const dy = (h / 2 - py) / focal;
  const direction = normalize({
    x: basis.forward.x + dx * basis.right.x + dy * basis.up.x,
    y: basis.forward.y + dx * basis.right.y + dy * basis.up.y,
    z: basis.forward.z + dx * basis.right.z + dy * basis.up.z,
  });
  return { origin: basis.origin, direction };
}

export function rotate(orbit: OrbitState, dAzimuth: number,
                       dElevation: number): OrbitState {
  const lim = Math.PI / 2 - 1e-3;
  return {
    ...orbit,
    azimuth: orbit.azimuth + dAzimuth,
    elevation: Math.min(lim, Math.max(-lim, orbit.elevation + dElevation)),
  };
}

export function zoom(orbit: OrbitState, factor: number): OrbitState {
  return { ...orbit, distance: Math.max(1e-4, orbit.distance * factor) };
}
