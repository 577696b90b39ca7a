/**
 * 2D-canvas point renderer: projected discs, painter-sorted back to front.
 *
 * Discs are cheap and adequate for picking feedback; actual selection
 * geometry always comes from the server.  Disc size follows a global
 * heuristic radius (the point buffer intentionally carries only positions
 * and colors).
 */

import { OrbitState, project } from './camera.js';
import { ViewState } from './state.js';

export interface RenderOptions {
  pointRadiusWorld: number;  // world-space disc radius
  background: string;
}

export const DEFAULT_OPTIONS: RenderOptions = {
  pointRadiusWorld: 0.004,
  background: '#181c20',
};

export function renderCloud(ctx: CanvasRenderingContext2D, orbit: OrbitState,
                            state: ViewState,
                            options: RenderOptions = DEFAULT_OPTIONS): void {
  const w = ctx.canvas.width;
  const h = ctx.canvas.height;
  ctx.fillStyle = options.background;
  ctx.fillRect(0, 0, w, h);

  const cloud = state.cloud;
  const order: { index: number; x: number; y: number; depth: number }[] = [];
  for (let i = 0; i < cloud.count; i++) {
    const p = project(orbit, w, h, {
      x: cloud.positions[3 * i],
      y: cloud.positions[3 * i + 1],
      z: cloud.positions[3 * i + 2],
    });
    if (p.depth <= 0) continue;
    order.push({ index: i, x: p.x, y: p.y, depth: p.depth });
  }
  order.sort((a, b) => b.depth - a.depth);

  const focal = (h / 2) / Math.tan(orbit.fovY / 2);
  for (const item of order) {
    const radius = Math.max(
      1.0, (options.pointRadiusWorld / item.depth) * focal);
    const [r, g, b] = state.pointColor(item.index);
    ctx.fillStyle = `rgb(${r},${g},${b})`;
    ctx.beginPath();
    ctx.arc(item.x, item.y, radius, 0, 2 * Math.PI);
    ctx.fill();
  }
}
