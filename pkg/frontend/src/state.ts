/**
 * Client-side view state: the point buffer, labels, palette, and the live
 * selection.  Selection deltas from the server are applied idempotently in
 * sequence order; the whole state is reconstructible from GET /cloud +
 * GET /segmentation at any time.
 */

import { SegmentationDoc, SelectReply, STEM_LABEL, Vec3 } from './types.js';

export interface PointCloud {
  positions: Float32Array; // xyz triples
  colors: Uint8Array;      // rgb triples
  count: number;
}

/** Parse the /cloud payload: n * 12 bytes of f32 xyz, then n * 3 of u8 rgb. */
export function parseCloudBuffer(buffer: ArrayBuffer): PointCloud {
  const bytesPerPoint = 12 + 3;
  if (buffer.byteLength % bytesPerPoint !== 0) {
    throw new Error(`cloud buffer has ${buffer.byteLength} bytes, ` +
      `expected a multiple of ${bytesPerPoint}`);
  }
  const count = buffer.byteLength / bytesPerPoint;
  const positions = new Float32Array(buffer, 0, count * 3);
  const colors = new Uint8Array(buffer, count * 12, count * 3);
  return { positions, colors, count };
}

export function cloudCenter(cloud: PointCloud): { center: Vec3; radius: number } {
  const lo = [Infinity, Infinity, Infinity];
  const hi = [-Infinity, -Infinity, -Infinity];
  for (let i = 0; i < cloud.count; i++) {
    for (let a = 0; a < 3; a++) {
      const v = cloud.positions[3 * i + a];
      lo[a] = Math.min(lo[a], v);
      hi[a] = Math.max(hi[a], v);
    }
  }
  const center = {
    x: (lo[0] + hi[0]) / 2, y: (lo[1] + hi[1]) / 2, z: (lo[2] + hi[2]) / 2,
  };
  const radius = Math.hypot(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]) / 2;
  return { center, radius };
}

/** Distinct hue per leaf id; stem is gray.  Deterministic. */
export function labelColor(label: number): [number, number, number] {
  if (label === STEM_LABEL) return [140, 140, 140];
  const hue = (label * 137.508) % 360; // golden-angle spacing
  return hslToRgb(hue, 0.65, 0.5);
}

export const SELECTION_COLOR: [number, number, number] = [255, 220, 40];

function hslToRgb(h: number, s: number, l: number): [number, number, number] {
  const c = (1 - Math.abs(2 * l - 1)) * s;
  const hp = h / 60;
  const x = c * (1 - Math.abs((hp % 2) - 1));
  let rgb: [number, number, number];
  if (hp < 1) rgb = [c, x, 0];
  else if (hp < 2) rgb = [x, c, 0];
  else if (hp < 3) rgb = [0, c, x];
  else if (hp < 4) rgb = [0, x, c];
  else if (hp < 5) rgb = [x, 0, c];
  else rgb = [c, 0, x];
  const m = l - c / 2;
  return [Math.round((rgb[0] + m) * 255), Math.round((rgb[1] + m) * 255),
          Math.round((rgb[2] + m) * 255)];
}

export class ViewState {
  labels: Int32Array;
  selection = new Set<number>();
  leaves: SegmentationDoc['leaves'] = [];
  root = 0;
  private lastSequence = 0;

  constructor(public cloud: PointCloud) {
    this.labels = new Int32Array(cloud.count).fill(STEM_LABEL);
  }

  loadSegmentation(doc: SegmentationDoc): void {
    if (doc.labels.length !== this.cloud.count) {
      throw new Error('segmentation does not match the point buffer');
    }
    this.labels = Int32Array.from(doc.labels);
    this.leaves = doc.leaves;
    this.root = doc.root;
  }

  /**
   * Apply a selection delta.  Replies carry a server sequence counter;
   * stale or duplicated replies (same or older sequence) are ignored so
   * re-delivery is idempotent.
   */
  applySelectReply(reply: SelectReply): boolean {
    if (reply.error) return false;
    if (reply.sequence <= this.lastSequence) return false;
    this.lastSequence = reply.sequence;
    for (const index of reply.removed) this.selection.delete(index);
    for (const index of reply.added) this.selection.add(index);
    return true;
  }

  clearSelection(): void {
    this.selection.clear();
  }

  /** Relabel indices locally (mirror of a server /label delta). */
  applyLabelDelta(changed: number[], label: number): void {
    for (const index of changed) this.labels[index] = label;
  }

  leafIds(): number[] {
    const ids = new Set<number>();
    for (const label of this.labels) {
      if (label !== STEM_LABEL) ids.add(label);
    }
    return [...ids].sort((a, b) => a - b);
  }

  /** Final per-point color: selection highlight wins over the label hue. */
  pointColor(index: number): [number, number, number] {
    if (this.selection.has(index)) return SELECTION_COLOR;
    return labelColor(this.labels[index]);
  }
}
