/** Wire types of the edit service; the client mirrors them verbatim. */

export const STEM_LABEL = -1;

export interface LeafDoc {
  id: number;
  tip: number;
  apexes: number[];
  cut_distance: number;
  flagged: boolean;
}

export interface SegmentationDoc {
  version: number;
  root: number;
  labels: number[];
  leaves: LeafDoc[];
}

export type Tool = 'drag' | 'brush';

export interface SelectRequest {
  op: Tool | 'clear';
  source?: number;
  target?: number;
  radius?: number;
}

export interface SelectReply {
  sequence: number;
  added: number[];
  removed: number[];
  count: number;
  error?: string;
}

export interface LabelReply {
  changed: number[];
  label?: number;
  sequence: number;
  warning?: string;
}

export interface Vec3 {
  x: number;
  y: number;
  z: number;
}
