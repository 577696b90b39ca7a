/**
 * Application wiring: canvas gestures -> service calls -> state updates.
 *
 * Left drag with the drag tool: press picks the source splat via the
 * server, moves stream throttled drag selections, release keeps the
 * selection for labeling.  The brush tool selects within an adjustable
 * geodesic radius around the splat under the cursor.  Right drag orbits.
 */

import { defaultOrbit, OrbitState, pickRay, rotate, zoom } from './camera.js';
import { SelectChannel, ServiceClient } from './client.js';
import { renderCloud } from './renderer.js';
import { cloudCenter, parseCloudBuffer, ViewState } from './state.js';
import { STEM_LABEL, Tool } from './types.js';

export class App {
  state!: ViewState;
  orbit!: OrbitState;
  tool: Tool = 'drag';
  brushRadius = 0.05;
  activeLabel = 0;
  private channel!: SelectChannel;
  private dragSource: number | null = null;
  private dirty = true;

  constructor(private canvas: HTMLCanvasElement,
              private client: ServiceClient,
              private status: (text: string) => void = () => {}) {}

  async start(): Promise<void> {
    const [buffer, segmentation] = await Promise.all([
      this.client.fetchCloud(), this.client.fetchSegmentation()]);
    const cloud = parseCloudBuffer(buffer);
    this.state = new ViewState(cloud);
    this.state.loadSegmentation(segmentation);
    const { center, radius } = cloudCenter(cloud);
    this.orbit = defaultOrbit(center, radius);
    this.channel = this.client.openSelectSocket((reply) => {
      if (this.state.applySelectReply(reply)) this.invalidate();
    });
    this.bindEvents();
    this.loop();
    this.status(`${cloud.count} splats, ` +
      `${this.state.leafIds().length} leaves`);
  }

  invalidate(): void {
    this.dirty = true;
  }

  private loop(): void {
    if (this.dirty) {
      const ctx = this.canvas.getContext('2d');
      if (ctx) renderCloud(ctx, this.orbit, this.state);
      this.dirty = false;
    }
    requestAnimationFrame(() => this.loop());
  }

  private async pick(px: number, py: number): Promise<number | null> {
    const ray = pickRay(this.orbit, this.canvas.width, this.canvas.height,
                        px, py);
    return this.client.raycast(
      [ray.origin.x, ray.origin.y, ray.origin.z],
      [ray.direction.x, ray.direction.y, ray.direction.z]);
  }

  private bindEvents(): void {
    let rotating = false;
    let lastX = 0;
    let lastY = 0;

    this.canvas.addEventListener('pointerdown', async (event) => {
      if (event.button === 2) {
        rotating = true;
        lastX = event.offsetX;
        lastY = event.offsetY;
        return;
      }
      const hit = await this.pick(event.offsetX, event.offsetY);
      if (hit === null) return;          // clicked the sky: visual no-op
      if (this.tool === 'drag') {
        this.dragSource = hit;
        this.channel.send({ op: 'drag', source: hit, target: hit });
      } else {
        this.channel.send({ op: 'brush', source: hit,
                            radius: this.brushRadius });
      }
    });

    this.canvas.addEventListener('pointermove', async (event) => {
      if (rotating) {
        this.orbit = rotate(this.orbit,
                            -(event.offsetX - lastX) * 0.01,
                            (event.offsetY - lastY) * 0.01);
        lastX = event.offsetX;
        lastY = event.offsetY;
        this.invalidate();
        return;
      }
      if (this.dragSource === null && this.tool !== 'brush') return;
      if (event.buttons === 0) return;
      const hit = await this.pick(event.offsetX, event.offsetY);
      if (hit === null) return;
      if (this.tool === 'drag' && this.dragSource !== null) {
        this.channel.send({ op: 'drag', source: this.dragSource,
                            target: hit });
      } else if (this.tool === 'brush') {
        this.channel.send({ op: 'brush', source: hit,
                            radius: this.brushRadius });
      }
    });

    const stop = () => {
      rotating = false;
      this.dragSource = null;
    };
    this.canvas.addEventListener('pointerup', stop);
    this.canvas.addEventListener('pointerleave', stop);
    this.canvas.addEventListener('contextmenu', (e) => e.preventDefault());
    this.canvas.addEventListener('wheel', (event) => {
      this.orbit = zoom(this.orbit, event.deltaY > 0 ? 1.1 : 0.9);
      this.invalidate();
      event.preventDefault();
    });
  }

  async commitLabel(label: number): Promise<void> {
    const selection = [...this.state.selection];
    if (!selection.length) {
      this.status('nothing selected');
      return;
    }
    const reply = await this.client.postLabel(selection, label);
    this.state.applyLabelDelta(reply.changed, label);
    this.state.clearSelection();
    this.channel.send({ op: 'clear' });
    this.invalidate();
    this.status(`labeled ${reply.changed.length} splats`);
  }

  async commitNewLeaf(): Promise<void> {
    const next = this.state.leafIds().reduce((m, v) => Math.max(m, v + 1), 0);
    await this.commitLabel(next);
  }

  async commitStem(): Promise<void> {
    await this.commitLabel(STEM_LABEL);
  }

  async undo(): Promise<void> {
    await this.client.postUndo();
    const segmentation = await this.client.fetchSegmentation();
    this.state.loadSegmentation(segmentation);
    this.invalidate();
    this.status('undone');
  }

  /** Mark the splat under the cursor as the plant root (for re-runs). */
  async chooseRoot(px: number, py: number): Promise<number | null> {
    const hit = await this.pick(px, py);
    if (hit !== null) {
      this.state.root = hit;
      this.status(`root set to splat ${hit}`);
    }
    return hit;
  }

  /** Template choice: the leaf containing the picked splat. */
  async chooseTemplate(px: number, py: number): Promise<number | null> {
    const hit = await this.pick(px, py);
    if (hit === null) return null;
    const label = this.state.labels[hit];
    if (label === STEM_LABEL) {
      this.status('pick a leaf, not the stem');
      return null;
    }
    this.status(`template leaf ${label}`);
    return label;
  }
}
