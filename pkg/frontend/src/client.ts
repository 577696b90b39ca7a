/**
 * Service client: REST for state and edits, WebSocket for live selection.
 *
 * Drag gestures are throttled to at most 30 messages per second; the
 * trailing cursor position is always flushed so the selection ends exactly
 * under the cursor.
 */

import { LabelReply, SegmentationDoc, SelectReply, SelectRequest } from './types.js';

export const DRAG_MESSAGE_INTERVAL_MS = 1000 / 30;

export class ServiceClient {
  constructor(private baseUrl: string,
              private socketFactory: (url: string) => WebSocket =
                (url) => new WebSocket(url)) {}

  async fetchCloud(): Promise<ArrayBuffer> {
    const res = await fetch(`${this.baseUrl}/cloud`);
    if (!res.ok) throw new Error(`GET /cloud failed: ${res.status}`);
    return res.arrayBuffer();
  }

  async fetchSegmentation(): Promise<SegmentationDoc> {
    const res = await fetch(`${this.baseUrl}/segmentation`);
    if (!res.ok) throw new Error(`GET /segmentation failed: ${res.status}`);
    return res.json();
  }

  async postLabel(selection: number[], label: number): Promise<LabelReply> {
    const res = await fetch(`${this.baseUrl}/label`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ selection, label }),
    });
    if (!res.ok) throw new Error(`POST /label failed: ${res.status}`);
    return res.json();
  }

  async postUndo(): Promise<LabelReply> {
    const res = await fetch(`${this.baseUrl}/undo`, { method: 'POST' });
    if (!res.ok) throw new Error(`POST /undo failed: ${res.status}`);
    return res.json();
  }

  async raycast(origin: number[], direction: number[]): Promise<number | null> {
    const res = await fetch(`${this.baseUrl}/raycast`, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ origin, direction }),
    });
    if (!res.ok) throw new Error(`POST /raycast failed: ${res.status}`);
    return (await res.json()).hit;
  }

  openSelectSocket(onReply: (reply: SelectReply) => void): SelectChannel {
    const wsUrl = this.baseUrl.replace(/^http/, 'ws') + '/select';
    const socket = this.socketFactory(wsUrl);
    return new SelectChannel(socket, onReply);
  }
}

/**
 * Throttled selection channel.  send() forwards immediately when the last
 * message is old enough, otherwise it stores the request and flushes it
 * when the interval elapses (trailing edge), collapsing bursts.
 */
export class SelectChannel {
  private lastSent = -Infinity;
  private pending: SelectRequest | null = null;
  private timer: ReturnType<typeof setTimeout> | null = null;

  constructor(private socket: WebSocket,
              onReply: (reply: SelectReply) => void,
              private now: () => number = () => performance.now()) {
    socket.onmessage = (event) => onReply(JSON.parse(event.data as string));
  }

  send(request: SelectRequest): void {
    const elapsed = this.now() - this.lastSent;
    if (elapsed >= DRAG_MESSAGE_INTERVAL_MS) {
      this.flush(request);
      return;
    }
    this.pending = request;
    if (this.timer === null) {
      this.timer = setTimeout(() => {
        this.timer = null;
        if (this.pending) {
          const request2 = this.pending;
          this.pending = null;
          this.flush(request2);
        }
      }, DRAG_MESSAGE_INTERVAL_MS - elapsed);
    }
  }

  private flush(request: SelectRequest): void {
    this.lastSent = this.now();
    this.socket.send(JSON.stringify(request));
  }

  close(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.socket.close();
  }
}
