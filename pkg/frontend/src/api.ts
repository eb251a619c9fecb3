import type { ModelInfo, RenderRequest } from './types.js';

export interface FrameResult {
  blob: Blob;
  latencyMs: number;
  request: RenderRequest;
}

export type FrameHandler = (frame: FrameResult) => void;
export type ErrorHandler = (err: unknown) => void;

/** Issues /render requests with at most one in flight.
 *
 * While a request is pending, newer states overwrite each other and only the
 * latest is sent once the wire is free, so a burst of n input events costs at
 * most one extra request after the in-flight one completes.
 */
export class FrameClient {
  private inFlight = false;
  private pending: RenderRequest | null = null;
  requestsSent = 0;
  maxConcurrent = 0;
  private active = 0;

  constructor(
    private baseUrl: string,
    private onFrame: FrameHandler,
    private onError: ErrorHandler = () => undefined,
  ) {}

  async fetchInfo(): Promise<ModelInfo> {
    const res = await fetch(`${this.baseUrl}/model/info`);
    if (!res.ok) throw new Error(`model info failed: ${res.status}`);
    return (await res.json()) as ModelInfo;
  }

  /** Request a frame for the given state; coalesces while busy. */
  request(req: RenderRequest): void {
    if (this.inFlight) {
      this.pending = req; // newest wins
      return;
    }
    void this.send(req);
  }

  /** Resolves when no request is in flight and nothing is queued. */
  async idle(): Promise<void> {
    while (this.inFlight || this.pending !== null) {
      await new Promise((r) => setTimeout(r, 5));
    }
  }

  private async send(req: RenderRequest): Promise<void> {
    this.inFlight = true;
    this.active += 1;
    this.maxConcurrent = Math.max(this.maxConcurrent, this.active);
    this.requestsSent += 1;
    const t0 = performance.now();
    try {
      const res = await fetch(`${this.baseUrl}/render`, {
        method: 'POST',
        headers: { 'content-type': 'application/json' },
        body: JSON.stringify(req),
      });
      if (!res.ok) throw new Error(`render failed: ${res.status}`);
      const blob = await res.blob();
      const header = res.headers.get('X-Render-Millis');
      const latencyMs = header ? parseFloat(header) : performance.now() - t0;
      this.onFrame({ blob, latencyMs, request: req });
    } catch (err) {
      this.onError(err);
    } finally {
      this.active -= 1;
      this.inFlight = false;
      if (this.pending !== null) {
        const next = this.pending;
        this.pending = null;
        void this.send(next);
      }
    }
  }
}
