import { FrameClient } from './api.js';
import {
  DEFAULT_STATE,
  ViewerState,
  clampOrbit,
  deserializeState,
  renderRequestFromState,
  serializeState,
} from './state.js';
import { MIN_GAP, TF_PRESETS, addPoint, deletePoint, movePoint } from './tf_editor.js';
import type { ModelInfo, TfPoint } from './types.js';

const IDLE_REFINE_MS = 300;

class Viewer {
  private state: ViewerState;
  private client: FrameClient;
  private info: ModelInfo | null = null;
  private canvas: HTMLCanvasElement;
  private ctx: CanvasRenderingContext2D;
  private tfCanvas: HTMLCanvasElement;
  private latencyEl: HTMLElement;
  private bannerEl: HTMLElement;
  private timestepRow: HTMLElement;
  private timestepEl: HTMLInputElement;
  private refineTimer: number | undefined;
  private dragging = false;
  private dragPointIndex = -1;
  private densityHead = true;

  constructor() {
    this.canvas = document.getElementById('frame') as HTMLCanvasElement;
    this.ctx = this.canvas.getContext('2d')!;
    this.tfCanvas = document.getElementById('tf-editor') as HTMLCanvasElement;
    this.latencyEl = document.getElementById('latency')!;
    this.bannerEl = document.getElementById('banner')!;
    this.timestepRow = document.getElementById('timestep-row')!;
    this.timestepEl = document.getElementById('timestep') as HTMLInputElement;

    this.state = deserializeState(location.hash) ?? structuredClone(DEFAULT_STATE);
    this.client = new FrameClient(
      '',
      (frame) => this.showFrame(frame.blob, frame.latencyMs),
      () => this.showBanner('render request failed; keeping last frame'),
    );
    this.bindInput();
    void this.start();
  }

  private async start(): Promise<void> {
    try {
      this.info = await this.client.fetchInfo();
    } catch {
      this.showBanner('service unreachable');
      return;
    }
    this.densityHead = this.info.config.head === 'density';
    document.getElementById('tf-panel')!.style.display = this.densityHead ? '' : 'none';
    if (this.info.temporal_span) {
      const [lo, hi] = this.info.temporal_span;
      this.timestepEl.min = String(lo);
      this.timestepEl.max = String(hi);
      this.timestepEl.step = '0.25';
      if (this.state.timestep === null) this.state.timestep = lo;
      this.timestepEl.value = String(this.state.timestep);
    } else {
      this.timestepRow.style.display = 'none';
      this.state.timestep = null;
    }
    this.drawTf();
    this.requestFrame(false);
  }

  private bindInput(): void {
    this.canvas.addEventListener('mousedown', () => (this.dragging = true));
    window.addEventListener('mouseup', () => {
      this.dragging = false;
      this.scheduleRefine();
    });
    this.canvas.addEventListener('mousemove', (e) => {
      if (!this.dragging) return;
      this.state.orbit = clampOrbit({
        ...this.state.orbit,
        azimuthDeg: this.state.orbit.azimuthDeg - e.movementX * 0.5,
        elevationDeg: this.state.orbit.elevationDeg + e.movementY * 0.5,
      });
      this.requestFrame(true);
    });
    this.canvas.addEventListener('wheel', (e) => {
      e.preventDefault();
      this.state.orbit = clampOrbit({
        ...this.state.orbit,
        distance: this.state.orbit.distance * (e.deltaY > 0 ? 1.1 : 0.9),
      });
      this.requestFrame(true);
    });
    this.timestepEl.addEventListener('input', () => {
      this.state.timestep = parseFloat(this.timestepEl.value);
      this.requestFrame(true);
    });
    (document.getElementById('resolution') as HTMLSelectElement).addEventListener(
      'change',
      (e) => {
        this.state.resolution = parseInt((e.target as HTMLSelectElement).value, 10);
        this.requestFrame(false);
      },
    );
    (document.getElementById('stepsize') as HTMLInputElement).addEventListener(
      'change',
      (e) => {
        this.state.stepsizeVoxels = parseFloat((e.target as HTMLInputElement).value);
        this.requestFrame(false);
      },
    );
    const presets = document.getElementById('tf-preset') as HTMLSelectElement;
    for (const name of Object.keys(TF_PRESETS)) {
      const opt = document.createElement('option');
      opt.value = name;
      opt.textContent = name;
      presets.appendChild(opt);
    }
    presets.addEventListener('change', () => {
      this.state.tf = structuredClone(TF_PRESETS[presets.value]);
      this.drawTf();
      this.requestFrame(false);
    });
    this.bindTfEditor();
  }

  private tfPointAt(e: MouseEvent): number {
    const rect = this.tfCanvas.getBoundingClientRect();
    const x = (e.clientX - rect.left) / rect.width;
    let best = -1;
    let bestDist = 0.03;
    this.state.tf.forEach((p, i) => {
      const d = Math.abs(p.x - x);
      if (d < bestDist) {
        best = i;
        bestDist = d;
      }
    });
    return best;
  }

  private bindTfEditor(): void {
    this.tfCanvas.addEventListener('mousedown', (e) => {
      const idx = this.tfPointAt(e);
      if (e.shiftKey && idx >= 0) {
        this.state.tf = deletePoint(this.state.tf, idx);
        this.drawTf();
        this.requestFrame(false);
        return;
      }
      if (idx >= 0) {
        this.dragPointIndex = idx;
        return;
      }
      const rect = this.tfCanvas.getBoundingClientRect();
      const x = (e.clientX - rect.left) / rect.width;
      const sigma = 25 * (1 - (e.clientY - rect.top) / rect.height);
      this.state.tf = addPoint(this.state.tf, x, [1, 1, 1], sigma);
      this.drawTf();
      this.requestFrame(false);
    });
    this.tfCanvas.addEventListener('mousemove', (e) => {
      if (this.dragPointIndex < 0) return;
      const rect = this.tfCanvas.getBoundingClientRect();
      const x = (e.clientX - rect.left) / rect.width;
      const sigma = Math.max(0, 25 * (1 - (e.clientY - rect.top) / rect.height));
      this.state.tf = movePoint(this.state.tf, this.dragPointIndex, { x, sigma });
      this.drawTf();
      this.requestFrame(true);
    });
    window.addEventListener('mouseup', () => (this.dragPointIndex = -1));
  }

  private requestFrame(interactive: boolean): void {
    location.hash = serializeState(this.state);
    const req = renderRequestFromState(this.state, {
      preview: interactive,
      includeTf: this.densityHead,
    });
    this.client.request(req);
    if (interactive) this.scheduleRefine();
  }

  private scheduleRefine(): void {
    window.clearTimeout(this.refineTimer);
    this.refineTimer = window.setTimeout(() => {
      if (!this.dragging) this.requestFrame(false);
    }, IDLE_REFINE_MS);
  }

  private showFrame(blob: Blob, latencyMs: number): void {
    const img = new Image();
    img.onload = () => {
      this.canvas.width = img.width;
      this.canvas.height = img.height;
      this.ctx.drawImage(img, 0, 0);
      URL.revokeObjectURL(img.src);
    };
    img.src = URL.createObjectURL(blob);
    this.latencyEl.textContent = `${latencyMs.toFixed(1)} ms`;
    this.bannerEl.style.display = 'none';
  }

  private showBanner(message: string): void {
    this.bannerEl.textContent = message;
    this.bannerEl.style.display = 'block';
  }

  private drawTf(): void {
    const ctx = this.tfCanvas.getContext('2d')!;
    const { width: w, height: h } = this.tfCanvas;
    ctx.clearRect(0, 0, w, h);
    const maxSigma = Math.max(25, ...this.state.tf.map((p) => p.sigma));
    ctx.strokeStyle = '#888';
    ctx.beginPath();
    this.state.tf.forEach((p, i) => {
      const px = p.x * w;
      const py = h - (p.sigma / maxSigma) * h;
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
    for (const p of this.state.tf) {
      const px = p.x * w;
      const py = h - (p.sigma / maxSigma) * h;
      ctx.fillStyle = `rgb(${p.rgb.map((c) => Math.round(c * 255)).join(',')})`;
      ctx.strokeStyle = '#fff';
      ctx.beginPath();
      ctx.arc(px, py, 5, 0, 2 * Math.PI);
      ctx.fill();
      ctx.stroke();
    }
  }
}

window.addEventListener('DOMContentLoaded', () => new Viewer());
export { MIN_GAP };
