/** DOM wiring for the explorer. All affect values displayed anywhere
 * originate either from the user's click or from a service response. */

import { ApiClient, ApiError, synthesizePayload } from "./api.js";
import { SessionState } from "./history.js";
import { SingleFlightQueue } from "./queue.js";
import type { GridPayload, SynthesizeResponse, WheelSelection } from "./types.js";
import {
  clickToVa,
  describeCell,
  formatSelection,
  heatColor,
  vaToCanvas,
  wheelCells,
  type WheelCell,
} from "./wheel.js";

const WHEEL_SIZE = 420;

function el<T extends HTMLElement>(id: string): T {
  const found = document.getElementById(id);
  if (!found) throw new Error(`missing element #${id}`);
  return found as T;
}

export class ExplorerApp {
  private client: ApiClient | null = null;
  private grid: GridPayload | null = null;
  private cells: WheelCell[] = [];
  private session = new SessionState(null);
  private selection: WheelSelection | null = null;
  private queue: SingleFlightQueue<WheelSelection, SynthesizeResponse>;

  private readonly canvas = el<HTMLCanvasElement>("wheel");
  private readonly banner = el<HTMLDivElement>("banner");
  private readonly hover = el<HTMLDivElement>("hover-info");
  private readonly result = el<HTMLImageElement>("result");
  private readonly resultMeta = el<HTMLDivElement>("result-meta");
  private readonly historyStrip = el<HTMLDivElement>("history");
  private readonly intensity = el<HTMLInputElement>("intensity");
  private readonly intensityValue = el<HTMLSpanElement>("intensity-value");
  private readonly sessionLabel = el<HTMLSpanElement>("session-label");
  private readonly values = el<HTMLDivElement>("selection-values");

  constructor() {
    this.queue = new SingleFlightQueue(
      (sel) => this.runSynthesis(sel),
      (sel, resp) => this.onResult(sel, resp),
      (_sel, err) => this.showError(err)
    );
    this.canvas.width = WHEEL_SIZE;
    this.canvas.height = WHEEL_SIZE;
    this.bindEvents();
  }

  private bindEvents(): void {
    el<HTMLButtonElement>("connect").addEventListener("click", () => void this.connect());
    el<HTMLButtonElement>("use-demo").addEventListener("click", () => void this.useDemoSession());
    el<HTMLButtonElement>("upload").addEventListener("click", () => void this.uploadSession());
    this.intensity.addEventListener("input", () => {
      this.intensityValue.textContent = this.intensity.value;
    });
    this.canvas.addEventListener("mousemove", (ev) => this.onHover(ev));
    this.canvas.addEventListener("mouseleave", () => {
      this.hover.textContent = "";
    });
    this.canvas.addEventListener("click", (ev) => this.onClick(ev));
  }

  async connect(): Promise<void> {
    const base = el<HTMLInputElement>("service-url").value.trim();
    this.client = new ApiClient(base);
    this.banner.textContent = "";
    this.banner.className = "banner";
    try {
      await this.client.health();
      this.grid = await this.client.grid();
      this.drawWheel();
      this.setBanner("connected", "ok");
    } catch (err) {
      this.grid = null;
      this.drawWheel();
      this.setRetryBanner(err);
    }
  }

  private setBanner(text: string, kind: "ok" | "warn" | "error"): void {
    this.banner.textContent = text;
    this.banner.className = `banner ${kind}`;
  }

  private setRetryBanner(err: unknown): void {
    this.banner.textContent = "";
    this.banner.className = "banner error";
    const label = document.createElement("span");
    label.textContent = `service unreachable: ${String(err)} `;
    const retry = document.createElement("button");
    retry.textContent = "retry";
    retry.addEventListener("click", () => void this.connect());
    this.banner.append(label, retry);
  }

  private showError(err: unknown): void {
    if (err instanceof ApiError) {
      this.setBanner(err.display(), "error");
    } else {
      this.setBanner(String(err), "error");
    }
  }

  async useDemoSession(): Promise<void> {
    if (!this.client) return;
    try {
      const health = await this.client.health();
      if (!health.preloaded_session) {
        this.setBanner("service has no preloaded demo session", "warn");
        return;
      }
      this.session = new SessionState(health.preloaded_session);
      this.sessionLabel.textContent = health.preloaded_session;
      this.renderHistory();
    } catch (err) {
      this.showError(err);
    }
  }

  async uploadSession(): Promise<void> {
    if (!this.client) return;
    const image = el<HTMLInputElement>("image-file").files?.[0];
    const landmarks = el<HTMLInputElement>("landmarks-file").files?.[0];
    if (!image || !landmarks) {
      this.setBanner("pick both a photo and a landmark CSV first", "warn");
      return;
    }
    try {
      const id = await this.client.createSession(image, landmarks);
      this.session = new SessionState(id);
      this.sessionLabel.textContent = id;
      this.renderHistory();
      this.setBanner("session ready", "ok");
    } catch (err) {
      this.showError(err);
    }
  }

  private drawWheel(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    ctx.clearRect(0, 0, WHEEL_SIZE, WHEEL_SIZE);
    if (!this.grid) {
      ctx.fillStyle = "rgba(40, 44, 52, 0.9)";
      ctx.fillRect(0, 0, WHEEL_SIZE, WHEEL_SIZE);
      return;
    }
    this.cells = wheelCells(this.grid, WHEEL_SIZE);
    const allEmpty = this.cells.every((c) => c.empty);
    for (const cell of this.cells) {
      ctx.fillStyle = heatColor(cell.heat, cell.empty);
      ctx.fillRect(cell.x, cell.y, cell.w, cell.h);
      ctx.strokeStyle = "rgba(255,255,255,0.08)";
      ctx.strokeRect(cell.x, cell.y, cell.w, cell.h);
    }
    // axes through the origin
    ctx.strokeStyle = "rgba(255,255,255,0.35)";
    ctx.beginPath();
    ctx.moveTo(WHEEL_SIZE / 2, 0);
    ctx.lineTo(WHEEL_SIZE / 2, WHEEL_SIZE);
    ctx.moveTo(0, WHEEL_SIZE / 2);
    ctx.lineTo(WHEEL_SIZE, WHEEL_SIZE / 2);
    ctx.stroke();
    if (this.selection) {
      const pos = vaToCanvas(this.selection.valence, this.selection.arousal, WHEEL_SIZE);
      ctx.strokeStyle = "#ffd75e";
      ctx.lineWidth = 2;
      ctx.beginPath();
      ctx.arc(pos.x, pos.y, 7, 0, 2 * Math.PI);
      ctx.stroke();
      ctx.lineWidth = 1;
    }
    if (allEmpty) {
      this.setBanner("grid is empty: build a gallery before exploring", "warn");
    }
  }

  private cellAt(px: number, py: number): WheelCell | null {
    for (const cell of this.cells) {
      if (px >= cell.x && px < cell.x + cell.w && py >= cell.y && py < cell.y + cell.h) {
        return cell;
      }
    }
    return null;
  }

  private canvasPoint(ev: MouseEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    return {
      x: ((ev.clientX - rect.left) / rect.width) * WHEEL_SIZE,
      y: ((ev.clientY - rect.top) / rect.height) * WHEEL_SIZE,
    };
  }

  private onHover(ev: MouseEvent): void {
    const { x, y } = this.canvasPoint(ev);
    const cell = this.cellAt(x, y);
    this.hover.textContent = cell ? describeCell(cell) : "";
  }

  private onClick(ev: MouseEvent): void {
    if (!this.client || !this.grid) return;
    const { x, y } = this.canvasPoint(ev);
    const va = clickToVa(x, y, WHEEL_SIZE);
    const selection: WheelSelection = {
      valence: va.valence,
      arousal: va.arousal,
      intensity: Number(this.intensity.value),
    };
    this.selection = selection;
    const shown = formatSelection(selection);
    this.values.textContent = `V ${shown.valence}  A ${shown.arousal}  intensity ${shown.intensity}`;
    this.drawWheel();
    this.queue.submit(selection);
  }

  private runSynthesis(selection: WheelSelection): Promise<SynthesizeResponse> {
    if (!this.client) return Promise.reject(new Error("not connected"));
    const payload = synthesizePayload(selection, this.session.sessionId ?? undefined);
    return this.client.synthesize(payload);
  }

  private onResult(selection: WheelSelection, response: SynthesizeResponse): void {
    this.setBanner("", "ok");
    this.banner.className = "banner";
    const entry = this.session.record(selection, response);
    this.result.src = `data:image/png;base64,${entry.imagePngBase64}`;
    this.resultMeta.textContent =
      `cell (${entry.cell.row}, ${entry.cell.col})  ` +
      `median V ${entry.medianVa[0]} A ${entry.medianVa[1]}`;
    this.renderHistory();
  }

  private renderHistory(): void {
    this.historyStrip.textContent = "";
    this.session.history.forEach((entry, index) => {
      const thumb = document.createElement("img");
      thumb.src = `data:image/png;base64,${entry.imagePngBase64}`;
      thumb.title =
        `V ${entry.selection.valence} A ${entry.selection.arousal} ` +
        `intensity ${entry.selection.intensity} (click to replay)`;
      thumb.addEventListener("click", () => {
        // replay re-issues the identical payload
        this.selection = { ...entry.selection };
        this.drawWheel();
        this.queue.submit({ ...entry.selection });
      });
      void index;
      this.historyStrip.append(thumb);
    });
  }
}

export function startApp(): void {
  const app = new ExplorerApp();
  void app.connect();
}
