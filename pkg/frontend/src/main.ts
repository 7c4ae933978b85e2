/**
 * Browser wiring: connects the session client, the view state and the
 * rendering core to the page controls.
 *
 * All protocol and geometry logic lives in the imported modules; this
 * file only moves values between DOM elements and those modules, so it
 * stays thin and the rest stays testable.
 */

import { SwinClient, RejectedError, SupersededError, WindowResult } from "./client.js";
import {
  F_FLAGS,
  F_P,
  F_UMAG,
  F_UX,
  F_UY,
  F_UZ,
  K_PAUSE,
  K_REFINE_REGION,
  K_RESUME,
  K_SET_INFLOW,
  K_SET_VISCOSITY,
  Status,
} from "./protocol.js";
import {
  assembleSlice,
  colormap,
  legendTicks,
  planeMapper,
  rasterize,
  sphereOutlines,
} from "./render.js";
import {
  ViewState,
  budgetFromSlider,
  debounce,
  initialView,
  panBox,
  planeAxes,
  requestFor,
  sliceCoord,
  sliderFromBudget,
  zoomBox,
} from "./view.js";

const FIELD_BY_NAME: Record<string, number> = {
  umag: F_UMAG,
  ux: F_UX,
  uy: F_UY,
  uz: F_UZ,
  p: F_P,
  flags: F_FLAGS,
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  private client: SwinClient | null = null;
  private view: ViewState | null = null;
  private status: Status | null = null;
  private last: WindowResult | null = null;
  private scale: [number, number] = [0, 1];
  private scaleLocked = false;
  private readonly refresh = debounce(() => this.send());

  private readonly canvas = el<HTMLCanvasElement>("slice");
  private readonly legend = el<HTMLCanvasElement>("legend");
  private readonly hud = el<HTMLDivElement>("hud");
  private readonly toasts = el<HTMLDivElement>("toasts");
  private readonly connState = el<HTMLSpanElement>("conn-state");

  constructor() {
    el<HTMLButtonElement>("connect").addEventListener("click", () => this.connect());
    const slider = el<HTMLInputElement>("budget");
    slider.addEventListener("input", () => {
      if (!this.view) return;
      this.view.budget = budgetFromSlider(Number(slider.value) / 1000);
      el<HTMLSpanElement>("budget-label").textContent = formatBytes(this.view.budget);
      this.refresh.trigger();
    });
    el<HTMLSelectElement>("field").addEventListener("change", (ev) => {
      if (!this.view) return;
      this.view.fields = FIELD_BY_NAME[(ev.target as HTMLSelectElement).value];
      this.scaleLocked = false;
      this.refresh.trigger();
    });
    el<HTMLSelectElement>("axis").addEventListener("change", (ev) => {
      if (!this.view) return;
      this.view.sliceAxis = Number((ev.target as HTMLSelectElement).value) as 0 | 1 | 2;
      this.refresh.trigger();
    });
    const pos = el<HTMLInputElement>("slice-pos");
    pos.addEventListener("input", () => {
      if (!this.view) return;
      this.view.sliceFrac = Number(pos.value) / 1000;
      this.refresh.trigger();
    });
    el<HTMLButtonElement>("zoom-in").addEventListener("click", () => this.zoom(0.5));
    el<HTMLButtonElement>("zoom-out").addEventListener("click", () => this.zoom(2.0));
    el<HTMLButtonElement>("reset-view").addEventListener("click", () => {
      if (!this.view) return;
      this.view.window = [...this.view.domain] as typeof this.view.window;
      this.refresh.trigger();
    });
    el<HTMLButtonElement>("refine").addEventListener("click", () => {
      if (!this.client || !this.view) return;
      this.steer(K_REFINE_REGION, [...this.view.window]);
    });
    el<HTMLButtonElement>("set-inflow").addEventListener("click", () => {
      this.steer(K_SET_INFLOW, [
        Number(el<HTMLInputElement>("inflow-x").value),
        Number(el<HTMLInputElement>("inflow-y").value),
        Number(el<HTMLInputElement>("inflow-z").value),
      ]);
    });
    el<HTMLButtonElement>("set-viscosity").addEventListener("click", () => {
      this.steer(K_SET_VISCOSITY, [Number(el<HTMLInputElement>("viscosity").value)]);
    });
    el<HTMLButtonElement>("pause").addEventListener("click", () => this.steer(K_PAUSE, []));
    el<HTMLButtonElement>("resume").addEventListener("click", () => this.steer(K_RESUME, []));
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.zoom(ev.deltaY > 0 ? 1.25 : 0.8, this.pointWorld(ev));
    });
    this.enableDragPan();
  }

  private connect(): void {
    const url = el<HTMLInputElement>("url").value;
    this.client?.close();
    const keep = this.view; // survive reconnects
    this.connState.textContent = "connecting";
    const client = new SwinClient(url, {
      onStatus: (s) => {
        this.status = s;
        this.hudUpdate();
      },
      onAck: (a) => {
        if (!a.ok) this.toast(a.message || "request rejected");
      },
      onClose: () => {
        this.connState.textContent = "disconnected";
      },
    });
    client
      .connect()
      .then((greeting) => {
        this.client = client;
        this.status = greeting;
        this.view = keep ?? initialView(greeting.domain);
        this.view.domain = [...greeting.domain] as typeof this.view.domain;
        this.connState.textContent = `session ${greeting.session}`;
        const slider = el<HTMLInputElement>("budget");
        slider.value = String(Math.round(sliderFromBudget(this.view.budget) * 1000));
        el<HTMLSpanElement>("budget-label").textContent = formatBytes(this.view.budget);
        this.send();
      })
      .catch((err) => {
        this.connState.textContent = "connection failed";
        this.toast(String(err?.message ?? err));
      });
  }

  /** Issue the window request for the current view state. */
  private send(): void {
    if (!this.client || !this.view) return;
    const req = requestFor(this.view, 0, 0); // ids filled in by the client
    this.client
      .requestWindow({ box: req.box, fields: req.fields, maxBytes: req.maxBytes })
      .then((result) => this.show(result))
      .catch((err) => {
        if (err instanceof SupersededError) return; // a newer view took over
        if (err instanceof RejectedError) this.toast(err.message);
      });
  }

  private show(result: WindowResult): void {
    if (!this.view) return;
    this.last = result;
    const slice = assembleSlice(
      result.resp,
      result.payload,
      this.view.fields,
      this.view.sliceAxis,
      this.view.sliceFrac,
    );
    const ctx = this.canvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    if (!slice || slice.filled === 0) {
      ctx.fillStyle = "#445";
      ctx.font = "16px system-ui";
      ctx.textAlign = "center";
      ctx.fillText("no data in this window", this.canvas.width / 2, this.canvas.height / 2);
      this.hudUpdate();
      return;
    }
    if (!this.scaleLocked) {
      // first frame per field fixes the scale; zooms stay comparable
      let lo = Infinity;
      let hi = -Infinity;
      for (const v of slice.values) {
        if (Number.isNaN(v)) continue;
        lo = Math.min(lo, v);
        hi = Math.max(hi, v);
      }
      if (lo < hi) {
        this.scale = [lo, hi];
        this.scaleLocked = true;
      }
    }
    const px = rasterize(slice, this.scale[0], this.scale[1]);
    const img = new ImageData(px, slice.nh, slice.nv);
    const off = document.createElement("canvas");
    off.width = slice.nh;
    off.height = slice.nv;
    off.getContext("2d")!.putImageData(img, 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.save();
    // raster row 0 is the low world edge; flip to canvas coordinates
    ctx.scale(1, -1);
    ctx.drawImage(off, 0, -this.canvas.height, this.canvas.width, this.canvas.height);
    ctx.restore();
    this.drawSpheres(ctx);
    this.drawLegend();
    this.hudUpdate();
  }

  private drawSpheres(ctx: CanvasRenderingContext2D): void {
    if (!this.status || !this.view) return;
    const plane = sliceCoord(this.view);
    const circles = sphereOutlines(this.status.spheres, this.view.sliceAxis, plane);
    const map = planeMapper(
      this.view.window,
      this.view.sliceAxis,
      this.canvas.width,
      this.canvas.height,
    );
    ctx.strokeStyle = "rgba(255,255,255,0.8)";
    ctx.lineWidth = 1.25;
    for (const c of circles) {
      const [x, y] = map.toPx(c.h, c.v);
      ctx.beginPath();
      ctx.ellipse(x, y, c.r * map.scaleH, c.r * map.scaleV, 0, 0, 2 * Math.PI);
      ctx.stroke();
    }
  }

  private drawLegend(): void {
    const ctx = this.legend.getContext("2d")!;
    const w = this.legend.width;
    const h = this.legend.height;
    ctx.clearRect(0, 0, w, h);
    for (let x = 0; x < w; x++) {
      const [r, g, b] = colormap(x / (w - 1));
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fillRect(x, 0, 1, h - 14);
    }
    ctx.fillStyle = "#ccc";
    ctx.font = "10px system-ui";
    const ticks = legendTicks(this.scale[0], this.scale[1], 3);
    ctx.textAlign = "left";
    ctx.fillText(ticks[0].toExponential(2), 1, h - 3);
    ctx.textAlign = "center";
    ctx.fillText(ticks[1].toExponential(2), w / 2, h - 3);
    ctx.textAlign = "right";
    ctx.fillText(ticks[2].toExponential(2), w - 1, h - 3);
  }

  private hudUpdate(): void {
    const bits: string[] = [];
    if (this.status) {
      bits.push(`step ${this.status.step}`);
      bits.push(this.status.paused ? "paused" : "running");
    }
    if (this.last) {
      const r = this.last.resp;
      bits.push(`depth ${r.depth}`);
      bits.push(`stride ${r.stride.join("×")}`);
      bits.push(`${r.cellCount} cells`);
      bits.push(`${formatBytes(r.rawSize)} raw / ${formatBytes(r.data.byteLength)} wire`);
    }
    this.hud.textContent = bits.join("  ·  ");
  }

  private zoom(factor: number, centre?: [number, number, number]): void {
    if (!this.view) return;
    this.view.window = zoomBox(this.view, factor, centre);
    this.refresh.trigger();
  }

  /** World point under a mouse event, on the slice plane. */
  private pointWorld(ev: MouseEvent): [number, number, number] {
    const view = this.view!;
    const rect = this.canvas.getBoundingClientRect();
    const fx = (ev.clientX - rect.left) / rect.width;
    const fy = 1 - (ev.clientY - rect.top) / rect.height;
    const [ha, va] = planeAxes(view.sliceAxis);
    const p: [number, number, number] = [0, 0, 0];
    p[ha] = view.window[ha] + fx * (view.window[ha + 3] - view.window[ha]);
    p[va] = view.window[va] + fy * (view.window[va + 3] - view.window[va]);
    p[view.sliceAxis] = sliceCoord(view);
    return p;
  }

  private enableDragPan(): void {
    let drag: { x: number; y: number } | null = null;
    this.canvas.addEventListener("pointerdown", (ev) => {
      drag = { x: ev.clientX, y: ev.clientY };
      this.canvas.setPointerCapture(ev.pointerId);
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (!drag || !this.view) return;
      const view = this.view;
      const rect = this.canvas.getBoundingClientRect();
      const [ha, va] = planeAxes(view.sliceAxis);
      const dx = ((ev.clientX - drag.x) / rect.width) * (view.window[ha + 3] - view.window[ha]);
      const dy = ((ev.clientY - drag.y) / rect.height) * (view.window[va + 3] - view.window[va]);
      drag = { x: ev.clientX, y: ev.clientY };
      const delta: [number, number, number] = [0, 0, 0];
      delta[ha] = -dx;
      delta[va] = dy; // canvas y grows downwards
      view.window = panBox(view, delta);
      this.refresh.trigger();
    });
    this.canvas.addEventListener("pointerup", () => {
      drag = null;
      this.refresh.flush();
    });
  }

  private steer(kind: number, params: number[]): void {
    if (!this.client) return;
    this.client
      .steer(kind, params)
      .then((ack) => {
        if (ack.ok) this.refresh.trigger();
        else this.toast(ack.message || "steering rejected");
      })
      .catch((err) => this.toast(String(err?.message ?? err)));
  }

  private toast(message: string): void {
    const node = document.createElement("div");
    node.className = "toast";
    node.textContent = message;
    this.toasts.appendChild(node);
    setTimeout(() => node.remove(), 5000);
  }
}

function formatBytes(n: number): string {
  if (n >= 1e6) return `${(n / 1e6).toFixed(1)} MB`;
  if (n >= 1e3) return `${(n / 1e3).toFixed(0)} kB`;
  return `${n} B`;
}

new App();
