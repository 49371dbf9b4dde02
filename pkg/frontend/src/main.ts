/**
 * Browser entry point: wires the viewer to the DOM.
 *
 * Left click places a positive point, right click (or the polarity
 * toggle) a negative one.  Arrow keys and PageUp/PageDown scrub
 * slices.  The service base URL comes from the ?api= query parameter
 * and defaults to the local dev port.
 */

import { ApiClient } from "./api.js";
import { fitViewport, type Viewport } from "./coords.js";
import type { RgbaImage } from "./types.js";
import { browserBaseLoader, Viewer } from "./viewer.js";

const CANVAS_SIZE = 512;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

function apiBase(): string {
  const param = new URLSearchParams(window.location.search).get("api");
  return param ?? "http://127.0.0.1:8000";
}

function main(): void {
  const api = new ApiClient(apiBase());
  const viewer = new Viewer(api, browserBaseLoader(api));

  const canvas = el<HTMLCanvasElement>("slice-canvas");
  canvas.width = CANVAS_SIZE;
  canvas.height = CANVAS_SIZE;
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas context unavailable");
  ctx.imageSmoothingEnabled = false;

  const banner = el<HTMLDivElement>("error-banner");
  const toast = el<HTMLDivElement>("toast");
  const sliceLabel = el<HTMLSpanElement>("slice-label");
  const polarityButton = el<HTMLButtonElement>("polarity-toggle");
  const history = el<HTMLUListElement>("round-history");
  let viewport: Viewport | null = null;

  async function redraw(): Promise<void> {
    const image = await viewer.renderSlice();
    if (!image) return;
    viewport = fitViewport(image.width, image.height, canvas.width, canvas.height);
    const staging = new OffscreenCanvas(image.width, image.height);
    const stagingCtx = staging.getContext("2d");
    if (!stagingCtx) return;
    stagingCtx.putImageData(
      new ImageData(new Uint8ClampedArray(image.data), image.width, image.height),
      0,
      0,
    );
    ctx!.fillStyle = "#111";
    ctx!.fillRect(0, 0, canvas.width, canvas.height);
    ctx!.drawImage(
      staging,
      viewport.panX,
      viewport.panY,
      image.width * viewport.zoom,
      image.height * viewport.zoom,
    );
  }

  viewer.subscribe((state) => {
    banner.textContent = state.error ?? "";
    banner.hidden = state.error === null;
    toast.textContent = state.toast ?? "";
    toast.hidden = state.toast === null;
    sliceLabel.textContent = state.nSlices
      ? `slice ${state.sliceIndex} / ${state.nSlices}`
      : "no session";
    polarityButton.textContent = `clicks: ${state.polarity}`;
    canvas.style.cursor = state.busy ? "wait" : "crosshair";
    history.replaceChildren(
      ...state.rounds.map((r) => {
        const item = document.createElement("li");
        const dice = r.mean_dice === null ? "" : ` dice ${r.mean_dice.toFixed(4)}`;
        item.textContent = `round ${r.round}: slice ${r.prompt_index}${dice}`;
        return item;
      }),
    );
  });

  el<HTMLButtonElement>("open-session").addEventListener("click", () => {
    void (async () => {
      const volumePath = el<HTMLInputElement>("volume-path").value.trim();
      const masksPath = el<HTMLInputElement>("masks-path").value.trim();
      if (!volumePath) return;
      await viewer.openSession(volumePath, masksPath || undefined);
      await redraw();
    })();
  });

  for (const mode of ["none", "raw", "fused", "diff"] as const) {
    el<HTMLInputElement>(`overlay-${mode}`).addEventListener("change", () => {
      viewer.setOverlayMode(mode);
      void redraw();
    });
  }

  polarityButton.addEventListener("click", () => viewer.flipPolarity());

  async function clickAt(event: MouseEvent, negative: boolean): Promise<void> {
    if (!viewport || viewer.state.busy) return;
    if (negative !== (viewer.state.polarity === "negative")) {
      viewer.flipPolarity();
    }
    const rect = canvas.getBoundingClientRect();
    const summary = await viewer.submitClick(
      ((event.clientX - rect.left) * canvas.width) / rect.width,
      ((event.clientY - rect.top) * canvas.height) / rect.height,
      viewport,
    );
    if (summary) await redraw();
  }

  canvas.addEventListener("click", (event) => void clickAt(event, false));
  canvas.addEventListener("contextmenu", (event) => {
    event.preventDefault();
    void clickAt(event, true);
  });

  window.addEventListener("keydown", (event) => {
    const steps: Record<string, number> = {
      ArrowUp: 1,
      ArrowRight: 1,
      ArrowDown: -1,
      ArrowLeft: -1,
      PageUp: 5,
      PageDown: -5,
    };
    const delta = steps[event.key];
    if (delta === undefined) return;
    event.preventDefault();
    viewer.scrubBy(delta);
    void redraw();
  });
}

main();
