/**
 * Viewer orchestration: session lifecycle, slice rendering, click rounds.
 *
 * Mask pixels always come from the service; the viewer decodes and
 * composites but never edits them.  A failed request raises the error
 * banner and leaves the rest of the state untouched.
 */

import { ApiClient, ApiError } from "./api.js";
import { canvasToImage, type Viewport } from "./coords.js";
import { decodeRle } from "./rle.js";
import {
  DECISION_COLORS,
  MASK_COLOR,
  overlayMask,
} from "./render.js";
import {
  beginRound,
  clearToast,
  completeRound,
  failRequest,
  initialState,
  loadSession,
  setOverlay,
  setSlice,
  showToast,
  stepSlice,
  togglePolarity,
  type ViewState,
} from "./state.js";
import type {
  OverlayMode,
  RgbaImage,
  RoundSummary,
  SessionInfo,
} from "./types.js";

export type BaseImageLoader = (
  sessionId: string,
  index: number,
) => Promise<RgbaImage>;

export type StateListener = (state: ViewState) => void;

export class Viewer {
  private current: ViewState = initialState();
  private dims: [number, number, number] | null = null;
  private listeners: StateListener[] = [];

  constructor(
    private readonly api: ApiClient,
    private readonly loadBase: BaseImageLoader,
  ) {}

  get state(): ViewState {
    return this.current;
  }

  subscribe(listener: StateListener): void {
    this.listeners.push(listener);
  }

  private setState(next: ViewState): void {
    this.current = next;
    for (const listener of this.listeners) listener(next);
  }

  async openSession(
    volumePath: string,
    masksPath?: string,
  ): Promise<SessionInfo | null> {
    try {
      const info = await this.api.createSession(volumePath, masksPath);
      this.dims = info.dims;
      this.setState(loadSession(this.current, info));
      return info;
    } catch (err) {
      this.setState(failRequest(this.current, describe(err)));
      return null;
    }
  }

  scrubTo(index: number): void {
    this.setState(setSlice(this.current, index));
  }

  scrubBy(delta: number): void {
    this.setState(stepSlice(this.current, delta));
  }

  setOverlayMode(mode: OverlayMode): void {
    this.setState(setOverlay(this.current, mode));
  }

  flipPolarity(): void {
    this.setState(togglePolarity(this.current));
  }

  dismissToast(): void {
    this.setState(clearToast(this.current));
  }

  /**
   * Compose the current slice with the active overlay.
   *
   * Returns null when the service could not be reached; the error
   * banner is raised and the rest of the state survives for retry.
   */
  async renderSlice(): Promise<RgbaImage | null> {
    const { sessionId, sliceIndex, overlay, rounds } = this.current;
    if (!sessionId || !this.dims) return null;
    try {
      const base = await this.loadBase(sessionId, sliceIndex);
      if (overlay === "none" || rounds.length === 0) return base;
      const kind = overlay === "raw" ? "raw" : "fused";
      const masks = await this.api.getMasks(sessionId, undefined, kind);
      const [, h, w] = masks.dims;
      const mask = decodeRle(masks.rle[sliceIndex - 1]!, h * w);
      const color =
        overlay === "diff"
          ? DECISION_COLORS[masks.decisions[sliceIndex - 1]!]
          : MASK_COLOR;
      return overlayMask(base, mask, color);
    } catch (err) {
      this.setState(failRequest(this.current, describe(err)));
      return null;
    }
  }

  /**
   * Convert a canvas click to image coordinates and run one round.
   *
   * A click outside the image is ignored with a toast and no request.
   * While a round is in flight further clicks are dropped; only one
   * round request per session is ever outstanding.
   */
  async submitClick(
    x: number,
    y: number,
    viewport: Viewport,
  ): Promise<RoundSummary | null> {
    const state = this.current;
    if (!state.sessionId) return null;
    if (state.busy) return null;
    const point = canvasToImage(x, y, viewport);
    if (point === null) {
      this.setState(showToast(state, "click outside the image, ignored"));
      return null;
    }
    const begun = beginRound(state);
    if (begun === null) return null;
    this.setState(begun);
    try {
      const summary = await this.api.submitRound(state.sessionId, [
        {
          slice: state.sliceIndex,
          row: point.row,
          col: point.col,
          polarity: state.polarity,
        },
      ]);
      this.setState(completeRound(this.current, summary));
      return summary;
    } catch (err) {
      this.setState(failRequest(this.current, describe(err)));
      return null;
    }
  }

  /** Mean Dice per round, for the history panel in evaluation mode. */
  diceHistory(): (number | null)[] {
    return this.current.rounds.map((r) => r.mean_dice);
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return err.status === 0 ? err.message : `service error: ${err.message}`;
  }
  return String(err);
}

/** Decode the service's slice PNG through the browser's image stack. */
export function browserBaseLoader(api: ApiClient): BaseImageLoader {
  return async (sessionId, index) => {
    const bytes = await api.fetchSlicePng(sessionId, index, "none");
    const bitmap = await createImageBitmap(
      new Blob([bytes], { type: "image/png" }),
    );
    const canvas = new OffscreenCanvas(bitmap.width, bitmap.height);
    const ctx = canvas.getContext("2d");
    if (!ctx) throw new Error("2d canvas context unavailable");
    ctx.drawImage(bitmap, 0, 0);
    const img = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
    return { width: img.width, height: img.height, data: img.data };
  };
}
