/**
 * Wire types for the voliseg session service.
 *
 * These mirror the JSON payloads exactly; the viewer never invents mask
 * state of its own, it only renders what the service returns.
 */

export type Polarity = "positive" | "negative";

export type Decision = "prev" | "curr";

export type OverlayMode = "none" | "raw" | "fused" | "diff";

export interface ClickOut {
  slice: number;
  row: number;
  col: number;
  polarity: Polarity;
}

export interface SessionInfo {
  id: string;
  n_slices: number;
  dims: [number, number, number];
  has_gt: boolean;
}

export interface RoundSummary {
  session_id: string;
  round: number;
  prompt_index: number;
  n_slices: number;
  decisions: Decision[];
  mean_dice: number | null;
  per_slice_dice: number[] | null;
}

export interface MasksPayload {
  round: number;
  dims: [number, number, number];
  rle: number[][];
  decisions: Decision[];
}

export interface RoundMetrics {
  index: number;
  prompt_index: number;
  mean_dice: number;
  per_slice_dice: number[];
  decisions: Decision[];
}

export interface MetricsPayload {
  session_id: string;
  rounds: RoundMetrics[];
}

export interface LoggedClick {
  slice_index: number;
  row: number;
  col: number;
  positive: boolean;
}

export interface SessionLog {
  session_id: string;
  volume_id: string;
  volume_ref: string | null;
  dims: number[];
  config: Record<string, unknown>;
  rounds: {
    index: number;
    prompt_index: number;
    clicks: LoggedClick[];
    decisions: Decision[];
    prompt_rle: number[];
    raw_rle: number[][];
    fused_rle: number[][];
    mean_dice: number | null;
  }[];
}

/** Plain RGBA pixel buffer, independent of any DOM canvas. */
export interface RgbaImage {
  width: number;
  height: number;
  data: Uint8ClampedArray;
}
