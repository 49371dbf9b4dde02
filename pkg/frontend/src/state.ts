/**
 * Viewer state and its pure transitions.
 *
 * Invariants: the slice index stays within [1, n_slices], exactly one
 * overlay mode is active (a single enum field), and at most one round
 * request is in flight (the busy flag gates click input).
 */

import type {
  OverlayMode,
  Polarity,
  RoundSummary,
  SessionInfo,
} from "./types.js";

export interface ViewState {
  sessionId: string | null;
  nSlices: number;
  hasGt: boolean;
  sliceIndex: number;
  overlay: OverlayMode;
  polarity: Polarity;
  busy: boolean;
  rounds: RoundSummary[];
  error: string | null;
  toast: string | null;
}

export function initialState(): ViewState {
  return {
    sessionId: null,
    nSlices: 0,
    hasGt: false,
    sliceIndex: 1,
    overlay: "none",
    polarity: "positive",
    busy: false,
    rounds: [],
    error: null,
    toast: null,
  };
}

export function loadSession(state: ViewState, info: SessionInfo): ViewState {
  return {
    ...initialState(),
    sessionId: info.id,
    nSlices: info.n_slices,
    hasGt: info.has_gt,
    sliceIndex: Math.min(state.sliceIndex, info.n_slices) || 1,
    overlay: state.overlay,
    polarity: state.polarity,
  };
}

/** Clamp into [1, nSlices]; a scrub past either end sticks at the end. */
export function setSlice(state: ViewState, index: number): ViewState {
  const clamped = Math.max(1, Math.min(state.nSlices || 1, Math.round(index)));
  return { ...state, sliceIndex: clamped };
}

export function stepSlice(state: ViewState, delta: number): ViewState {
  return setSlice(state, state.sliceIndex + delta);
}

export function setOverlay(state: ViewState, mode: OverlayMode): ViewState {
  return { ...state, overlay: mode };
}

export function togglePolarity(state: ViewState): ViewState {
  const polarity: Polarity =
    state.polarity === "positive" ? "negative" : "positive";
  return { ...state, polarity };
}

/** Null when a round is already in flight: the caller must not post. */
export function beginRound(state: ViewState): ViewState | null {
  if (state.busy) return null;
  return { ...state, busy: true, error: null, toast: null };
}

export function completeRound(
  state: ViewState,
  summary: RoundSummary,
): ViewState {
  return { ...state, busy: false, rounds: [...state.rounds, summary] };
}

/** Request failed: surface the banner, keep everything else intact. */
export function failRequest(state: ViewState, message: string): ViewState {
  return { ...state, busy: false, error: message };
}

export function clearError(state: ViewState): ViewState {
  return { ...state, error: null };
}

export function showToast(state: ViewState, message: string): ViewState {
  return { ...state, toast: message };
}

export function clearToast(state: ViewState): ViewState {
  return { ...state, toast: null };
}
