/**
 * Pure overlay compositing, matching the service's own PNG renderer.
 *
 * The constants and the blend arithmetic must stay byte-identical to
 * what the service uses, so a client-composed overlay and a
 * server-rendered one agree pixel for pixel.
 */

import type { Decision, RgbaImage } from "./types.js";

export const OVERLAY_ALPHA = 0.4;
export const MASK_COLOR: readonly [number, number, number] = [80, 220, 80];
export const DECISION_COLORS: Record<Decision, readonly [number, number, number]> = {
  prev: [235, 140, 30],
  curr: [60, 170, 235],
};

/**
 * Blend a color into the base image wherever the mask is set.
 *
 * The service computes (1 - a) * base + a * color in float and casts
 * to uint8, which truncates.  Math.trunc here, not Math.round.
 */
export function overlayMask(
  base: RgbaImage,
  mask: Uint8Array,
  color: readonly [number, number, number],
  alpha: number = OVERLAY_ALPHA,
): RgbaImage {
  const { width, height } = base;
  if (mask.length !== width * height) {
    throw new Error(`mask has ${mask.length} pixels, image is ${width}x${height}`);
  }
  const data = new Uint8ClampedArray(base.data);
  for (let i = 0; i < mask.length; i++) {
    if (mask[i] === 0) continue;
    const o = i * 4;
    data[o] = Math.trunc((1 - alpha) * base.data[o]! + alpha * color[0]);
    data[o + 1] = Math.trunc((1 - alpha) * base.data[o + 1]! + alpha * color[1]);
    data[o + 2] = Math.trunc((1 - alpha) * base.data[o + 2]! + alpha * color[2]);
  }
  return { width, height, data };
}

/** Fused mask tinted by the slice's fusion decision. */
export function overlayDecision(
  base: RgbaImage,
  mask: Uint8Array,
  decision: Decision,
): RgbaImage {
  return overlayMask(base, mask, DECISION_COLORS[decision]);
}

/** Opaque RGBA from a grayscale buffer of [0, 1] floats. */
export function grayToRgba(
  gray: Float32Array | number[],
  width: number,
  height: number,
): RgbaImage {
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    const v = Math.trunc(gray[i]! * 255.0);
    const o = i * 4;
    data[o] = v;
    data[o + 1] = v;
    data[o + 2] = v;
    data[o + 3] = 255;
  }
  return { width, height, data };
}
