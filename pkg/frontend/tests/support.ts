/** Shared test helpers: seeded PRNG and fixture builders. */

export type { Decision } from "../src/types.js";
export type { FetchLike } from "../src/api.js";

/** Deterministic 32-bit PRNG (mulberry32); tests pin their seeds. */
export function seededRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randomInt(rng: () => number, lo: number, hi: number): number {
  return lo + Math.floor(rng() * (hi - lo + 1));
}

/** Random binary mask with roughly the given foreground fraction. */
export function randomMask(
  rng: () => number,
  total: number,
  fraction = 0.3,
): Uint8Array {
  const mask = new Uint8Array(total);
  for (let i = 0; i < total; i++) mask[i] = rng() < fraction ? 1 : 0;
  return mask;
}

/** Filled disk mask on an h x w grid. */
export function diskMask(
  h: number,
  w: number,
  cr: number,
  cc: number,
  radius: number,
): Uint8Array {
  const mask = new Uint8Array(h * w);
  for (let r = 0; r < h; r++) {
    for (let c = 0; c < w; c++) {
      if ((r - cr) ** 2 + (c - cc) ** 2 <= radius ** 2) mask[r * w + c] = 1;
    }
  }
  return mask;
}

/** Horizontal intensity gradient per slice, brighter in later slices. */
export function gradientSlices(
  nSlices: number,
  h: number,
  w: number,
): Float32Array[] {
  return Array.from({ length: nSlices }, (_, k) => {
    const gray = new Float32Array(h * w);
    for (let r = 0; r < h; r++) {
      for (let c = 0; c < w; c++) {
        gray[r * w + c] = (c / (w - 1)) * 0.8 + (k / nSlices) * 0.2;
      }
    }
    return gray;
  });
}
