/**
 * Client-side decode of the service's run-length masks.
 *
 * The encoding is alternating run lengths over the row-major flattened
 * mask, always starting with a background run (a leading foreground
 * pixel is encoded as a zero-length background run).
 */

export function decodeRle(runs: number[], total: number): Uint8Array {
  const out = new Uint8Array(total);
  let pos = 0;
  let value = 0;
  for (const run of runs) {
    if (!Number.isInteger(run) || run < 0) {
      throw new Error(`run lengths must be non-negative integers, got ${run}`);
    }
    if (value === 1) out.fill(1, pos, pos + run);
    pos += run;
    value ^= 1;
  }
  if (pos !== total) {
    throw new Error(`runs cover ${pos} pixels, expected ${total}`);
  }
  return out;
}

/** Decode every slice of a masks payload into h*w buffers. */
export function decodeMaskVolume(
  rle: number[][],
  dims: [number, number, number],
): Uint8Array[] {
  const [n, h, w] = dims;
  if (rle.length !== n) {
    throw new Error(`payload has ${rle.length} slices, dims say ${n}`);
  }
  return rle.map((runs) => decodeRle(runs, h * w));
}
