/**
 * Canvas <-> image coordinate mapping.
 *
 * The slice is drawn at integer zoom-independent offsets: canvas
 * position = pan + image position * zoom.  Image coordinates are
 * 0-based (row, col) pixel indices; canvas coordinates are continuous.
 */

export interface Viewport {
  zoom: number; // canvas pixels per image pixel, > 0
  panX: number; // canvas x of image column 0
  panY: number; // canvas y of image row 0
  imageWidth: number;
  imageHeight: number;
}

export interface ImagePoint {
  row: number;
  col: number;
}

/**
 * Map a canvas point to the image pixel under it, or null when the
 * point falls outside the image.
 */
export function canvasToImage(
  x: number,
  y: number,
  vp: Viewport,
): ImagePoint | null {
  const col = Math.floor((x - vp.panX) / vp.zoom);
  const row = Math.floor((y - vp.panY) / vp.zoom);
  if (row < 0 || row >= vp.imageHeight || col < 0 || col >= vp.imageWidth) {
    return null;
  }
  return { row, col };
}

/** Canvas position of an image pixel's center. */
export function imageToCanvas(
  point: ImagePoint,
  vp: Viewport,
): { x: number; y: number } {
  return {
    x: vp.panX + (point.col + 0.5) * vp.zoom,
    y: vp.panY + (point.row + 0.5) * vp.zoom,
  };
}

/** Viewport that scales the image to fit a canvas, centered. */
export function fitViewport(
  imageWidth: number,
  imageHeight: number,
  canvasWidth: number,
  canvasHeight: number,
): Viewport {
  const zoom = Math.min(canvasWidth / imageWidth, canvasHeight / imageHeight);
  return {
    zoom,
    panX: (canvasWidth - imageWidth * zoom) / 2,
    panY: (canvasHeight - imageHeight * zoom) / 2,
    imageWidth,
    imageHeight,
  };
}
