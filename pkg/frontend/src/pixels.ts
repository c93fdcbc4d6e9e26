// Pure pixel plumbing: ApiImage (flat 0-255 RGB) to upscaled RGBA bytes.
// Kept free of DOM types so it can be unit-tested anywhere.

import type { ApiImage } from "./api";

/** Integer nearest-neighbor upscale; returns RGBA bytes, alpha 255. */
export function scaleNearest(img: ApiImage, factor: number): Uint8ClampedArray {
  if (!Number.isInteger(factor) || factor < 1) {
    throw new Error(`scale factor must be a positive integer, got ${factor}`);
  }
  const { width: w, height: h, rgb } = img;
  if (rgb.length !== w * h * 3) {
    throw new Error(`rgb length ${rgb.length} does not match ${w}x${h}`);
  }
  const ow = w * factor;
  const out = new Uint8ClampedArray(ow * h * factor * 4);
  for (let y = 0; y < h * factor; y++) {
    const sy = Math.floor(y / factor);
    for (let x = 0; x < ow; x++) {
      const s = (sy * w + Math.floor(x / factor)) * 3;
      const d = (y * ow + x) * 4;
      out[d] = rgb[s];
      out[d + 1] = rgb[s + 1];
      out[d + 2] = rgb[s + 2];
      out[d + 3] = 255;
    }
  }
  return out;
}

/** Draw an ApiImage onto a canvas at the given scale. No-ops (but still
 * sizes the canvas) where 2D contexts are unavailable, e.g. jsdom. */
export function drawScene(canvas: HTMLCanvasElement, img: ApiImage,
                          factor: number): void {
  canvas.width = img.width * factor;
  canvas.height = img.height * factor;
  let ctx: CanvasRenderingContext2D | null;
  try {
    ctx = canvas.getContext("2d");
  } catch {
    return;
  }
  if (!ctx) return;
  const rgba = scaleNearest(img, factor);
  const data = ctx.createImageData(canvas.width, canvas.height);
  data.data.set(rgba);
  ctx.putImageData(data, 0, 0);
}
