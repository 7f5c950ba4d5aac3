import type { Raster } from './types';

/** Diverging blue/white/red endpoints (negative / zero / positive). */
const NEGATIVE_HUE = [33, 102, 172] as const;
const POSITIVE_HUE = [178, 24, 43] as const;
const WHITE = [255, 255, 255] as const;

/**
 * Map a field value in [-1, 1] to RGB.
 *
 * Exactly 0 is white (low confidence); saturation toward the polarity hue
 * grows monotonically with |value|.
 */
export const divergingColor = (value: number): [number, number, number] => {
  const v = Math.max(-1, Math.min(1, value));
  const a = Math.abs(v);
  const hue = v >= 0 ? POSITIVE_HUE : NEGATIVE_HUE;
  return [
    Math.round(WHITE[0] + a * (hue[0] - WHITE[0])),
    Math.round(WHITE[1] + a * (hue[1] - WHITE[1])),
    Math.round(WHITE[2] + a * (hue[2] - WHITE[2])),
  ];
};

/**
 * Render a confidence or binarized raster to RGBA pixels.
 *
 * `opacity` applies uniformly (0..1); binarized rasters render as the two
 * saturated hues since their values are exactly +-1.
 */
export function renderOverlay(raster: Raster, opacity = 0.8): Uint8ClampedArray<ArrayBuffer> {
  const { width, height, values } = raster;
  const rgba = new Uint8ClampedArray(width * height * 4);
  const alpha = Math.round(255 * Math.max(0, Math.min(1, opacity)));
  for (let i = 0; i < values.length; i++) {
    const [r, g, b] = divergingColor(values[i]);
    rgba[4 * i] = r;
    rgba[4 * i + 1] = g;
    rgba[4 * i + 2] = b;
    rgba[4 * i + 3] = alpha;
  }
  return rgba;
}

/** Filament pixels as an opaque dark layer over transparent background. */
export function renderFilaments(mask: Raster): Uint8ClampedArray<ArrayBuffer> {
  const rgba = new Uint8ClampedArray(mask.width * mask.height * 4);
  for (let i = 0; i < mask.values.length; i++) {
    if (mask.values[i] > 0) {
      rgba[4 * i] = 20;
      rgba[4 * i + 1] = 20;
      rgba[4 * i + 2] = 20;
      rgba[4 * i + 3] = 255;
    }
  }
  return rgba;
}
