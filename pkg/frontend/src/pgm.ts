import type { Raster } from './types';

/**
 * Parse a binary P5 graymap.
 *
 * 8-bit rasters use the service's polarity/filament coding
 * (0 -> -1, 128 -> 0, 255 -> +1); 16-bit rasters are confidence maps with
 * the linear code [0, 65535] -> [-1, 1] (big-endian, per the PGM spec).
 */
export function parsePgm(buffer: ArrayBuffer): Raster {
  const bytes = new Uint8Array(buffer);
  let pos = 0;

  const isSpace = (b: number) => b === 32 || b === 9 || b === 10 || b === 13 || b === 12;
  const token = (): string => {
    while (pos < bytes.length) {
      if (bytes[pos] === 35 /* '#' */) {
        while (pos < bytes.length && bytes[pos] !== 10) pos++;
      } else if (isSpace(bytes[pos])) {
        pos++;
      } else {
        break;
      }
    }
    const start = pos;
    while (pos < bytes.length && !isSpace(bytes[pos])) pos++;
    if (start === pos) throw new Error('truncated PGM header');
    return String.fromCharCode(...bytes.subarray(start, pos));
  };

  const magic = token();
  if (magic !== 'P5') throw new Error(`not a binary graymap (magic ${magic})`);
  const width = Number(token());
  const height = Number(token());
  const maxval = Number(token());
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new Error(`bad dimensions ${width}x${height}`);
  }
  pos++; // single whitespace byte after maxval
  const n = width * height;
  const values = new Float64Array(n);
  if (maxval === 255) {
    if (bytes.length - pos !== n) throw new Error('pixel data size mismatch');
    for (let i = 0; i < n; i++) {
      const code = bytes[pos + i];
      if (code === 0) values[i] = -1;
      else if (code === 128) values[i] = 0;
      else if (code === 255) values[i] = 1;
      else throw new Error(`pixel ${i} has unexpected code ${code}`);
    }
  } else if (maxval === 65535) {
    if (bytes.length - pos !== 2 * n) throw new Error('pixel data size mismatch');
    for (let i = 0; i < n; i++) {
      const code = (bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1];
      values[i] = (code / 65535) * 2 - 1;
    }
  } else {
    throw new Error(`unsupported maxval ${maxval}`);
  }
  return { width, height, values };
}

/** Encode a filament mask (values 0/1, row-major) as 8-bit P5 bytes. */
export function encodeFilamentPgm(mask: Uint8Array, width: number, height: number): Uint8Array {
  if (mask.length !== width * height) throw new Error('mask size mismatch');
  const header = `P5\n${width} ${height}\n255\n`;
  const out = new Uint8Array(header.length + mask.length);
  for (let i = 0; i < header.length; i++) out[i] = header.charCodeAt(i);
  for (let i = 0; i < mask.length; i++) out[header.length + i] = mask[i] ? 255 : 0;
  return out;
}
