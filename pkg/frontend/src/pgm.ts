/** Minimal PGM (P5 binary / P2 ascii) reader for the toy datasets. */

import * as fs from 'node:fs';

export interface GrayImage {
  width: number;
  height: number;
  pixels: Float64Array; // row-major, values in [0, 1]
}

export class UnreadableImageError extends Error {}

function tokenize(header: Buffer): { tokens: string[]; offset: number } {
  // read tokens until we have magic + width + height + maxval, skipping comments
  const tokens: string[] = [];
  let i = 0;
  let current = '';
  while (i < header.length && tokens.length < 4) {
    const ch = header[i];
    if (ch === 0x23) {
      // '#' comment to end of line
      while (i < header.length && header[i] !== 0x0a) i++;
      i++;
      continue;
    }
    if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
      if (current.length) {
        tokens.push(current);
        current = '';
      }
      i++;
      continue;
    }
    current += String.fromCharCode(ch);
    i++;
  }
  if (current.length && tokens.length < 4) tokens.push(current);
  return { tokens, offset: i };
}

export function readPgm(path: string): GrayImage {
  let raw: Buffer;
  try {
    raw = fs.readFileSync(path);
  } catch (err) {
    throw new UnreadableImageError(`cannot read ${path}: ${err}`);
  }
  const { tokens, offset } = tokenize(raw);
  if (tokens.length < 4 || (tokens[0] !== 'P5' && tokens[0] !== 'P2')) {
    throw new UnreadableImageError(`${path}: not a P5/P2 PGM file`);
  }
  const width = Number(tokens[1]);
  const height = Number(tokens[2]);
  const maxval = Number(tokens[3]);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new UnreadableImageError(`${path}: bad dimensions ${tokens[1]}x${tokens[2]}`);
  }
  if (!Number.isInteger(maxval) || maxval < 1 || maxval > 255) {
    throw new UnreadableImageError(`${path}: unsupported maxval ${tokens[3]}`);
  }
  const pixels = new Float64Array(width * height);
  if (tokens[0] === 'P5') {
    const body = raw.subarray(offset);
    if (body.length < width * height) {
      throw new UnreadableImageError(`${path}: truncated pixel data`);
    }
    for (let i = 0; i < width * height; i++) pixels[i] = body[i] / maxval;
  } else {
    const values = raw
      .subarray(offset)
      .toString('ascii')
      .split(/\s+/)
      .filter((t) => t.length);
    if (values.length < width * height) {
      throw new UnreadableImageError(`${path}: truncated pixel data`);
    }
    for (let i = 0; i < width * height; i++) pixels[i] = Number(values[i]) / maxval;
  }
  return { width, height, pixels };
}

export function writePgm(path: string, image: GrayImage): void {
  const header = `P5\n${image.width} ${image.height}\n255\n`;
  const body = Buffer.alloc(image.width * image.height);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(image.pixels[i] * 255)));
  }
  fs.writeFileSync(path, Buffer.concat([Buffer.from(header, 'ascii'), body]));
}
