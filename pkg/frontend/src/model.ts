/**
 * Deterministic toy detector and image-embedding model.
 *
 * The detector mirrors the access paths of real architecture families:
 * grid-anchor proposals scored from pooled latent features, an optional
 * final linear head (logits = W z + b) exposing per-object features, and a
 * convolutional latent map at 1/4 resolution. The fully-convolutional
 * family exposes logits and latent maps but no per-object feature vector.
 * All weights derive from a seed; inference is pure.
 */

import type { GrayImage } from './pgm.js';

export const FEATURE_DIM = 8;
export const LATENT_CHANNELS = 4;
export const LATENT_STRIDE = 4; // spatial_scale = 1/4
export const DEFAULT_NUM_CLASSES = 3;
export const NMS_IOU = 0.5;

export interface Architecture {
  name: string;
  numClasses: number;
  hasLinearHead: boolean;
  latentLayer: string;
  W: number[][] | null; // (numClasses, FEATURE_DIM) when hasLinearHead
  b: number[] | null;
  mixing: number[][]; // used by the headless family's nonlinear readout
  mixingBias: number[];
}

export interface Detection {
  bbox: [number, number, number, number];
  logits: number[];
  features: number[] | null;
  predClass: number;
  confidence: number;
}

export interface LatentMap {
  channels: number;
  height: number;
  width: number;
  data: Float64Array;
  spatialScale: number;
}

export class CapabilityError extends Error {}

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function gaussian(rand: () => number): number {
  // Box-Muller; both uniforms strictly inside (0, 1)
  const u = Math.max(rand(), 1e-12);
  const v = rand();
  return Math.sqrt(-2.0 * Math.log(u)) * Math.cos(2.0 * Math.PI * v);
}

function matrix(rand: () => number, rows: number, cols: number, scale: number): number[][] {
  return Array.from({ length: rows }, () =>
    Array.from({ length: cols }, () => scale * gaussian(rand)),
  );
}

export const ARCHITECTURE_FAMILIES: Record<string, { hasLinearHead: boolean; latentLayer: string }> = {
  'toy-rcnn': { hasLinearHead: true, latentLayer: 'rpn_conv' },
  'toy-detr': { hasLinearHead: true, latentLayer: 'encoder_0' },
  'toy-yolo': { hasLinearHead: false, latentLayer: 'backbone_end' },
};

export function buildArchitecture(
  name: string,
  seed: number,
  numClasses: number = DEFAULT_NUM_CLASSES,
): Architecture {
  const family = ARCHITECTURE_FAMILIES[name];
  if (!family) {
    throw new Error(`unknown architecture ${name}; known: ${Object.keys(ARCHITECTURE_FAMILIES).join(', ')}`);
  }
  const rand = mulberry32(seed ^ 0x9e3779b9);
  const W = matrix(rand, numClasses, FEATURE_DIM, 1.8);
  const b = Array.from({ length: numClasses }, () => 0.3 * gaussian(rand));
  const mixing = matrix(rand, numClasses, FEATURE_DIM, 1.2);
  const mixingBias = Array.from({ length: numClasses }, () => 0.3 * gaussian(rand));
  return {
    name,
    numClasses,
    hasLinearHead: family.hasLinearHead,
    latentLayer: family.latentLayer,
    W: family.hasLinearHead ? W : null,
    b: family.hasLinearHead ? b : null,
    mixing,
    mixingBias,
  };
}

export function computeLatentMap(image: GrayImage): LatentMap {
  const height = Math.max(1, Math.floor(image.height / LATENT_STRIDE));
  const width = Math.max(1, Math.floor(image.width / LATENT_STRIDE));
  const data = new Float64Array(LATENT_CHANNELS * height * width);
  const at = (x: number, y: number) =>
    image.pixels[Math.min(image.height - 1, y) * image.width + Math.min(image.width - 1, x)];
  for (let cy = 0; cy < height; cy++) {
    for (let cx = 0; cx < width; cx++) {
      let sum = 0;
      let sumSq = 0;
      let gradX = 0;
      let gradY = 0;
      for (let dy = 0; dy < LATENT_STRIDE; dy++) {
        for (let dx = 0; dx < LATENT_STRIDE; dx++) {
          const x = cx * LATENT_STRIDE + dx;
          const y = cy * LATENT_STRIDE + dy;
          const v = at(x, y);
          sum += v;
          sumSq += v * v;
          gradX += at(x + 1, y) - v;
          gradY += at(x, y + 1) - v;
        }
      }
      const n = LATENT_STRIDE * LATENT_STRIDE;
      const mean = sum / n;
      const cell = cy * width + cx;
      data[0 * height * width + cell] = mean;
      data[1 * height * width + cell] = gradX / n;
      data[2 * height * width + cell] = gradY / n;
      data[3 * height * width + cell] = sumSq / n - mean * mean;
    }
  }
  return { channels: LATENT_CHANNELS, height, width, data, spatialScale: 1.0 / LATENT_STRIDE };
}

function poolBoxFeatures(map: LatentMap, bbox: [number, number, number, number]): number[] {
  // channel means and maxes over the latent cells the box covers
  const x0 = Math.max(0, Math.floor(bbox[0] * map.spatialScale));
  const y0 = Math.max(0, Math.floor(bbox[1] * map.spatialScale));
  const x1 = Math.min(map.width, Math.ceil(bbox[2] * map.spatialScale));
  const y1 = Math.min(map.height, Math.ceil(bbox[3] * map.spatialScale));
  const features = new Array<number>(2 * map.channels).fill(0);
  const count = Math.max(1, (x1 - x0) * (y1 - y0));
  for (let c = 0; c < map.channels; c++) {
    let sum = 0;
    let max = -Infinity;
    for (let y = y0; y < y1; y++) {
      for (let x = x0; x < x1; x++) {
        const v = map.data[c * map.height * map.width + y * map.width + x];
        sum += v;
        if (v > max) max = v;
      }
    }
    features[c] = sum / count;
    features[map.channels + c] = Number.isFinite(max) ? max : 0;
  }
  return features;
}

function proposals(image: GrayImage): [number, number, number, number][] {
  const sizes = [16, 32];
  const stride = 16;
  const boxes: [number, number, number, number][] = [];
  for (const size of sizes) {
    for (let cy = stride / 2; cy < image.height; cy += stride) {
      for (let cx = stride / 2; cx < image.width; cx += stride) {
        const x1 = Math.max(0, cx - size / 2);
        const y1 = Math.max(0, cy - size / 2);
        const x2 = Math.min(image.width, cx + size / 2);
        const y2 = Math.min(image.height, cy + size / 2);
        if (x2 - x1 >= 4 && y2 - y1 >= 4) {
          boxes.push([x1, y1, x2, y2]);
        }
      }
    }
  }
  return boxes;
}

function softmaxMax(logits: number[]): { confidence: number; predClass: number } {
  const m = Math.max(...logits);
  let denom = 0;
  for (const c of logits) denom += Math.exp(c - m);
  let predClass = 0;
  for (let i = 1; i < logits.length; i++) {
    if (logits[i] > logits[predClass]) predClass = i;
  }
  return { confidence: 1.0 / denom, predClass };
}

function logitsFor(arch: Architecture, z: number[]): number[] {
  if (arch.hasLinearHead) {
    return arch.W!.map((row, c) => row.reduce((acc, w, j) => acc + w * z[j], arch.b![c]));
  }
  // fully-convolutional readout: nonlinear in z, no exposed linear layer
  return arch.mixing.map((row, c) => {
    let acc = arch.mixingBias[c];
    for (let j = 0; j < row.length; j++) acc += row[j] * z[j] * Math.abs(z[j]);
    return 3.0 * Math.tanh(acc);
  });
}

export function boxIou(a: [number, number, number, number], b: [number, number, number, number]): number {
  const ix1 = Math.max(a[0], b[0]);
  const iy1 = Math.max(a[1], b[1]);
  const ix2 = Math.min(a[2], b[2]);
  const iy2 = Math.min(a[3], b[3]);
  const iw = ix2 - ix1;
  const ih = iy2 - iy1;
  if (iw <= 0 || ih <= 0) return 0;
  const inter = iw * ih;
  const union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter;
  return inter / union;
}

function nms(dets: Detection[], iouThreshold: number): Detection[] {
  const order = dets
    .map((d, i) => ({ d, i }))
    .sort((p, q) => q.d.confidence - p.d.confidence || p.i - q.i);
  const kept: Detection[] = [];
  for (const { d } of order) {
    if (kept.every((k) => boxIou(k.bbox, d.bbox) <= iouThreshold)) {
      kept.push(d);
    }
  }
  return kept;
}

/** Full inference on one image: proposals, scoring, threshold filter, NMS. */
export function detect(arch: Architecture, image: GrayImage, threshold: number): Detection[] {
  const map = computeLatentMap(image);
  const candidates: Detection[] = [];
  for (const bbox of proposals(image)) {
    const z = poolBoxFeatures(map, bbox);
    const logits = logitsFor(arch, z);
    const { confidence, predClass } = softmaxMax(logits);
    candidates.push({
      bbox,
      logits,
      features: arch.hasLinearHead ? z : null,
      predClass,
      confidence,
    });
  }
  const retained = candidates.filter((d) => d.confidence >= threshold);
  return nms(retained, NMS_IOU);
}

export const EMBEDDING_DIM = 16;

/** Image-level embedding: intensity histogram, optionally unit-normalized. */
export function embedImage(image: GrayImage, normalize: boolean): number[] {
  const hist = new Array<number>(EMBEDDING_DIM).fill(0);
  for (const v of image.pixels) {
    const bin = Math.min(EMBEDDING_DIM - 1, Math.floor(v * EMBEDDING_DIM));
    hist[bin] += 1;
  }
  const total = image.pixels.length;
  let emb = hist.map((h) => h / total);
  if (normalize) {
    const norm = Math.sqrt(emb.reduce((acc, x) => acc + x * x, 0));
    emb = emb.map((x) => x / norm);
  }
  return emb;
}
