/**
 * Writers for the evaluation engine's interchange formats.
 *
 * Text records: UTF-8, one object per line, tab-separated fields, vectors as
 * comma-joined decimals, mandatory `#schema:<type>:<version>` header line.
 * Tensors: flat little-endian container, magic FMYC, u16 version, then
 * tagged length-prefixed records with f32 payloads.
 */

import * as fs from 'node:fs';

export const SCHEMA_VERSION = 1;

export interface DetectionRecord {
  imageId: string;
  detIndex: number;
  bbox: [number, number, number, number]; // x_min, y_min, x_max, y_max in pixels
  predClass: number;
  confidence: number;
  logits: number[];
  features: number[] | null;
  latentPooled: number[] | null;
}

export interface GroundTruthObject {
  imageId: string;
  bbox: [number, number, number, number];
  categoryId: number;
  isUnknown: boolean;
  datasetOrigin: string;
}

export interface EmbeddingRecord {
  imageId: string;
  embedding: number[];
  splitTag: string | null;
}

export interface CategoryEntry {
  categoryId: number;
  name: string;
  role: 'id' | 'ood_near' | 'ood_far' | 'overlap';
}

export interface FeatureMap {
  imageId: string;
  layerName: string;
  channels: number;
  height: number;
  width: number;
  data: Float64Array; // row-major (c, h, w)
  spatialScale: number;
}

/** Shortest round-trip decimal; JS ToString already guarantees it for float64. */
export function fmtFloat(x: number): string {
  if (!Number.isFinite(x)) {
    throw new Error(`non-finite value in record: ${x}`);
  }
  return String(x);
}

function fmtVector(v: number[] | null): string {
  if (v === null) return '';
  return v.map(fmtFloat).join(',');
}

function writeLines(path: string, schemaType: string, lines: string[]): void {
  const body = [`#schema:${schemaType}:${SCHEMA_VERSION}`, ...lines].join('\n') + '\n';
  fs.writeFileSync(path, body, 'utf-8');
}

export function writeDetections(path: string, records: DetectionRecord[]): void {
  writeLines(
    path,
    'detection',
    records.map((r) =>
      [
        r.imageId,
        String(r.detIndex),
        fmtVector(r.bbox),
        String(r.predClass),
        fmtFloat(r.confidence),
        fmtVector(r.logits),
        fmtVector(r.features),
        fmtVector(r.latentPooled),
      ].join('\t'),
    ),
  );
}

export function writeGroundTruth(path: string, objects: GroundTruthObject[]): void {
  writeLines(
    path,
    'ground_truth',
    objects.map((o) =>
      [
        o.imageId,
        fmtVector(o.bbox),
        String(o.categoryId),
        o.isUnknown ? '1' : '0',
        o.datasetOrigin,
      ].join('\t'),
    ),
  );
}

export function writeEmbeddings(path: string, records: EmbeddingRecord[]): void {
  writeLines(
    path,
    'embedding',
    records.map((r) => [r.imageId, fmtVector(r.embedding), r.splitTag ?? ''].join('\t')),
  );
}

export function writeCategories(path: string, entries: CategoryEntry[]): void {
  writeLines(
    path,
    'category_table',
    entries.map((e) => [String(e.categoryId), e.name, e.role].join('\t')),
  );
}

export function writeImageList(path: string, imageIds: string[]): void {
  writeLines(path, 'image_list', imageIds);
}

// --------------------------------------------------------------------------
// FMYC tensor container

const MAGIC = Buffer.from('FMYC', 'ascii');
const CONTAINER_VERSION = 1;

class Writer {
  private chunks: Buffer[] = [];

  u8(v: number) {
    const b = Buffer.alloc(1);
    b.writeUInt8(v);
    this.chunks.push(b);
  }
  u16(v: number) {
    const b = Buffer.alloc(2);
    b.writeUInt16LE(v);
    this.chunks.push(b);
  }
  u32(v: number) {
    const b = Buffer.alloc(4);
    b.writeUInt32LE(v);
    this.chunks.push(b);
  }
  u64(v: number) {
    const b = Buffer.alloc(8);
    b.writeBigUInt64LE(BigInt(v));
    this.chunks.push(b);
  }
  f32(v: number) {
    const b = Buffer.alloc(4);
    b.writeFloatLE(v);
    this.chunks.push(b);
  }
  str(s: string) {
    const raw = Buffer.from(s, 'utf-8');
    this.u32(raw.length);
    this.chunks.push(raw);
  }
  f32Array(values: ArrayLike<number>) {
    const b = Buffer.alloc(4 * values.length);
    for (let i = 0; i < values.length; i++) {
      b.writeFloatLE(values[i], 4 * i);
    }
    this.chunks.push(b);
  }
  concat(): Buffer {
    return Buffer.concat(this.chunks);
  }
}

function containerRecord(tag: string, payload: Buffer): Buffer {
  const w = new Writer();
  w.str(tag);
  w.u64(payload.length);
  return Buffer.concat([w.concat(), payload]);
}

function containerHeader(): Buffer {
  const w = new Writer();
  w.u16(CONTAINER_VERSION);
  return Buffer.concat([MAGIC, w.concat()]);
}

export function writeHead(path: string, W: number[][], b: number[]): void {
  const w = new Writer();
  w.u32(W.length);
  w.u32(W[0].length);
  w.f32Array(W.flat());
  w.f32Array(b);
  fs.writeFileSync(path, Buffer.concat([containerHeader(), containerRecord('head', w.concat())]));
}

export function writeFeatureMaps(path: string, maps: FeatureMap[]): void {
  const records = maps.map((m) => {
    const w = new Writer();
    w.str(m.imageId);
    w.str(m.layerName);
    w.u32(m.channels);
    w.u32(m.height);
    w.u32(m.width);
    w.f32(m.spatialScale);
    w.f32Array(m.data);
    return containerRecord('feature_map', w.concat());
  });
  fs.writeFileSync(path, Buffer.concat([containerHeader(), ...records]));
}
