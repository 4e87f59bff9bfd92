/**
 * Export sessions: run the detector / embedding model over a dataset
 * directory and write the engine's interchange files.
 *
 * A dataset directory holds `dataset.json` plus image files:
 *
 *   {
 *     "origin": "toy_near",
 *     "images": [{"id": "img000", "file": "images/img000.pgm"}],
 *     "annotations": [
 *       {"image_id": "img000", "bbox": [x, y, w, h], "category_id": 7, "is_unknown": true}
 *     ]
 *   }
 *
 * Annotation boxes are COCO-style (x, y, w, h); the exporter owns the
 * conversion to the engine's corner form, the NMS, and the image-to-feature
 * spatial scale, all recorded in the session manifest.
 */

import * as fs from 'node:fs';
import * as path from 'node:path';

import {
  DetectionRecord,
  EmbeddingRecord,
  FeatureMap,
  GroundTruthObject,
  writeDetections,
  writeEmbeddings,
  writeFeatureMaps,
  writeGroundTruth,
  writeHead,
  writeImageList,
} from './formats.js';
import {
  Architecture,
  CapabilityError,
  DEFAULT_NUM_CLASSES,
  NMS_IOU,
  buildArchitecture,
  computeLatentMap,
  detect,
  embedImage,
} from './model.js';
import { readPgm, UnreadableImageError } from './pgm.js';

export interface DatasetImage {
  id: string;
  file: string;
}

export interface DatasetAnnotation {
  image_id: string;
  bbox: [number, number, number, number]; // x, y, w, h
  category_id: number;
  is_unknown: boolean;
}

export interface Dataset {
  origin: string;
  images: DatasetImage[];
  annotations: DatasetAnnotation[];
  root: string;
}

export interface ExportSession {
  model: string;
  seed: number;
  numClasses: number;
  datasetDir: string;
  threshold: number; // 0 for detector-threshold calibration runs
  withFeatures: boolean;
  outDir: string;
  recordsFile: string;
  gtFile: string | null;
  headFile: string | null;
  featureMapsFile: string | null;
  embeddingsFile: string | null;
  imagesFile: string | null;
  normalizeEmbeddings: boolean;
}

export function defaultSession(model: string, datasetDir: string, outDir: string): ExportSession {
  return {
    model,
    seed: 0,
    numClasses: DEFAULT_NUM_CLASSES,
    datasetDir,
    threshold: 0.5,
    withFeatures: true,
    outDir,
    recordsFile: path.join(outDir, 'detections.tsv'),
    gtFile: path.join(outDir, 'ground_truth.tsv'),
    headFile: path.join(outDir, 'head.fmyc'),
    featureMapsFile: path.join(outDir, 'feature_maps.fmyc'),
    embeddingsFile: path.join(outDir, 'embeddings.tsv'),
    imagesFile: path.join(outDir, 'images.tsv'),
    normalizeEmbeddings: false,
  };
}

export function loadDataset(dir: string): Dataset {
  const spec = JSON.parse(fs.readFileSync(path.join(dir, 'dataset.json'), 'utf-8'));
  const seen = new Set<string>();
  for (const img of spec.images) {
    if (seen.has(img.id)) {
      throw new Error(`duplicate image id in dataset: ${img.id}`);
    }
    seen.add(img.id);
  }
  return { origin: spec.origin ?? 'unknown', images: spec.images, annotations: spec.annotations ?? [], root: dir };
}

function cocoToCorners(b: [number, number, number, number]): [number, number, number, number] {
  return [b[0], b[1], b[0] + b[2], b[1] + b[3]];
}

interface SessionLog {
  model: string;
  seed: number;
  threshold: number;
  nms_iou: number;
  spatial_scale: number;
  latent_layer: string;
  with_features: boolean;
  normalize_embeddings: boolean;
  skipped_images: string[];
  num_detections: number;
}

function checkFeatureCapability(arch: Architecture, session: ExportSession): void {
  if (session.withFeatures && !arch.hasLinearHead) {
    throw new CapabilityError(
      `architecture '${arch.name}' has no final fully connected layer: ` +
        `per-object features and head weights cannot be exported; ` +
        `re-run with --no-features (output-based scoring only)`,
    );
  }
}

/** Run the detector over every dataset image and write the export files. */
export function exportDetections(session: ExportSession): SessionLog {
  const arch = buildArchitecture(session.model, session.seed, session.numClasses);
  checkFeatureCapability(arch, session);
  const dataset = loadDataset(session.datasetDir);
  fs.mkdirSync(session.outDir, { recursive: true });

  const records: DetectionRecord[] = [];
  const maps: FeatureMap[] = [];
  const skipped: string[] = [];
  let spatialScale = 0;

  for (const img of dataset.images) {
    let image;
    try {
      image = readPgm(path.join(dataset.root, img.file));
    } catch (err) {
      if (err instanceof UnreadableImageError) {
        console.error(`skipping unreadable image ${img.id}: ${err.message}`);
        skipped.push(img.id);
        continue;
      }
      throw err;
    }
    const detections = detect(arch, image, session.threshold);
    detections.forEach((d, i) => {
      records.push({
        imageId: img.id,
        detIndex: i,
        bbox: d.bbox,
        predClass: d.predClass,
        confidence: d.confidence,
        logits: d.logits,
        features: session.withFeatures ? d.features : null,
        latentPooled: null,
      });
    });
    const latent = computeLatentMap(image);
    spatialScale = latent.spatialScale;
    maps.push({
      imageId: img.id,
      layerName: arch.latentLayer,
      channels: latent.channels,
      height: latent.height,
      width: latent.width,
      data: latent.data,
      spatialScale: latent.spatialScale,
    });
  }

  writeDetections(session.recordsFile, records);
  if (session.imagesFile) {
    writeImageList(
      session.imagesFile,
      dataset.images.filter((i) => !skipped.includes(i.id)).map((i) => i.id),
    );
  }
  if (session.gtFile) {
    const gts: GroundTruthObject[] = dataset.annotations.map((a) => ({
      imageId: a.image_id,
      bbox: cocoToCorners(a.bbox),
      categoryId: a.category_id,
      isUnknown: a.is_unknown,
      datasetOrigin: dataset.origin,
    }));
    writeGroundTruth(session.gtFile, gts);
  }
  if (session.headFile && arch.hasLinearHead) {
    writeHead(session.headFile, arch.W!, arch.b!);
  }
  if (session.featureMapsFile) {
    writeFeatureMaps(session.featureMapsFile, maps);
  }

  const log: SessionLog = {
    model: session.model,
    seed: session.seed,
    threshold: session.threshold,
    nms_iou: NMS_IOU,
    spatial_scale: spatialScale,
    latent_layer: arch.latentLayer,
    with_features: session.withFeatures,
    normalize_embeddings: session.normalizeEmbeddings,
    skipped_images: skipped,
    num_detections: records.length,
  };
  fs.writeFileSync(
    path.join(session.outDir, 'export_manifest.json'),
    JSON.stringify(log, Object.keys(log).sort(), 2) + '\n',
  );
  return log;
}

/** One embedding per readable image; unreadable images are skipped and noted. */
export function exportEmbeddings(session: ExportSession): SessionLog {
  const dataset = loadDataset(session.datasetDir);
  fs.mkdirSync(session.outDir, { recursive: true });
  const records: EmbeddingRecord[] = [];
  const skipped: string[] = [];
  for (const img of dataset.images) {
    let image;
    try {
      image = readPgm(path.join(dataset.root, img.file));
    } catch (err) {
      if (err instanceof UnreadableImageError) {
        console.error(`skipping unreadable image ${img.id}: ${err.message}`);
        skipped.push(img.id);
        continue;
      }
      throw err;
    }
    records.push({
      imageId: img.id,
      embedding: embedImage(image, session.normalizeEmbeddings),
      splitTag: null,
    });
  }
  if (!session.embeddingsFile) {
    throw new Error('embeddings export needs an output file');
  }
  writeEmbeddings(session.embeddingsFile, records);
  const log: SessionLog = {
    model: 'intensity_histogram',
    seed: session.seed,
    threshold: 0,
    nms_iou: NMS_IOU,
    spatial_scale: 0,
    latent_layer: 'none',
    with_features: false,
    normalize_embeddings: session.normalizeEmbeddings,
    skipped_images: skipped,
    num_detections: records.length,
  };
  fs.writeFileSync(
    path.join(session.outDir, 'embedding_manifest.json'),
    JSON.stringify(log, Object.keys(log).sort(), 2) + '\n',
  );
  return log;
}
