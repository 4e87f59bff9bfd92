#!/usr/bin/env node
/**
 * Exporter CLI; flags mirror the engine's vocabulary (--records, --gt,
 * --head, --feature-maps, --embeddings, --out, --seed).
 *
 *   oodeval-export export-detections --dataset <dir> --model toy-rcnn \
 *       --threshold 0.5 --out <dir> [--no-features] [--seed N] [--classes N]
 *   oodeval-export export-embeddings --dataset <dir> --out <dir> [--normalize]
 */

import { parseArgs } from 'node:util';
import * as path from 'node:path';

import { defaultSession, exportDetections, exportEmbeddings } from './exporter.js';
import { CapabilityError } from './model.js';

function main(argv: string[]): number {
  const command = argv[0];
  const { values } = parseArgs({
    args: argv.slice(1),
    options: {
      dataset: { type: 'string' },
      model: { type: 'string', default: 'toy-rcnn' },
      threshold: { type: 'string', default: '0.5' },
      classes: { type: 'string', default: '3' },
      out: { type: 'string' },
      records: { type: 'string' },
      gt: { type: 'string' },
      head: { type: 'string' },
      'feature-maps': { type: 'string' },
      embeddings: { type: 'string' },
      seed: { type: 'string', default: '0' },
      'no-features': { type: 'boolean', default: false },
      normalize: { type: 'boolean', default: false },
    },
  });

  if (!values.dataset || !values.out) {
    console.error('required: --dataset <dir> --out <dir>');
    return 2;
  }
  const session = defaultSession(values.model!, values.dataset, values.out);
  session.seed = Number(values.seed);
  session.numClasses = Number(values.classes);
  session.threshold = Number(values.threshold);
  session.withFeatures = !values['no-features'];
  session.normalizeEmbeddings = Boolean(values.normalize);
  if (values.records) session.recordsFile = path.resolve(values.records);
  if (values.gt) session.gtFile = path.resolve(values.gt);
  if (values.head) session.headFile = path.resolve(values.head);
  if (values['feature-maps']) session.featureMapsFile = path.resolve(values['feature-maps']);
  if (values.embeddings) session.embeddingsFile = path.resolve(values.embeddings);

  try {
    if (command === 'export-detections') {
      const log = exportDetections(session);
      console.log(`exported ${log.num_detections} detections to ${session.outDir}`);
      return 0;
    }
    if (command === 'export-embeddings') {
      const log = exportEmbeddings(session);
      console.log(`exported embeddings for ${log.num_detections} images to ${session.outDir}`);
      return 0;
    }
  } catch (err) {
    if (err instanceof CapabilityError) {
      console.error(`capability error: ${err.message}`);
      return 3;
    }
    throw err;
  }
  console.error(`unknown command ${command}; use export-detections or export-embeddings`);
  return 2;
}

process.exit(main(process.argv.slice(2)));
