#!/usr/bin/env python3
"""Verify the published benchmark manifests against their per-split image counts.

Network-dependent integration: download the published split manifests (the
benchmark's per-subset image-id configuration files), convert each subset to
the engine's split-manifest format (one line per image, assignment = the
subset name, no evidence needed for kept images), place them in a directory as

    coco_near.tsv  coco_far.tsv  openimages_near.tsv
    openimages_far.tsv  coco_farther.tsv  openimages_farther.tsv

and run:  python3 scripts/check_split_counts.py <dir>

Exits non-zero if any per-split image count deviates from the published
figures. The same check runs inside the acceptance suite when BENCHMARK_SPLITS_DIR
points at the directory.
"""

import os
import sys

REPO = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, os.path.join(REPO, "src"))

from oodeval import records as rio  # noqa: E402

EXPECTED = {
    "coco_near": 1174,
    "coco_far": 938,
    "openimages_near": 908,
    "openimages_far": 1179,
    "coco_farther": 1873,
    "openimages_farther": 1695,
}


def main() -> int:
    if len(sys.argv) != 2:
        print(__doc__)
        return 2
    data_dir = sys.argv[1]
    failures = 0
    for name, expected in EXPECTED.items():
        path = os.path.join(data_dir, f"{name}.tsv")
        if not os.path.exists(path):
            print(f"{name}: MISSING ({path})")
            failures += 1
            continue
        manifest = rio.load_manifest(path)
        kept = sum(1 for e in manifest.entries if e.assignment != "removed")
        status = "ok" if kept == expected else "MISMATCH"
        if kept != expected:
            failures += 1
        print(f"{name}: {kept} images (expected {expected}) {status}")
    return 1 if failures else 0


if __name__ == "__main__":
    sys.exit(main())
