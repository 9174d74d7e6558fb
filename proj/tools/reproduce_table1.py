#!/usr/bin/env python3
"""Full-scale three-fold run on the BUSI malignant images, compared with the published scores.

Advisory only: a metric passes when its cross-fold mean lies within +-5 points of the published
mean. The exit status is 0 when every metric passes, 1 otherwise.

    python3 tools/reproduce_table1.py --busi /data/Dataset_BUSI_with_GT --bagnet build/tools/bagnet
"""

import argparse
import json
import re
import subprocess
import sys
from pathlib import Path

# Mean and std in percent, from the BAGNet row of the results table.
PUBLISHED = {
    "accuracy": (92.60, 0.77),
    "jaccard": (59.71, 3.75),
    "precision": (75.69, 2.51),
    "recall": (76.99, 3.58),
    "specificity": (96.46, 0.85),
    "dice": (69.93, 3.63),
}
TOLERANCE = 5.0

IMAGE_RE = re.compile(r"^malignant \((\d+)\)\.png$")


def merged_mask(masks, out_path):
    from PIL import Image, ImageChops

    merged = Image.open(masks[0]).convert("L")
    for extra in masks[1:]:
        merged = ImageChops.lighter(merged, Image.open(extra).convert("L"))
    merged.save(out_path)
    return out_path


def build_manifest(busi, work, size, seed):
    src = busi / "malignant"
    if not src.is_dir():
        sys.exit(f"expected {src} (the 'malignant' folder of Dataset_BUSI_with_GT)")
    rows = []
    for img in sorted(src.iterdir(), key=lambda p: p.name):
        m = IMAGE_RE.match(img.name)
        if not m:
            continue
        stem = img.name[: -len(".png")]
        masks = sorted(src.glob(stem + "_mask*.png"))
        if not masks:
            sys.exit(f"no mask for {img}")
        mask = masks[0] if len(masks) == 1 else merged_mask(masks, work / f"{stem}_merged_mask.png")
        rows.append((int(m.group(1)), img, mask))
    rows.sort()
    if len(rows) != 210:
        print(f"warning: found {len(rows)} malignant images, expected 210", file=sys.stderr)
    manifest = work / "manifest.tsv"
    with manifest.open("w") as f:
        f.write("# id\timage\tmask\t[fold]\n")
        f.write(f"#! target_size {size} {size}\n")
        f.write(f"#! seed {seed}\n")
        for n, img, mask in rows:
            f.write(f"malignant_{n:03d}\t{img.resolve()}\t{mask.resolve()}\n")
    return manifest


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--busi", type=Path, required=True, help="Dataset_BUSI_with_GT directory")
    ap.add_argument("--bagnet", type=Path, default=Path("build/tools/bagnet"))
    ap.add_argument("--out", type=Path, default=Path("table1_run"))
    ap.add_argument("--size", type=int, default=256, help="square input size, multiple of 16")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    args.out.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(args.busi, args.out, args.size, args.seed)
    cmd = [
        str(args.bagnet), "train",
        "--manifest", str(manifest),
        "--out-dir", str(args.out / "run"),
        "--folds", "3", "--epochs", "50", "--batch-size", "12", "--lr", "0.001",
        "--seed", str(args.seed),
    ]
    print(" ".join(cmd), flush=True)
    subprocess.run(cmd, check=True)

    record = json.loads((args.out / "run" / "run_record.json").read_text())
    agg = record["aggregate"]
    ok = True
    print(f"{'metric':<12} {'ours':>14} {'published':>14} {'delta':>7}")
    for name, (mean, std) in PUBLISHED.items():
        got_mean = 100.0 * agg[name]["mean"]
        got_std = 100.0 * agg[name]["std"]
        delta = got_mean - mean
        within = abs(delta) <= TOLERANCE
        ok = ok and within
        print(f"{name:<12} {got_mean:7.2f}+-{got_std:5.2f} {mean:7.2f}+-{std:5.2f} {delta:+7.2f}"
              f"  {'ok' if within else 'outside +-5'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
