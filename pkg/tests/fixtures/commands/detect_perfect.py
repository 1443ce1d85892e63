"""A stand-in detector that reports the ground truth labels of every
image with full confidence.

Labels are looked up beside each image or, for the images/<split>
layout, under labels/<split>.
"""

import argparse
from pathlib import Path

parser = argparse.ArgumentParser()
parser.add_argument("input_dir")
parser.add_argument("output_dir")
parser.add_argument("--weights")
parser.add_argument("--manifest")
parser.add_argument("--garbage", action="store_true")
parser.add_argument("--only", action="append", default=[])
args = parser.parse_args()

if args.manifest is not None and not Path(args.manifest).is_file():
    raise SystemExit(f"manifest {args.manifest} not found")

output_dir = Path(args.output_dir)
output_dir.mkdir(parents=True, exist_ok=True)
if args.weights is not None:
    (output_dir / "weights.log").write_text(args.weights + "\n")

for image in sorted(Path(args.input_dir).glob("*.png")):
    if args.only and image.stem not in args.only:
        continue

    labels = image.with_suffix(".txt")
    if not labels.exists():
        labels = image.parents[2] / "labels" / image.parent.name / f"{image.stem}.txt"

    lines = labels.read_text().splitlines() if labels.exists() else []
    with open(output_dir / f"{image.stem}.txt", "w") as f:
        for line in lines:
            if line.strip():
                f.write(f"{line.strip()} 1.000000\n")
        if args.garbage:
            f.write("0 0.5 0.5 oops 0.1 0.9\n")
