"""Directional robustness check against a real checkpoint.

Runs the primary attack CLI against a live sidecar and reports the clean vs
adversarial accuracy drop. Intended setup: the sidecar serving a ViT-B/16
CLIP checkpoint and a 30-image dataset with one image per category, e.g.

    MODEL_NAME=openai/clip-vit-base-patch16 PORT=8940 python -m scorer_service &
    python scripts/directional_eval.py --dataset /data/coco30 \
        --endpoint http://127.0.0.1:8940 --out /tmp/directional_run

The dataset directory needs the standard labels.json manifest (see the
primary README). Passes when the accuracy drop is at least --min-drop
percentage points (default 30).
"""

import argparse
import json
import subprocess
import sys
import tempfile
from pathlib import Path


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dataset", required=True, help="directory with PNGs + labels.json")
    parser.add_argument("--endpoint", required=True, help="live sidecar base URL")
    parser.add_argument("--out", required=True, help="run output directory")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--min-drop", type=float, default=30.0,
                        help="required accuracy drop in percentage points")
    args = parser.parse_args()

    check = subprocess.run(
        [sys.executable, "-m", "stormforge.cli", "scorer-check", "--endpoint", args.endpoint],
        capture_output=True, text=True,
    )
    if check.returncode != 0:
        print(f"scorer-check failed:\n{check.stderr}", file=sys.stderr)
        return check.returncode

    config = {
        "dataset": str(Path(args.dataset).resolve()),
        "output": str(Path(args.out).resolve()),
        "scorer": {"type": "remote", "endpoint": args.endpoint},
        "seed": args.seed,
        "workers": args.workers,
    }
    with tempfile.NamedTemporaryFile("w", suffix=".json", delete=False) as fh:
        json.dump(config, fh)
        config_path = fh.name

    run = subprocess.run(
        [sys.executable, "-m", "stormforge.cli", "attack", "--config", config_path],
        text=True,
    )
    if run.returncode != 0:
        return run.returncode

    summary = json.loads((Path(args.out) / "summary.json").read_text())
    clean = summary["clean_accuracy"] * 100.0
    adversarial = summary["adversarial_accuracy"] * 100.0
    drop = clean - adversarial
    verdict = "PASS" if drop >= args.min_drop else "FAIL"
    print(f"clean accuracy:        {clean:6.1f}%")
    print(f"adversarial accuracy:  {adversarial:6.1f}%")
    print(f"drop:                  {drop:6.1f} points (required >= {args.min_drop})")
    print(f"[{verdict}] directional reproduction")
    return 0 if drop >= args.min_drop else 1


if __name__ == "__main__":
    raise SystemExit(main())
