"""Dataset-level attack execution: worker pool, result files, summary.

Each image is an independent job with its own scorer instance and a seed
derived from (global seed, image id), so results are identical whatever the
worker count or completion order. Results are written sorted by image id;
rerunning the same config produces byte-identical JSONL.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attack import AttackResult, adversarial_image, run_attack
from .config import RunConfig, snapshot
from .image import load_png, save_png
from .scorer import LabelSet, RemoteScorer, ToyScorer


class DatasetError(Exception):
    """The dataset directory or label manifest is unusable."""


@dataclass
class DatasetItem:
    image_id: str
    path: Path
    true_index: int


def load_manifest(labels_file: Path, dataset_dir: Path) -> tuple[LabelSet, list[DatasetItem]]:
    try:
        raw = json.loads(Path(labels_file).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read label manifest {labels_file}: {exc}") from exc
    labels = raw.get("labels")
    if not isinstance(labels, list) or not labels:
        raise DatasetError(f"{labels_file}: 'labels' must be a nonempty list")
    template = raw.get("prompt_template", "a photo of a {}")
    label_set = LabelSet.from_labels([str(lbl) for lbl in labels], template)

    images = raw.get("images")
    if not isinstance(images, dict) or not images:
        raise DatasetError(f"{labels_file}: 'images' must be a nonempty object")
    items = []
    for filename, label in sorted(images.items()):
        path = Path(dataset_dir) / filename
        if not path.is_file():
            raise DatasetError(f"{labels_file}: image file {path} does not exist")
        if isinstance(label, str):
            if label not in label_set.labels:
                raise DatasetError(f"{labels_file}: unknown label {label!r} for {filename}")
            index = label_set.labels.index(label)
        else:
            index = int(label)
            if not 0 <= index < len(label_set):
                raise DatasetError(f"{labels_file}: label index {index} out of range for {filename}")
        items.append(DatasetItem(image_id=Path(filename).stem, path=path, true_index=index))
    return label_set, items


def make_scorer(config: RunConfig, labels: LabelSet):
    if config.scorer.kind == "toy":
        return ToyScorer(labels, seed=config.scorer.seed)
    return RemoteScorer(
        config.scorer.endpoint, labels, prompt_template=config.scorer.prompt_template
    )


def run_dataset(config: RunConfig) -> dict:
    """Attack every image in the dataset; returns the run summary."""
    labels, items = load_manifest(config.labels_file, config.dataset)
    out_dir = Path(config.output)
    adv_dir = out_dir / "adv"
    out_dir.mkdir(parents=True, exist_ok=True)
    adv_dir.mkdir(parents=True, exist_ok=True)

    (out_dir / "config_snapshot.json").write_text(
        json.dumps(snapshot(config), indent=2, sort_keys=True) + "\n"
    )

    def job(item: DatasetItem) -> AttackResult:
        try:
            img = load_png(item.path)
            scorer = make_scorer(config, labels)
            result = run_attack(
                img, item.true_index, scorer, labels,
                stage1=config.stage1, stage2=config.stage2,
                image_id=item.image_id, seed=config.job_seed(item.image_id),
            )
            adv = adversarial_image(img, result, config.stage1, config.stage2)
            save_png(adv, adv_dir / f"{item.image_id}.png")
            return result
        except Exception as exc:  # per-image failures are recorded, never fatal
            return AttackResult(
                image_id=item.image_id, true_index=item.true_index,
                clean_prediction=-1, clean_margin=float("nan"),
                clean_correct=False, stage1={}, stage2={},
                final_prediction=-1, success=False, query_count=0,
                seed=config.job_seed(item.image_id), history=[],
                failed=True, failure=f"{type(exc).__name__}: {exc}",
            )

    if config.workers == 1:
        results = [job(item) for item in items]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(job, items))

    results.sort(key=lambda r: r.image_id)
    with open(out_dir / "results.jsonl", "w") as fh:
        for result in results:
            fh.write(result.to_json() + "\n")

    summary = summarize([r.to_dict() for r in results])
    summary["wall_time_s"] = float(sum(r.wall_time_s for r in results))
    (out_dir / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n"
    )
    return summary


def summarize(records: list[dict]) -> dict:
    """Aggregate statistics recomputable from the raw JSONL records."""
    total = len(records)
    if total == 0:
        return {
            "images": 0, "clean_accuracy": 0.0, "adversarial_accuracy": 0.0,
            "success_rate": 0.0, "success_rate_clean_correct": 0.0,
            "mean_queries": 0.0, "failures": 0,
        }
    clean_correct = sum(bool(r.get("clean_correct")) for r in records)
    adv_correct = sum(r.get("final_prediction") == r.get("true_index") for r in records)
    successes = sum(bool(r.get("success")) for r in records)
    succ_cc = sum(
        bool(r.get("success")) for r in records if r.get("clean_correct")
    )
    failures = sum(bool(r.get("failed")) for r in records)
    queries = [int(r.get("query_count", 0)) for r in records]
    return {
        "images": total,
        "clean_accuracy": clean_correct / total,
        "adversarial_accuracy": adv_correct / total,
        "success_rate": successes / total,
        "success_rate_clean_correct": (succ_cc / clean_correct) if clean_correct else 0.0,
        "mean_queries": float(np.mean(queries)),
        "failures": failures,
    }
