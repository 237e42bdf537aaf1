"""Deterministic synthetic dataset for offline attack runs.

Each image is planted to be classified as its own label by the seeded toy
scorer: the label's embedding direction is back-projected through the
scorer's projection matrix into pixel space, scaled, and re-centered around
mid-gray. The construction is brute-force verified at build time, so a
shipped dataset is guaranteed to start from 100% clean accuracy.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import save_png
from .scorer import DEFAULT_PROMPT_TEMPLATE, LabelSet, ToyScorer, predict

FIXTURE_LABELS = (
    "airplane", "bicycle", "bird", "boat", "car", "cat", "dog", "train",
)


@dataclass
class SyntheticDataset:
    labels: LabelSet
    images: list[np.ndarray]
    true_indices: list[int]
    image_ids: list[str]
    scorer_seed: int

    def __len__(self) -> int:
        return len(self.images)


def build_synthetic_dataset(n_images: int = 8, size: int = 64, seed: int = 7,
                            scorer_seed: int = 1, target_margin: float = 0.13,
                            ) -> SyntheticDataset:
    """Construct planted images, one per label, verified against the scorer.

    Each image leans toward its label direction just strongly enough that
    its clean decision margin lands near ``target_margin``: clearly
    classified, yet close enough to the boundary that physically plausible
    rain and illumination can flip it. The per-image lean is found by
    bisection against the scorer itself.
    """
    if not 1 <= n_images <= len(FIXTURE_LABELS):
        raise ValueError(f"n_images must lie in [1, {len(FIXTURE_LABELS)}]")
    if size % ToyScorer.patch != 0:
        raise ValueError(f"size must be a multiple of {ToyScorer.patch}")
    if target_margin <= 0.0:
        raise ValueError("target_margin must be positive")

    labels = LabelSet.from_labels(FIXTURE_LABELS[:n_images])
    probe = ToyScorer(labels, seed=scorer_seed)
    rng = np.random.default_rng(seed)
    factor = size // ToyScorer.patch

    images, true_indices, image_ids = [], [], []
    projection = probe.projection_matrix
    for idx, name in enumerate(labels.labels):
        direction = probe.label_vector(idx) @ projection
        direction = direction / np.abs(direction).max()
        base = 0.5 + 0.08 * rng.standard_normal(direction.size)

        def plant(strength: float) -> np.ndarray:
            small = np.clip(base + strength * direction, 0.05, 0.95)
            small = small.reshape(ToyScorer.patch, ToyScorer.patch, 3)
            img = np.repeat(np.repeat(small, factor, axis=0), factor, axis=1)
            # Pre-quantized to the 8-bit grid so the PNG round trip is exact
            # and on-disk runs score identically to in-memory ones.
            return np.round(img * 255.0) / 255.0

        def margin_at(strength: float) -> float:
            scores = probe.score(plant(strength))
            others = np.delete(scores, idx)
            return float(scores[idx] - others.max())

        lo, hi = 0.0, 0.5
        if margin_at(hi) < target_margin:
            raise AssertionError(f"cannot plant label {name!r} at margin {target_margin}")
        for _ in range(24):
            mid = 0.5 * (lo + hi)
            if margin_at(mid) < target_margin:
                lo = mid
            else:
                hi = mid
        images.append(plant(hi))
        true_indices.append(idx)
        image_ids.append(f"{idx:03d}_{name}")

    dataset = SyntheticDataset(
        labels=labels, images=images, true_indices=true_indices,
        image_ids=image_ids, scorer_seed=scorer_seed,
    )
    verify_planted(dataset)
    return dataset


def verify_planted(dataset: SyntheticDataset) -> None:
    """Brute-force check that every image's clean argmax is its own label."""
    probe = ToyScorer(dataset.labels, seed=dataset.scorer_seed)
    for img, expected, image_id in zip(
        dataset.images, dataset.true_indices, dataset.image_ids
    ):
        got = predict(probe.score(img))
        if got != expected:
            raise AssertionError(
                f"fixture {image_id}: clean prediction {got} != planted {expected}"
            )


def write_dataset(dataset: SyntheticDataset, out_dir) -> Path:
    """Materialize PNGs plus a labels.json manifest; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest_images = {}
    for img, idx, image_id in zip(
        dataset.images, dataset.true_indices, dataset.image_ids
    ):
        filename = f"{image_id}.png"
        save_png(img, out / filename)
        manifest_images[filename] = idx
    manifest = {
        "labels": list(dataset.labels.labels),
        "prompt_template": DEFAULT_PROMPT_TEMPLATE,
        "images": manifest_images,
    }
    path = out / "labels.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def main(argv=None) -> int:
    import argparse

    parser = argparse.ArgumentParser(
        description="write the bundled synthetic dataset to a directory"
    )
    parser.add_argument("out_dir")
    parser.add_argument("--images", type=int, default=8)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--scorer-seed", type=int, default=1)
    args = parser.parse_args(argv)
    dataset = build_synthetic_dataset(
        n_images=args.images, size=args.size, seed=args.seed,
        scorer_seed=args.scorer_seed,
    )
    manifest = write_dataset(dataset, args.out_dir)
    print(f"wrote {len(dataset)} images and {manifest}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
