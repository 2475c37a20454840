"""Shared builders for synthetic datasets, detections, and micro-instances."""

from __future__ import annotations

import os
from pathlib import Path

import numpy as np
import pytest

from unabench import Annotation, BoundingBox, Category, Dataset, Detection, ImageRecord

VAL2017_PATH = Path(
    os.environ.get("UNABENCH_COCO_VAL2017", "/data/coco/annotations/instances_val2017.json")
)

requires_val2017 = pytest.mark.skipif(
    not VAL2017_PATH.exists(),
    reason="set UNABENCH_COCO_VAL2017 to the instances_val2017.json path to run",
)


def build_dataset(
    n_images: int = 5,
    n_categories: int = 3,
    n_annotations: int = 20,
    seed: int = 0,
    img_w: int = 640,
    img_h: int = 480,
    crowd_every: int = 0,
) -> Dataset:
    """Random but well-formed dataset: boxes inside bounds, ids 1-based.

    ``crowd_every`` marks every k-th annotation as crowd (0 disables).
    """
    rng = np.random.default_rng(seed)
    images = tuple(
        ImageRecord(i + 1, img_w, img_h, f"img_{i + 1:06d}.jpg") for i in range(n_images)
    )
    categories = tuple(Category(c + 1, f"class{c + 1}") for c in range(n_categories))
    annotations = []
    for k in range(n_annotations):
        w = float(rng.uniform(8, img_w / 3))
        h = float(rng.uniform(8, img_h / 3))
        x = float(rng.uniform(0, img_w - w))
        y = float(rng.uniform(0, img_h - h))
        annotations.append(Annotation(
            id=k + 1,
            image_id=int(rng.integers(1, n_images + 1)),
            category_id=int(rng.integers(1, n_categories + 1)),
            bbox=BoundingBox(x, y, w, h),
            crowd_flag=bool(crowd_every and (k + 1) % crowd_every == 0),
        ))
    return Dataset(images, tuple(annotations), categories)


def dets_from_gt(ds: Dataset, score: float = 0.9) -> list[Detection]:
    """A perfect detector: one detection per non-crowd annotation."""
    return [Detection(a.image_id, a.category_id, a.bbox, score) for a in ds.non_crowd]


def micro_instance(rng: np.random.Generator) -> tuple[Dataset, list[Detection]]:
    """Random tiny evaluation problem: <=5 images, <=6 gts, <=8 dets, <=3 cats.

    Detections are a mix of jittered ground-truth boxes (sometimes with the
    wrong class) and unrelated boxes, so instances exercise TPs and all six
    error components. Scores are continuous, so ties have probability zero.
    """
    n_img = int(rng.integers(1, 6))
    n_cat = int(rng.integers(1, 4))
    n_gt = int(rng.integers(0, 7))
    n_det = int(rng.integers(0, 9))
    images = tuple(ImageRecord(i + 1, 100, 100, f"im{i + 1}.jpg") for i in range(n_img))
    categories = tuple(Category(c + 1, f"c{c + 1}") for c in range(n_cat))
    annotations = []
    for i in range(n_gt):
        x, y = rng.uniform(0, 60, 2)
        w, h = rng.uniform(10, 40, 2)
        annotations.append(Annotation(
            id=i + 1,
            image_id=int(rng.integers(1, n_img + 1)),
            category_id=int(rng.integers(1, n_cat + 1)),
            bbox=BoundingBox(float(x), float(y), float(w), float(h)),
        ))
    ds = Dataset(images, tuple(annotations), categories)
    dets = []
    for _ in range(n_det):
        if annotations and rng.random() < 0.7:
            a = annotations[int(rng.integers(0, len(annotations)))]
            jit = rng.uniform(-12, 12, 4)
            bbox = BoundingBox(
                max(0.0, a.bbox.x + float(jit[0])),
                max(0.0, a.bbox.y + float(jit[1])),
                max(2.0, a.bbox.w + float(jit[2])),
                max(2.0, a.bbox.h + float(jit[3])),
            )
            image_id = a.image_id
            cat = a.category_id if rng.random() < 0.7 else int(rng.integers(1, n_cat + 1))
        else:
            x, y = rng.uniform(0, 60, 2)
            w, h = rng.uniform(5, 40, 2)
            bbox = BoundingBox(float(x), float(y), float(w), float(h))
            image_id = int(rng.integers(1, n_img + 1))
            cat = int(rng.integers(1, n_cat + 1))
        dets.append(Detection(image_id, cat, bbox, float(rng.random())))
    return ds, dets
