"""Annotation, detection and image files used by the command line tools.

Annotation document (corner-form boxes, class names from ``categories``)::

    {"categories": ["pn", "pl50", ...],
     "images": [{"image_id": 0, "path": "0000.png", "width": 64, "height": 48}, ...],
     "ground_truths": [{"image_id": 0, "bbox": [x_min, y_min, x_max, y_max],
                        "category": "pn"}, ...]}

Detections file: ``[{"image_id", "bbox", "category", "score"}, ...]``.
"""
from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image

from .boxes import BBox, Detection
from .metrics import GroundTruth


class AnnotationError(ValueError):
    pass


def dumps(obj) -> str:
    """Canonical JSON text written by every tool."""
    return json.dumps(obj, indent=1) + "\n"


def atomic_write(path, data) -> None:
    path = Path(path)
    if isinstance(data, str):
        data = data.encode()
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class AnnotationSet:
    categories: list
    images: list  # dicts: image_id, path, width, height
    ground_truths: list  # dicts: image_id, bbox, category

    @classmethod
    def from_json(cls, doc: dict) -> "AnnotationSet":
        try:
            ann = cls(list(doc["categories"]), list(doc["images"]), list(doc["ground_truths"]))
        except (KeyError, TypeError) as exc:
            raise AnnotationError(f"malformed annotation document: missing {exc}") from exc
        ann.validate()
        return ann

    def to_json(self) -> dict:
        return {"categories": self.categories, "images": self.images, "ground_truths": self.ground_truths}

    def validate(self) -> None:
        sizes = {}
        for im in self.images:
            sizes[im["image_id"]] = (im["width"], im["height"])
        names = set(self.categories)
        for g in self.ground_truths:
            if g["category"] not in names:
                raise AnnotationError(f"unknown category {g['category']!r}")
            if g["image_id"] not in sizes:
                raise AnnotationError(f"ground truth refers to unknown image {g['image_id']}")
            x1, y1, x2, y2 = g["bbox"]
            w, h = sizes[g["image_id"]]
            if not (0 <= x1 < x2 <= w and 0 <= y1 < y2 <= h):
                raise AnnotationError(f"box {g['bbox']} invalid for a {w}x{h} image")

    def class_index(self) -> dict:
        return {name: i for i, name in enumerate(self.categories)}

    def to_ground_truths(self) -> list[GroundTruth]:
        idx = self.class_index()
        return [GroundTruth(BBox.from_corners(*g["bbox"]), idx[g["category"]], g["image_id"])
                for g in self.ground_truths]


def load_annotations(path) -> AnnotationSet:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"cannot read annotations {path}: {exc}") from exc
    return AnnotationSet.from_json(doc)


def load_detections(path, categories) -> list[Detection]:
    try:
        records = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise AnnotationError(f"cannot read detections {path}: {exc}") from exc
    idx = {name: i for i, name in enumerate(categories)}
    unknown = sorted({r["category"] for r in records} - set(idx))
    if unknown:
        raise AnnotationError(f"detections use categories absent from annotations: {unknown}")
    return [Detection(BBox.from_corners(*r["bbox"]), idx[r["category"]], float(r["score"]), r["image_id"])
            for r in records]


def detections_to_json(dets, categories) -> list:
    return [{"image_id": d.image_id, "bbox": list(d.box.corners), "category": categories[d.class_id],
             "score": d.score} for d in dets]


def read_image(path) -> np.ndarray:
    """Load an 8-bit RGB image as a ``(1, 3, H, W)`` array in ``[0, 1]``."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    return arr.transpose(2, 0, 1)[None]


def write_image(path, image: np.ndarray) -> None:
    arr = np.clip(np.rint(np.asarray(image)[0].transpose(1, 2, 0) * 255.0), 0, 255).astype(np.uint8)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix="." + path.name + ".", suffix=".png")
    os.close(fd)
    try:
        Image.fromarray(arr, "RGB").save(tmp, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


SCHEMA_NAMES = ("annotations", "bench", "checkpoint", "detections", "eval_report", "grad_check",
                "neck_check", "policy")


def load_schema(name: str) -> dict:
    """The committed JSON schema for one artifact kind (see ``SCHEMA_NAMES``)."""
    if name not in SCHEMA_NAMES:
        raise KeyError(f"no schema named {name!r}")
    return json.loads(resources.files("afpnkit").joinpath("schemas", name + ".json").read_text())


def load_fixture(name: str):
    """A bundled evaluation fixture file, e.g. ``annotations`` or ``detections``."""
    return json.loads(resources.files("afpnkit").joinpath("data", name + ".json").read_text())
