"""Regenerate the bundled 20-image evaluation fixture and its frozen oracle values.

    python3 tests/make_fixture.py

Writes ``src/afpnkit/data/{annotations,detections}.json`` and
``tests/data/fixture_expected.json``.  Expected values come from the
brute-force routines in ``oracles.py`` only.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

import oracles

ROOT = Path(__file__).resolve().parents[1]
CATEGORIES = ["pn", "pl50", "i5", "w57"]
N_IMAGES = 20
WIDTH, HEIGHT = 256, 192


def _round(v):
    return [round(float(x), 2) for x in v]


def build(seed=2024):
    rng = np.random.default_rng(seed)
    images, gts, dets = [], [], []
    scores = iter(rng.permutation(np.arange(1, 1000)) / 1000.0)
    for image_id in range(N_IMAGES):
        images.append({"image_id": image_id, "path": f"{image_id:04d}.png", "width": WIDTH, "height": HEIGHT})
        for _ in range(int(rng.integers(1, 5))):
            side = float(np.exp(rng.uniform(np.log(12), np.log(140))))
            w, h = side * rng.uniform(0.8, 1.25), side * rng.uniform(0.8, 1.25)
            w, h = min(w, WIDTH - 2), min(h, HEIGHT - 2)
            x1, y1 = rng.uniform(0, WIDTH - w), rng.uniform(0, HEIGHT - h)
            cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
            box = _round([x1, y1, x1 + w, y1 + h])
            gts.append({"image_id": image_id, "bbox": box, "category": cat})
            # a detection near most objects, sometimes a duplicate or a wrong class
            if rng.random() < 0.85:
                jitter = rng.normal(0, 0.12, 4) * [w, h, w, h]
                det = np.clip(np.array(box) + jitter, 0, [WIDTH, HEIGHT, WIDTH, HEIGHT])
                if det[2] - det[0] > 1 and det[3] - det[1] > 1:
                    dets.append({"image_id": image_id, "bbox": _round(det), "category": cat,
                                 "score": float(next(scores))})
            if rng.random() < 0.2:
                det = np.array(box) + rng.normal(0, 0.05, 4) * [w, h, w, h]
                dets.append({"image_id": image_id, "bbox": _round(det), "category": cat,
                             "score": float(next(scores))})
            if rng.random() < 0.1:
                other = CATEGORIES[(CATEGORIES.index(cat) + 1) % len(CATEGORIES)]
                dets.append({"image_id": image_id, "bbox": box, "category": other,
                             "score": float(next(scores))})
        for _ in range(int(rng.integers(0, 3))):
            side = float(np.exp(rng.uniform(np.log(10), np.log(80))))
            x1, y1 = rng.uniform(0, WIDTH - side), rng.uniform(0, HEIGHT - side)
            dets.append({"image_id": image_id, "bbox": _round([x1, y1, x1 + side, y1 + side]),
                         "category": CATEGORIES[int(rng.integers(len(CATEGORIES)))],
                         "score": float(next(scores))})
    return {"categories": CATEGORIES, "images": images, "ground_truths": gts}, dets


def expected(ann, dets, thr=0.5, buckets=(32.0 ** 2, 96.0 ** 2)):
    cls = {c: i for i, c in enumerate(ann["categories"])}
    g = [{"image": r["image_id"], "cls": cls[r["category"]], "box": tuple(r["bbox"])} for r in ann["ground_truths"]]
    d = [{"image": r["image_id"], "cls": cls[r["category"]], "box": tuple(r["bbox"]), "score": r["score"]}
         for r in dets]
    n_images = len(ann["images"])
    per_class = {}
    for name, c in cls.items():
        gc = [x for x in g if x["cls"] == c]
        if not gc:
            continue
        dc = [x for x in d if x["cls"] == c]
        per_class[name] = {"ap": oracles.class_ap(d, g, c, thr),
                           "lamr": oracles.sweep_lamr(dc, gc, n_images, thr)}
    t1, t2 = buckets
    return {
        "per_class": per_class,
        "map50": sum(v["ap"] for v in per_class.values()) / len(per_class),
        "ap_s": oracles.bucket_ap(d, g, 0.0, t1, thr),
        "ap_m": oracles.bucket_ap(d, g, t1, t2, thr),
        "ap_l": oracles.bucket_ap(d, g, t2, float("inf"), thr),
    }


def main():
    ann, dets = build()
    data = ROOT / "src" / "afpnkit" / "data"
    data.mkdir(parents=True, exist_ok=True)
    (data / "annotations.json").write_text(json.dumps(ann, indent=1) + "\n")
    (data / "detections.json").write_text(json.dumps(dets, indent=1) + "\n")
    out = ROOT / "tests" / "data"
    out.mkdir(exist_ok=True)
    exp = expected(ann, dets)
    (out / "fixture_expected.json").write_text(json.dumps(exp, indent=1) + "\n")
    print(len(ann["ground_truths"]), "ground truths,", len(dets), "detections")
    print(json.dumps(exp, indent=1))


if __name__ == "__main__":
    main()
