"""Apply each augmentation at full strength to a synthetic sign image and save a contact sheet.

Run: python3 demos/augment_gallery.py [out.png]
"""
import sys

import numpy as np

from afpnkit.augment import AnnotatedBox, Sample, apply_op
from afpnkit.boxes import BBox
from afpnkit.dataio import write_image
from afpnkit.policy import OPS, AugOpSpec

out_path = sys.argv[1] if len(sys.argv) > 1 else "augment_gallery.png"
rng = np.random.default_rng(0)
H = W = 64


def sign(rng, color, cls=0):
    img = np.full((1, 3, H, W), 0.35) + rng.normal(0, 0.02, (1, 3, H, W))
    yy, xx = np.mgrid[:H, :W]
    cy, cx, r = rng.uniform(20, 44), rng.uniform(20, 44), rng.uniform(7, 12)
    disk = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    for ch, v in enumerate(color):
        img[0, ch][disk] = v
    return Sample(np.clip(img, 0, 1), (AnnotatedBox(BBox(cx, cy, 2 * r, 2 * r), cls),))


base = sign(rng, (0.9, 0.1, 0.1))
pool = [sign(rng, c, i + 1) for i, c in enumerate([(0.1, 0.2, 0.9), (0.9, 0.8, 0.1), (0.1, 0.7, 0.2)])]


def draw_boxes(img, boxes):
    img = img.copy()
    for ab in boxes:
        x1, y1, x2, y2 = (int(round(v)) for v in ab.box.corners)
        x1, y1, x2, y2 = max(x1, 0), max(y1, 0), min(x2, img.shape[3] - 1), min(y2, img.shape[2] - 1)
        img[0, :, y1:y2 + 1, [x1, x2]] = [[0.0], [1.0], [0.0]]
        img[0, :, [y1, y2], x1:x2 + 1] = [[0.0], [1.0], [0.0]]
    return img


tiles = []
for kind in OPS:
    out = apply_op(base, AugOpSpec(kind, 9, 10), np.random.default_rng(1), pool)
    tile = draw_boxes(out.image, out.boxes)
    if tile.shape[2:] != (H, W):  # mosaic builds a larger canvas; subsample it
        tile = tile[:, :, ::tile.shape[2] // H, ::tile.shape[3] // W][:, :, :H, :W]
    tiles.append(tile)
    print(f"{kind:12s} boxes={len(out.boxes)} labels={ {k: round(v, 2) for k, v in out.effective_label_weights().items()} }")

tiles.append(draw_boxes(base.image, base.boxes))
rows = [np.concatenate(tiles[i:i + 4], axis=3) for i in range(0, 16, 4)]
write_image(out_path, np.concatenate(rows, axis=2))
print("wrote", out_path)
