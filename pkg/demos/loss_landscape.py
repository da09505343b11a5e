"""Walk a predicted box toward a fixed target and watch IoU, GIoU and CIoU.

Run: python3 demos/loss_landscape.py
"""
import numpy as np

from afpnkit.boxes import BBox, ciou_grad, ciou_terms, giou_loss, iou

target = BBox(50, 50, 20, 10)

print(f"{'dx':>6} {'1-IoU':>8} {'GIoU':>8} {'CIoU':>8} {'dL/dx':>9}")
for dx in np.linspace(-40, 0, 9):
    pred = BBox(50 + dx, 50, 10, 10)
    t = ciou_terms(pred, target)
    print(f"{dx:6.1f} {1 - iou(pred, target):8.4f} {giou_loss(pred, target):8.4f} {t.loss:8.4f} "
          f"{ciou_grad(pred, target)[0]:9.5f}")

# once the boxes stop overlapping 1-IoU is flat at 1 and gives no direction;
# the center-distance term in CIoU still pulls the box in
far = BBox(0, 50, 10, 10)
print("\nno overlap: 1-IoU =", 1 - iou(far, target), " dCIoU/dx =", round(float(ciou_grad(far, target)[0]), 5))

# same centers, different shapes: only the aspect term separates them
for w, h in [(20, 10), (10, 5), (10, 20)]:
    t = ciou_terms(BBox(50, 50, w, h), target)
    print(f"{w}x{h}: iou={t.iou:.3f} v={t.v:.4f} alpha={t.alpha:.4f} loss={t.loss:.4f}")
