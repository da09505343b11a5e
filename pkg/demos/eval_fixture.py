"""Score the bundled 20-image traffic-sign fixture and show where AP comes from.

Run: python3 demos/eval_fixture.py
"""
from afpnkit.boxes import BBox, Detection, nms
from afpnkit.dataio import AnnotationSet, load_fixture
from afpnkit.metrics import evaluate, match_detections

ann = AnnotationSet.from_json(load_fixture("annotations"))
idx = ann.class_index()
dets = [Detection(BBox.from_corners(*r["bbox"]), idx[r["category"]], r["score"], r["image_id"])
        for r in load_fixture("detections")]
gts = ann.to_ground_truths()
print(f"{len(ann.images)} images, {len(gts)} signs, {len(dets)} detections")

report = evaluate(dets, gts, ann.categories, len(ann.images))
print(f"\nmAP@0.5 {report.map50:.4f}   AP_S {report.ap_s:.4f}  AP_M {report.ap_m:.4f}  AP_L {report.ap_l:.4f}")
for name, vals in report.per_class.items():
    print(f"  {name:6s} AP {vals['ap']:.4f}  LAMR {vals['lamr']:.4f}")

flags = match_detections(dets, gts)
print(f"\n{sum(flags)} true positives, {len(flags) - sum(flags)} false positives")

# suppression merges near-duplicates; weighted mode averages their corners
for mode in ("greedy", "weighted"):
    kept = nms(dets, 0.5, mode)
    print(f"{mode} NMS keeps {len(kept)} -> mAP {evaluate(kept, gts, ann.categories, len(ann.images)).map50:.4f}")
