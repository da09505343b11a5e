"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` or ``python3 tests/test_acceptance.py``.
Each line carries the runtime; criteria with a time limit fail when it is exceeded.
"""
import contextlib
import io
import itertools
import json
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

import oracles  # noqa: E402
from afpnkit.augment import AnnotatedBox, Sample, apply_op, apply_policy, choose_subpolicy  # noqa: E402
from afpnkit.boxes import BBox, Detection, ciou_grad, ciou_loss, ciou_terms  # noqa: E402
from afpnkit.checks import grad_check, random_box_pair  # noqa: E402
from afpnkit.cli import main as cli_main  # noqa: E402
from afpnkit.dataio import AnnotationSet, dumps, load_fixture, write_image  # noqa: E402
from afpnkit.metrics import LAMR_FLOOR, GroundTruth, average_precision, evaluate, lamr  # noqa: E402
from afpnkit.neck import (  # noqa: E402
    AAMConfig,
    FEMConfig,
    NeckConfig,
    aam_forward,
    effective_receptive_field,
    fem_branch,
    fem_forward,
    init_weights,
)
from afpnkit.policy import OPS, AugOpSpec, Policy, SubPolicy, dump_policy, identity_policy  # noqa: E402
from afpnkit.search import (  # noqa: E402
    N_STEPS,
    Controller,
    SyntheticReward,
    Trajectory,
    controller_sample,
    ppo_update,
    search,
    search_space_size,
    trace_log_prob,
)
from afpnkit.tensor import ConvSpec, conv2d, mean_over  # noqa: E402
from afpnkit.weights import WeightStore  # noqa: E402

EXPECTED = json.loads((Path(__file__).parent / "data" / "fixture_expected.json").read_text())
RESULTS = {}


def record(number, title, body, limit=None):
    start = time.perf_counter()
    try:
        detail = body() or ""
        ok = True
    except AssertionError as exc:
        detail, ok = f"assertion failed: {exc}", False
    elapsed = time.perf_counter() - start
    if ok and limit is not None and elapsed >= limit:
        ok, detail = False, f"runtime {elapsed:.1f}s exceeds {limit}s; {detail}"
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'} [{elapsed:6.1f}s] {title}: {detail}"
    RESULTS[number] = line
    print(line, flush=True)
    return ok


# -- 1 ----------------------------------------------------------------------

def loss_correctness():
    same = ciou_terms(BBox(3, 4, 5, 2), BBox(3, 4, 5, 2)).loss
    disjoint = ciou_terms(BBox(0.5, 0.5, 1, 1), BBox(1.5, 0.5, 1, 1))
    concentric = ciou_terms(BBox(0, 0, 2, 1), BBox(0, 0, 1, 1))
    assert abs(same) <= 1e-3 and abs(disjoint.loss - 1.2) <= 1e-3 and abs(concentric.loss - 0.5032) <= 1e-3
    assert oracles.raster_iou((0, 0, 1, 1), (1, 0, 2, 1)) == disjoint.iou == 0.0
    assert abs(oracles.raster_iou((-1, -0.5, 1, 0.5), (-0.5, -0.5, 0.5, 0.5)) - concentric.iou) <= 1e-3
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        pred, gt = random_box_pair(rng)
        assert ciou_loss(gt, gt) == 0.0 and ciou_loss(pred, pred) == 0.0
        s = float(rng.uniform(0.1, 10))
        a, b = ciou_loss(pred, gt), ciou_loss(pred.scaled(s), gt.scaled(s))
        worst = max(worst, abs(a - b) / abs(a))
    assert worst <= 1e-9, worst
    return f"losses {same:.4f}/{disjoint.loss:.4f}/{concentric.loss:.4f}, scale rel err {worst:.1e}"


# -- 2 ----------------------------------------------------------------------

def gradient_fidelity():
    report = grad_check(1000, 0)
    assert report["passed"], report["max_rel_error"]

    def mutated(pred, gt):
        g = ciou_grad(pred, gt)
        g[2] += 0.01
        return g

    mutant = grad_check(1000, 0, mutated)
    assert not mutant["passed"], "perturbed gradient was not detected"
    return f"max rel err {report['max_rel_error']:.1e}, mutant max rel err {mutant['max_rel_error']:.1e} (rejected)"


# -- 3 ----------------------------------------------------------------------

def dilated_conv_oracle():
    rng = np.random.default_rng(3)
    worst = 0.0
    for case in range(50):
        d = (2, 3, 5)[case % 3]
        c_in, c_out = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        x = rng.normal(size=(1, c_in, int(rng.integers(12, 20)), int(rng.integers(12, 20))))
        kernel, bias = rng.normal(size=(c_out, c_in, 3, 3)), rng.normal(size=c_out)
        pad = int(rng.integers(0, d + 1))
        got = conv2d(x, ConvSpec(kernel, bias, padding=pad, dilation=d))
        want = conv2d(x, ConvSpec(oracles.zero_inserted(kernel, d), bias, padding=pad))
        assert got.shape == want.shape
        worst = max(worst, float(np.max(np.abs(got - want))))
    assert worst <= 1e-6, worst
    assert effective_receptive_field(3, 3) == 7
    return f"50 cases, max abs diff {worst:.1e}, receptive field (3,3) = 7"


# -- 4 ----------------------------------------------------------------------

def aam_structure():
    rng = np.random.default_rng(4)
    cfg = NeckConfig(in_channels=(6, 8, 10, 12), width=8, aam=AAMConfig(mid_channels=8))
    weights = init_weights(cfg, "random", 1)
    zeroed = weights
    for name in weights:
        if name.startswith("aam.attn."):
            zeroed = zeroed.with_tensor(name, np.zeros_like(weights[name]))
    c5, m5 = rng.normal(size=(1, 12, 20, 20)), rng.normal(size=(1, 8, 20, 20))
    m6 = aam_forward(c5, m5, cfg.aam, zeroed)
    feats = oracles.independent_contexts(c5, cfg.aam.betas, zeroed)
    err = float(np.max(np.abs((m6 - m5) - 0.5 * sum(feats))))
    assert err <= 1e-6, err
    lo, hi = 1.0, 0.0
    for seed in range(5):
        _, trace = aam_forward(rng.normal(size=(1, 12, 13, 11)), rng.normal(size=(1, 8, 13, 11)), cfg.aam,
                               init_weights(cfg, "random", 10 + seed), return_trace=True)
        lo, hi = min(lo, trace.attention.min()), max(hi, trace.attention.max())
    assert 0 < lo and hi < 1
    return f"zero-head residual {err:.1e}, random attention range ({lo:.3f}, {hi:.3f})"


# -- 5 ----------------------------------------------------------------------

def fem_bn(rng, width):
    return (rng.uniform(0.5, 1.5, width), rng.normal(size=width), rng.normal(size=width) * 0.1,
            rng.uniform(0.5, 1.5, width), rng.normal(size=width) * 0.1)


def fem_store(kernels, bns, prefix="fem"):
    tensors = {}
    for i, (k, bn) in enumerate(zip(kernels, bns)):
        tensors[f"{prefix}.branch{i}.conv.kernel"] = k
        tensors[f"{prefix}.branch{i}.conv.bias"] = bn[4]
        for name, value in zip(("gamma", "beta", "mean", "var"), bn[:4]):
            tensors[f"{prefix}.branch{i}.bn.{name}"] = value
    return WeightStore(tensors)


def fem_checks():
    rng = np.random.default_rng(5)
    # identical branches: only the center tap is non-zero, so dilation is irrelevant
    k = np.zeros((4, 4, 3, 3))
    k[:, :, 1, 1] = rng.normal(size=(4, 4))
    bn = fem_bn(rng, 4)
    store = fem_store([k] * 3, [bn] * 3)
    x = rng.normal(size=(1, 4, 16, 16))
    single = fem_branch(x, 1, store, "fem.branch0")
    sym = float(np.max(np.abs(fem_forward(x, FEMConfig(), store) - single)))
    assert sym <= 1e-7 and float(np.max(np.abs(mean_over([single] * 3) - single))) <= 1e-7
    kernels = [rng.normal(size=(4, 4, 3, 3)) * 0.3 for _ in range(3)]
    bns = [fem_bn(rng, 4) for _ in range(3)]
    ref = fem_forward(x, FEMConfig(), fem_store(kernels, bns))
    perm_err = 0.0
    for perm in itertools.permutations(range(3)):
        cfg = FEMConfig(dilations=tuple((1, 3, 5)[p] for p in perm))
        out = fem_forward(x, cfg, fem_store([kernels[p] for p in perm], [bns[p] for p in perm]))
        perm_err = max(perm_err, float(np.max(np.abs(out - ref))))
    assert perm_err <= 1e-12, perm_err
    for i, d in enumerate((1, 3, 5)):
        y = rng.normal(size=(1, 4, 17, 9))
        assert fem_branch(y, d, fem_store(kernels, bns), f"fem.branch{i}").shape == y.shape
    return f"symmetry err {sym:.1e}, permutation err {perm_err:.1e}, shapes kept at d=1/3/5"


# -- 6 ----------------------------------------------------------------------

def search_space():
    size = search_space_size(19, 11, 10, 5)
    assert size == 2090 ** 10 and isinstance(size, int)
    c = Controller.init(0)
    for seed in range(20):
        _, _, trace = controller_sample(c, np.random.default_rng(seed))
        assert len(trace) == N_STEPS == 30
    return f"size {size}, 30 decisions per sample"


# -- 7 ----------------------------------------------------------------------

def ppo_sanity():
    c = Controller.init(7)
    rng = np.random.default_rng(7)
    batch = []
    for _ in range(4):
        _, logp, trace = controller_sample(c, rng)
        batch.append(Trajectory(trace, logp, 0.5))
    fixed = ppo_update(c, batch, 0.5).controller
    assert all(np.array_equal(fixed.params[k], c.params[k]) for k in c.params)
    _, logp, trace = controller_sample(c, rng)
    moved = ppo_update(c, [Trajectory(trace, logp, 1.0)], 0.0).controller
    assert trace_log_prob(moved, trace) > logp

    reward = SyntheticReward("TranslateX")
    wins, finals = 0, []
    for seed in range(10):
        ppo = search(reward, 300, "ppo", seed=seed, lr=0.00035, batch_size=8)
        rand = search(reward, 300 * 8, "random", seed=seed)  # same number of policy evaluations
        wins += ppo.best_reward > rand.best_reward
        finals.append(float(np.mean([r for _, r in ppo.history[-8:]])))
    assert wins >= 8, f"ppo won {wins}/10"
    assert min(finals) >= 0.95, f"final batch means {finals}"
    return f"ppo beat random in {wins}/10 seeds, final batch mean reward >= {min(finals):.3f}"


# -- 8 ----------------------------------------------------------------------

def augmentation_identity():
    rng = np.random.default_rng(8)

    def sample(r):
        return Sample(r.random((1, 3, 32, 32)), (AnnotatedBox(BBox.from_corners(4, 5, 20, 24), 0),))

    s = sample(rng)
    pool = [sample(rng) for _ in range(4)]
    for kind in OPS:
        for mag in range(11):
            out = apply_op(s, AugOpSpec(kind, 0, mag), np.random.default_rng(mag), pool)
            assert out.image.tobytes() == s.image.tobytes() and out.boxes == s.boxes, kind
    p = Policy(tuple(SubPolicy((AugOpSpec(OPS[(3 * i) % 15], 7, 6), AugOpSpec(OPS[(3 * i + 1) % 15], 8, 4)))
                     for i in range(5)))
    for seed in range(10):
        a = apply_policy(s, p, np.random.default_rng(seed), pool)
        b = apply_policy(s, p, np.random.default_rng(seed), pool)
        assert a.image.tobytes() == b.image.tobytes() and a.boxes == b.boxes
    counts = np.bincount([choose_subpolicy(identity_policy(), rng) for _ in range(10_000)], minlength=5)
    freqs = counts / 10_000
    assert np.all(np.abs(freqs - 0.2) <= 0.02), freqs
    return f"identity for 15 ops, deterministic, sub-policy freqs {np.round(freqs, 3).tolist()}"


# -- 9 ----------------------------------------------------------------------

def metrics_oracle():
    ap = average_precision([True, False, True], 2)
    assert abs(ap - 5 / 6) <= 1e-9
    ann = AnnotationSet.from_json(load_fixture("annotations"))
    idx = ann.class_index()
    dets = [Detection(BBox.from_corners(*r["bbox"]), idx[r["category"]], r["score"], r["image_id"])
            for r in load_fixture("detections")]
    report = evaluate(dets, ann.to_ground_truths(), ann.categories, len(ann.images)).to_json()
    worst = max(abs(report[k] - EXPECTED[k]) for k in ("map50", "ap_s", "ap_m", "ap_l"))
    for name, vals in EXPECTED["per_class"].items():
        worst = max(worst, abs(report["per_class"][name]["ap"] - vals["ap"]),
                    abs(report["per_class"][name]["lamr"] - vals["lamr"]))
    assert worst <= 1e-9, worst
    gts = [GroundTruth(BBox(20, 20, 10, 10), 0, i) for i in range(4)] + [GroundTruth(BBox(60, 60, 12, 12), 0, 1)]
    assert lamr([Detection(g.box, 0, 0.9, g.image_id) for g in gts], gts) == LAMR_FLOOR
    assert lamr([], gts, n_images=4) == 1.0
    crafted = [
        Detection(BBox(20, 20, 10, 10), 0, 0.95, 0), Detection(BBox(70, 20, 10, 10), 0, 0.90, 0),
        Detection(BBox(21, 20, 10, 10), 0, 0.85, 1), Detection(BBox(40, 40, 10, 10), 0, 0.80, 2),
        Detection(BBox(20, 21, 10, 10), 0, 0.75, 2), Detection(BBox(80, 80, 10, 10), 0, 0.60, 3),
        Detection(BBox(60, 60, 12, 12), 0, 0.40, 1), Detection(BBox(5, 90, 8, 8), 0, 0.30, 3),
    ]
    d = [{"image": x.image_id, "cls": 0, "box": x.box.corners, "score": x.score} for x in crafted]
    g = [{"image": x.image_id, "cls": 0, "box": x.box.corners} for x in gts]
    got, want = lamr(crafted, gts, n_images=4), oracles.sweep_lamr(d, g, 4)
    assert math.isclose(got, want, rel_tol=0, abs_tol=1e-12), (got, want)
    return f"AP 5/6 ok, fixture max diff {worst:.1e}, crafted LAMR {got:.6f} = sweep oracle"


# -- 10 ---------------------------------------------------------------------

def run_cli(*argv):
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        code = cli_main([str(a) for a in argv])
    return code, out.getvalue()


def snapshot(directory: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(directory.iterdir()) if p.is_file()}


def cli_round(root: Path, tag: str) -> dict:
    """Run every command once with seed 11 and collect all produced bytes."""
    work = root / tag
    work.mkdir()
    shared = root / "inputs"
    artifacts = {}
    code, _ = run_cli("init-weights", "--seed", 11, "--out", work / "w.json")
    assert code == 0
    code, out = run_cli("neck-check", "--weights", work / "w.json", "--seed", 11, "--out", work / "neck.json")
    assert code == 0, "neck-check failed"
    shapes = json.loads(out)["output_shapes"]
    assert [s[2] for s in shapes] == [152, 76, 38, 19], shapes
    artifacts["neck-check"] = out
    code, artifacts["grad-check"] = run_cli("grad-check", "--trials", 50, "--seed", 11, "--out", work / "grad.json")
    assert code == 0
    code, _ = run_cli("aug", "--annotations", shared / "ann.json", "--images", shared / "images",
                      "--policy", shared / "policy.json", "--seed", 11, "--out", work / "aug")
    assert code == 0
    for name, data in snapshot(work / "aug").items():
        artifacts[f"aug/{name}"] = data
    code, artifacts["search"] = run_cli("search", "--budget", 3, "--seed", 11, "--out", work / "ck.json")
    assert code == 0
    code, artifacts["eval"] = run_cli("eval", "--annotations", shared / "fixture_ann.json",
                                      "--detections", shared / "fixture_det.json", "--seed", 11,
                                      "--out", work / "eval.json")
    assert code == 0
    for comp in ("neck", "aam", "fem", "nms", "policy"):
        code, out = run_cli("bench", comp, "--iters", 1, "--seed", 11, "--input-size", 128)
        assert code == 0
        doc = json.loads(out)
        for key in ("elapsed_seconds", "fps", "p50_seconds"):  # wall-clock fields
            doc.pop(key)
        artifacts[f"bench/{comp}"] = json.dumps(doc, sort_keys=True)
    for name, data in snapshot(work).items():
        artifacts[name] = data
    return artifacts


def cli_end_to_end():
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)
        shared = root / "inputs"
        (shared / "images").mkdir(parents=True)
        rng = np.random.default_rng(10)
        images, gts = [], []
        for i in range(3):
            write_image(shared / "images" / f"im{i}.png", rng.random((1, 3, 48, 64)))
            images.append({"image_id": i, "path": f"im{i}.png", "width": 64, "height": 48})
            gts.append({"image_id": i, "bbox": [8.0, 6.0, 30.0, 28.0], "category": "pn"})
        (shared / "ann.json").write_text(dumps({"categories": ["pn"], "images": images, "ground_truths": gts}))
        policy = Policy(tuple(SubPolicy((AugOpSpec(OPS[i], 6, 7), AugOpSpec(OPS[i + 5], 6, 4))) for i in range(5)))
        (shared / "policy.json").write_text(dump_policy(policy))
        (shared / "fixture_ann.json").write_text(json.dumps(load_fixture("annotations")))
        (shared / "fixture_det.json").write_text(json.dumps(load_fixture("detections")))
        first, second = cli_round(root, "a"), cli_round(root, "b")
    assert first.keys() == second.keys()
    differing = [k for k in first if first[k] != second[k]]
    assert not differing, f"artifacts differ under a repeated seed: {differing}"
    return f"608 ladder 152/76/38/19, {len(first)} artifacts byte-identical across reruns"


CRITERIA = [
    (1, "loss correctness", loss_correctness, 10),
    (2, "gradient fidelity", gradient_fidelity, 30),
    (3, "dilated-conv oracle", dilated_conv_oracle, None),
    (4, "AAM structure", aam_structure, None),
    (5, "FEM checks", fem_checks, None),
    (6, "search-space accounting", search_space, None),
    (7, "PPO sanity", ppo_sanity, 300),
    (8, "augmentation identity and determinism", augmentation_identity, None),
    (9, "metrics oracle", metrics_oracle, None),
    (10, "end-to-end CLI", cli_end_to_end, None),
]


@pytest.mark.parametrize("number,title,body,limit", CRITERIA, ids=[f"criterion_{c[0]}" for c in CRITERIA])
def test_criterion(number, title, body, limit):
    assert record(number, title, body, limit), RESULTS[number]


if __name__ == "__main__":
    outcomes = [record(*c) for c in CRITERIA]
    print(f"{sum(outcomes)}/{len(outcomes)} criteria passed")
    sys.exit(0 if all(outcomes) else 1)
