"""Command line front end.

Exit codes: 0 success, 1 invariant or tolerance failure, 2 input or
configuration error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checks
from .augment import AnnotatedBox, AugmentError, Sample, apply_policy
from .boxes import BBox, Detection, ciou_grad, nms
from .dataio import (
    AnnotationError,
    atomic_write,
    dumps,
    load_annotations,
    load_detections,
    read_image,
    write_image,
)
from .metrics import DEFAULT_BUCKETS, evaluate, fps_benchmark
from .neck import NeckConfig, aam_forward, affpn_forward, fem_forward, init_weights, pyramid_shapes
from .policy import PolicyFormatError, Policy, dump_policy, load_policy
from .proxy import ProxyClassificationReward
from .search import (
    SearchError,
    SyntheticReward,
    controller_greedy,
    load_checkpoint,
    new_state,
    random_policy,
    resume,
    save_checkpoint,
)
from .tensor import ShapeError
from .weights import MissingWeightError, WeightFormatError, load_weights

EXIT_OK, EXIT_FAIL, EXIT_INPUT = 0, 1, 2


class InputError(Exception):
    pass


@dataclass
class RunConfig:
    seed: int = 0
    neck: dict = field(default_factory=dict)
    policy: str | None = None
    iou_threshold: float = 0.5
    buckets: tuple = DEFAULT_BUCKETS
    input_size: int = 608

    @classmethod
    def load(cls, path) -> "RunConfig":
        if path is None:
            return cls()
        try:
            doc = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config {path}: {exc}") from exc
        unknown = set(doc) - set(cls.__dataclass_fields__)
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**doc)
        cfg.buckets = tuple(float(b) for b in cfg.buckets)
        if not isinstance(cfg.seed, int) or not -(2 ** 63) <= cfg.seed < 2 ** 64:
            raise InputError("seed must be a 64-bit integer")
        if cfg.input_size < 1:
            raise InputError("input_size must be positive")
        return cfg

    def neck_config(self) -> NeckConfig:
        try:
            return NeckConfig.from_dict(self.neck)
        except (TypeError, ValueError) as exc:
            raise InputError(f"invalid neck config: {exc}") from exc

    def echo(self) -> dict:
        return {"seed": self.seed, "neck": self.neck_config().to_dict(), "policy": self.policy,
                "iou_threshold": self.iou_threshold, "buckets": list(self.buckets),
                "input_size": self.input_size}


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("AFPNKIT_THREADS", "1")))
    except ValueError:
        return 1


def _emit(report: dict, out) -> None:
    text = dumps(report)
    if out:
        atomic_write(out, text)
    sys.stdout.write(text)


def _seed(args, cfg: RunConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


# -- commands ---------------------------------------------------------------

def cmd_init_weights(args) -> int:
    cfg = RunConfig.load(args.config)
    if not args.out:
        raise InputError("--out is required")
    store = init_weights(cfg.neck_config(), args.scheme, _seed(args, cfg))
    store.save(args.out)
    return EXIT_OK


def cmd_neck_check(args) -> int:
    cfg = RunConfig.load(args.config)
    if not args.weights:
        raise InputError("--weights is required")
    try:
        weights = load_weights(args.weights)
        report = checks.neck_check(cfg.neck_config(), weights, _seed(args, cfg), args.input_size or cfg.input_size)
    except MissingWeightError as exc:
        raise InputError(f"weight file {args.weights} lacks tensor {exc.name!r}") from exc
    except (WeightFormatError, ShapeError, ValueError) as exc:
        raise InputError(str(exc)) from exc
    _emit(report, args.out)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def _perturbed_grad(delta: float):
    def grad(pred, gt):
        g = ciou_grad(pred, gt)
        g[2] += delta
        return g
    return grad


def cmd_grad_check(args) -> int:
    cfg = RunConfig.load(args.config)
    fn = ciou_grad if not args.perturb else _perturbed_grad(args.perturb)
    report = checks.grad_check(args.trials, _seed(args, cfg), fn)
    _emit(report, args.out)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_aug(args) -> int:
    cfg = RunConfig.load(args.config)
    if not (args.annotations and args.images and args.out):
        raise InputError("--annotations, --images and --out are required")
    policy_path = args.policy or cfg.policy
    if not policy_path:
        raise InputError("--policy is required")
    try:
        ann = load_annotations(args.annotations)
        policy = load_policy(policy_path)
    except (AnnotationError, PolicyFormatError) as exc:
        raise InputError(str(exc)) from exc
    seed = _seed(args, cfg)
    image_dir, out_dir = Path(args.images), Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    samples, offenders = [], []
    cls_index = ann.class_index()
    originals = {}
    for im in ann.images:
        try:
            pixels = read_image(image_dir / im["path"])
        except (OSError, ValueError):
            offenders.append(im["path"])
            continue
        boxes = []
        for g in ann.ground_truths:
            if g["image_id"] == im["image_id"]:
                ab = AnnotatedBox(BBox.from_corners(*g["bbox"]), cls_index[g["category"]])
                originals[id(ab)] = g
                boxes.append(ab)
        samples.append(Sample(pixels, tuple(boxes)))
    if offenders:
        raise InputError("unreadable images: " + ", ".join(offenders))

    images, gts = [], []
    for i, (im, s) in enumerate(zip(ann.images, samples)):
        rng = np.random.default_rng([seed, i])
        pool = samples[:i] + samples[i + 1:]
        try:
            out = apply_policy(s, policy, rng, pool)
        except AugmentError as exc:
            raise InputError(f"{im['path']}: {exc}") from exc
        write_image(out_dir / Path(im["path"]).name, out.image)
        images.append({**im, "path": Path(im["path"]).name, "width": out.width, "height": out.height})
        for ab in out.boxes:
            if id(ab) in originals:
                gts.append(originals[id(ab)])
                continue
            rec = {"image_id": im["image_id"], "bbox": list(ab.box.corners), "category": ann.categories[ab.class_id]}
            if ab.weight != 1.0:
                rec["weight"] = ab.weight
            gts.append(rec)
    doc = {"categories": ann.categories, "images": images, "ground_truths": gts}
    atomic_write(out_dir / "annotations.json", dumps(doc))
    return EXIT_OK


def make_evaluator(spec: str, seed: int):
    name, _, arg = spec.partition(":")
    if name == "synthetic":
        return SyntheticReward(arg or "TranslateX")
    if name == "proxy":
        return ProxyClassificationReward(seed)
    raise InputError(f"unknown evaluator {spec!r} (expected synthetic[:Kind] or proxy)")


def cmd_search(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = _seed(args, cfg)
    try:
        evaluator = make_evaluator(args.evaluator, seed)
    except ValueError as exc:
        raise InputError(str(exc)) from exc
    if args.budget < 1:
        raise InputError("--budget must be >= 1")
    if args.resume:
        try:
            state = load_checkpoint(args.resume)
        except (OSError, KeyError, ValueError) as exc:
            raise InputError(f"cannot resume from {args.resume}: {exc}") from exc
    else:
        state = new_state(args.algo, seed, batch_size=args.batch_size)
    done = len(state.history)
    try:
        result = resume(state, evaluator, args.budget, worker_count())
    except SearchError as exc:
        policy = json.dumps(exc.policy.to_json()) if exc.policy else "?"
        raise InputError(f"{exc} (policy {policy})") from exc
    for it, reward in result.history[done:]:
        sys.stdout.write(f"{it} {reward!r}\n")
    if args.out:
        save_checkpoint(result.state, args.out)
    policy_out = args.policy or (str(Path(args.out).with_suffix("")) + ".policy.json" if args.out else None)
    if policy_out:
        atomic_write(policy_out, dump_policy(result.best_policy))
    if result.state.controller is not None and args.greedy_out:
        atomic_write(args.greedy_out, dump_policy(controller_greedy(result.state.controller)))
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    if not (args.detections and args.annotations):
        raise InputError("--detections and --annotations are required")
    try:
        ann = load_annotations(args.annotations)
        dets = load_detections(args.detections, ann.categories)
    except AnnotationError as exc:
        raise InputError(str(exc)) from exc
    report = evaluate(dets, ann.to_ground_truths(), ann.categories, len(ann.images),
                      cfg.iou_threshold, cfg.buckets, config_echo=cfg.echo())
    _emit(report.to_json(), args.out)
    return EXIT_OK


def _bench_work(component: str, cfg: RunConfig, input_size: int, seed: int):
    rng = np.random.default_rng(seed)
    neck_cfg = cfg.neck_config()
    weights = init_weights(neck_cfg, "random", seed)
    shapes = pyramid_shapes(input_size, neck_cfg)
    feats = [rng.normal(size=shapes[level]) for level in (2, 3, 4, 5)]
    if component == "neck":
        return lambda: affpn_forward(*feats, neck_cfg, weights)
    if component == "aam":
        m5 = rng.normal(size=(1, neck_cfg.width) + shapes[5][2:])
        return lambda: aam_forward(feats[3], m5, neck_cfg.aam, weights)
    if component == "fem":
        x = rng.normal(size=(1, neck_cfg.width) + shapes[4][2:])
        return lambda: fem_forward(x, neck_cfg.fem, weights, "fem.l4")
    if component == "nms":
        centers = rng.uniform(0, input_size, (500, 2))
        sizes = rng.uniform(8, 64, (500, 2))
        dets = [Detection(BBox(*c, *s), int(rng.integers(4)), float(rng.random()))
                for c, s in zip(centers, sizes)]
        return lambda: nms(dets, 0.5, "weighted")
    if component == "policy":
        policy = random_policy(rng)
        sample = Sample(rng.random((1, 3, 64, 64)), (AnnotatedBox(BBox(32, 32, 16, 16), 0),))
        pool = [Sample(rng.random((1, 3, 64, 64))) for _ in range(3)]
        state = {"rng": np.random.default_rng(seed)}
        return lambda: apply_policy(sample, policy, state["rng"], pool)
    raise InputError(f"unknown bench component {component!r}")


def cmd_bench(args) -> int:
    cfg = RunConfig.load(args.config)
    seed = _seed(args, cfg)
    size = args.input_size or cfg.input_size
    work = _bench_work(args.component, cfg, size, seed)
    res = fps_benchmark(work, args.warmup, args.iters)
    report = {
        "component": args.component,
        "input_size": size,
        "seed": seed,
        "warmup": args.warmup,
        "iters": res.iters,
        "elapsed_seconds": res.elapsed,
        "fps": res.fps,
        "p50_seconds": res.p50_seconds,
    }
    _emit(report, args.out)
    return EXIT_OK


# -- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="afpnkit", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--seed", type=int, help="overrides the config seed")
        p.add_argument("--out", help="output path")
        p.set_defaults(func=func)
        return p

    p = command("init-weights", cmd_init_weights, "write a neck weight container")
    p.add_argument("--scheme", choices=("zeros", "random"), default="random")

    p = command("neck-check", cmd_neck_check, "run the AF-FPN neck on random inputs and check invariants")
    p.add_argument("--weights", help="weight manifest (JSON) with a sibling .bin blob")
    p.add_argument("--input-size", type=int)

    p = command("grad-check", cmd_grad_check, "compare the CIoU gradient with finite differences")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--perturb", type=float, default=0.0, help=argparse.SUPPRESS)

    p = command("aug", cmd_aug, "apply an augmentation policy to an annotated image set")
    p.add_argument("--annotations")
    p.add_argument("--images", help="image directory")
    p.add_argument("--policy")

    p = command("search", cmd_search, "search for an augmentation policy")
    p.add_argument("--evaluator", default="synthetic")
    p.add_argument("--budget", type=int, default=50)
    p.add_argument("--algo", choices=("ppo", "random"), default="ppo")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--policy", help="where to write the best policy")
    p.add_argument("--greedy-out", help="where to write the controller's argmax policy")
    p.add_argument("--resume", help="checkpoint to continue from")

    p = command("eval", cmd_eval, "evaluate detections against annotations")
    p.add_argument("--detections")
    p.add_argument("--annotations")

    p = command("bench", cmd_bench, "time a forward path")
    p.add_argument("component", choices=("neck", "aam", "fem", "nms", "policy"))
    p.add_argument("--iters", type=int, default=3)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--input-size", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"afpnkit {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
