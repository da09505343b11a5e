"""Discrete augmentation policy genome and its JSON interchange format.

A policy file is a JSON array of 5 sub-policies, each an array of 2 records
``{"kind": str, "prob_level": 0..9, "mag_level": 0..10}``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

OPS = (
    "TranslateX",
    "TranslateY",
    "Shear",
    "Rotate",
    "Zoom",
    "Brightness",
    "Contrast",
    "ColorJitter",
    "Noise",
    "Blur",
    "Erasing",
    "CutMix",
    "Mixup",
    "SnapMix",
    "Mosaic",
)
PROB_LEVELS = 10
MAG_LEVELS = 11
OPS_PER_SUB = 2
SUBS_PER_POLICY = 5

# Linear magnitude ranges: level 0 maps to the first value, level 10 to the second.
MAGNITUDE_RANGES = {
    "TranslateX": (-0.25, 0.25),  # fraction of image width
    "TranslateY": (-0.25, 0.25),  # fraction of image height
    "Shear": (-0.3, 0.3),  # horizontal shear factor
    "Rotate": (-30.0, 30.0),  # degrees, counter-clockwise on screen
    "Zoom": (0.5, 1.5),  # scale about the image center
    "Brightness": (-0.3, 0.3),  # additive offset
    "Contrast": (0.5, 1.5),  # gain about the mean intensity
    "ColorJitter": (0.0, 0.3),  # max per-channel gain deviation
    "Noise": (0.0, 0.1),  # gaussian sigma
    "Blur": (0.0, 2.0),  # gaussian sigma in pixels
    "Erasing": (0.0, 0.5),  # erased rectangle side, fraction of image side
    "CutMix": (0.0, 0.5),  # pasted area fraction
    "Mixup": (0.0, 0.5),  # blend weight of the pool sample
    "SnapMix": (0.0, 0.5),  # mean patch area fraction
    "Mosaic": (0.0, 0.25),  # split-point jitter, fraction of canvas side
}


class PolicyFormatError(ValueError):
    pass


@dataclass(frozen=True)
class AugOpSpec:
    kind: str
    prob_level: int
    mag_level: int

    def __post_init__(self):
        if self.kind not in MAGNITUDE_RANGES:
            raise PolicyFormatError(f"unknown augmentation op {self.kind!r}")
        if not 0 <= self.prob_level < PROB_LEVELS:
            raise PolicyFormatError(f"prob_level {self.prob_level} outside 0..{PROB_LEVELS - 1}")
        if not 0 <= self.mag_level < MAG_LEVELS:
            raise PolicyFormatError(f"mag_level {self.mag_level} outside 0..{MAG_LEVELS - 1}")

    @property
    def probability(self) -> float:
        return self.prob_level / (PROB_LEVELS - 1)

    @property
    def magnitude(self) -> float:
        lo, hi = MAGNITUDE_RANGES[self.kind]
        return lo + (hi - lo) * self.mag_level / (MAG_LEVELS - 1)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "prob_level": self.prob_level, "mag_level": self.mag_level}


@dataclass(frozen=True)
class SubPolicy:
    ops: tuple[AugOpSpec, AugOpSpec]

    def __post_init__(self):
        if len(self.ops) != OPS_PER_SUB:
            raise PolicyFormatError(f"a sub-policy has exactly {OPS_PER_SUB} operations")
        object.__setattr__(self, "ops", tuple(self.ops))


@dataclass(frozen=True)
class Policy:
    subs: tuple[SubPolicy, ...]

    def __post_init__(self):
        if len(self.subs) != SUBS_PER_POLICY:
            raise PolicyFormatError(f"a policy has exactly {SUBS_PER_POLICY} sub-policies")
        object.__setattr__(self, "subs", tuple(self.subs))

    def slots(self) -> list[AugOpSpec]:
        return [op for sub in self.subs for op in sub.ops]

    def to_json(self) -> list:
        return [[op.to_dict() for op in sub.ops] for sub in self.subs]

    @classmethod
    def from_json(cls, data) -> "Policy":
        try:
            return cls(tuple(
                SubPolicy(tuple(
                    AugOpSpec(str(rec["kind"]), int(rec["prob_level"]), int(rec["mag_level"]))
                    for rec in sub
                ))
                for sub in data
            ))
        except (TypeError, KeyError) as exc:
            raise PolicyFormatError(f"malformed policy document: {exc}") from exc

    @classmethod
    def uniform(cls, kind: str, prob_level: int, mag_level: int) -> "Policy":
        op = AugOpSpec(kind, prob_level, mag_level)
        return cls(tuple(SubPolicy((op, op)) for _ in range(SUBS_PER_POLICY)))


def identity_policy() -> Policy:
    return Policy.uniform("TranslateX", 0, 5)


def dump_policy(policy: Policy) -> str:
    return json.dumps(policy.to_json(), indent=1) + "\n"


def load_policy(path) -> Policy:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise PolicyFormatError(f"cannot read policy file {path}: {exc}") from exc
    return Policy.from_json(data)
