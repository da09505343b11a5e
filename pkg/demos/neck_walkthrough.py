"""Push random backbone features through the attention-augmented pyramid neck.

Run: python3 demos/neck_walkthrough.py [input_size]
"""
import sys
import time

import numpy as np

from afpnkit.neck import (
    NeckConfig,
    aam_forward,
    affpn_forward,
    effective_receptive_field,
    init_weights,
    pooled_size,
    pyramid_shapes,
    recompose_forward,
)

size = int(sys.argv[1]) if len(sys.argv) > 1 else 320
cfg = NeckConfig()
weights = init_weights(cfg, "random", seed=0)
rng = np.random.default_rng(0)

shapes = pyramid_shapes(size, cfg)
feats = [rng.normal(size=shapes[level]) for level in (2, 3, 4, 5)]
for level, f in zip((2, 3, 4, 5), feats):
    print(f"C{level}: {f.shape}")

side = shapes[5][2]
print("\nattention module pools C5 down to", [pooled_size(b, side) for b in cfg.aam.betas])
print("enhancement branches see", [effective_receptive_field(3, d) for d in cfg.fem.dilations], "pixel windows")

start = time.perf_counter()
outs = affpn_forward(*feats, cfg, weights)
elapsed = time.perf_counter() - start
for level, p in zip((2, 3, 4, 5), outs):
    print(f"P{level}: {p.shape}")
print(f"forward took {elapsed:.2f}s")

# a second implementation built only from tensor primitives must agree
again = recompose_forward(*feats, cfg, weights)
print("max diff vs recomposed pass:", max(float(np.max(np.abs(a - b))) for a, b in zip(outs, again)))

m5 = rng.normal(size=(1, cfg.width) + shapes[5][2:])
_, trace = aam_forward(feats[3], m5, cfg.aam, weights, return_trace=True)
for i, beta in enumerate(cfg.aam.betas):
    a = trace.attention[0, i]
    print(f"beta={beta}: attention mean {a.mean():.3f}, range [{a.min():.3f}, {a.max():.3f}]")
