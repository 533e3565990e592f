"""Paired comparison: edge-masked training against plain training.

Trains one codec with the edge-mask-restricted objective and one with the
full-frame objective on the same scenes, seeds, and schedule, then scores
both on held-out scenes: payload bits per pixel and reconstruction error
inside the edge mask. The edge-masked model should land at a clearly
lower rate without giving up edge-region quality.

Usage: python scripts/masked_vs_human.py [epochs] [seeds...]
"""

import sys
import warnings

import numpy as np

from icmlab import codec, metrics
from icmlab.masks import CannyParams, edge_mask
from icmlab.rng import mix
from icmlab.scenes import SceneSpec, generate_synthetic_scene
from icmlab.training import LicExample, TrainConfig, train_lic

EPOCHS = int(sys.argv[1]) if len(sys.argv) > 1 else 60
SEEDS = [int(s) for s in sys.argv[2:]] or [1, 2, 3]
ALPHA = 0.48


def build_scenes(count, tag):
    spec = SceneSpec(height=64, width=64)
    out = []
    for i in range(count):
        image, seg = generate_synthetic_scene(mix(tag, i), spec)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            mask = edge_mask(seg, ALPHA, CannyParams(dilate_radius=2),
                             mode="region-union")
        out.append(LicExample(image=image, mask=mask))
    return out


def score(model, examples):
    bpps, in_mask = [], []
    for ex in examples:
        bs = codec.encode_bitstream(model, ex.image)
        decoded = codec.decode_bitstream(model, bs)
        bpps.append(metrics.bpp(len(bs.payload), bs.image_w, bs.image_h))
        in_mask.append(metrics.mse(ex.image, decoded, ex.mask))
    return float(np.mean(bpps)), float(np.mean(in_mask))


def main():
    train_set = build_scenes(12, 0xE0)
    held_out = build_scenes(20, 0xE1)
    print(f"epochs={EPOCHS} seeds={SEEDS} "
          f"mask coverage={np.mean([e.mask.coverage() for e in held_out]):.3f}")
    results = {}
    for objective in ("masked", "human"):
        bpps, mses = [], []
        for seed in SEEDS:
            cfg = TrainConfig(objective=objective, lmbda=0.05, epochs=EPOCHS,
                              seed=seed, lr=1.5e-3)
            model, _ = train_lic(train_set, cfg)
            bpp, mse_in = score(model, held_out)
            bpps.append(bpp)
            mses.append(mse_in)
            print(f"  {objective} seed {seed}: bpp={bpp:.4f} in-mask mse={mse_in:.6f}")
        results[objective] = (float(np.mean(bpps)), float(np.mean(mses)))
    m_bpp, m_mse = results["masked"]
    h_bpp, h_mse = results["human"]
    print(f"\nmasked: bpp={m_bpp:.4f} in-mask mse={m_mse:.6f}")
    print(f"human:  bpp={h_bpp:.4f} in-mask mse={h_mse:.6f}")
    print(f"rate saved: {100 * (1 - m_bpp / h_bpp):.1f}% "
          f"at {'no worse' if m_mse <= h_mse else 'worse'} edge-region error")


if __name__ == "__main__":
    main()
