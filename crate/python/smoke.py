"""Smoke test for the mpft extension module.

Build and run:
    cargo build --release -p mpft-py --features extension-module
    cp target/release/libmpft.so python/mpft.so
    python3 python/smoke.py
"""

import json
import random
import sys
import tempfile
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

import mpft  # noqa: E402


def check(name, cond):
    print(("ok   " if cond else "FAIL ") + name)
    if not cond:
        sys.exit(1)


def main():
    check("ldiv of a flat patch is 0", mpft.local_texture_diversity([[0.5] * 4] * 4) == 0.0)
    check("ldiv of a 2x2 step", mpft.local_texture_diversity([[0.0, 1.0], [0.0, 1.0]]) == 4.0)

    rng = random.Random(0)
    img = [[[rng.random() for _ in range(16)] for _ in range(16)]] * 3
    ranked = mpft.rank_patches(img, 4)
    check("ranking covers every patch", sorted(ranked) == list(range(16)))

    cfg = mpft.MaskConfig("tam", "high", 4, (0.5, 0.5))
    mask = mpft.generate_mask(img, cfg, 7)
    check("high masks the top half", mask.masked_patch_indices == sorted(ranked[:8]))
    masked = mpft.apply_mask(img, mask)
    zeros = all(masked[c][y][x] == 0.0 for c in range(3) for y in range(16) for x in range(16) if mask.grid[y][x] == 0)
    check("masked pixels are zero", zeros)

    check("ap hand case", abs(mpft.average_precision([0.9, 0.8, 0.7], [1, 0, 1]) - 5 / 6) < 1e-12)
    check("accuracy hand case", abs(mpft.accuracy([0.9, 0.8, 0.7], [1, 0, 1]) - 2 / 3) < 1e-12)
    check("lr halves per epoch", mpft.lr_at(3, 1e-4) == 1e-4 / 8)

    with tempfile.TemporaryDirectory() as d:
        d = Path(d)
        manifest = mpft.synth(d / "data", image_size=16, train_count=8, test_count_per_subset=4)
        check("synth writes a manifest", manifest.is_file())
        src = next((d / "data").rglob("*.png"))
        rec = mpft.perturb_image(src, d / "jpeg.png", "jpeg", 3)
        check("jpeg quality in range", 10 <= rec["jpeg_quality"] <= 75)
        outputs = mpft.run("mask", d / "mask", overrides=[("data.image", json.dumps(str(src)))])
        check("mask command hashes its artifacts", "mask.png" in outputs)
    print("all smoke checks passed")


if __name__ == "__main__":
    main()
