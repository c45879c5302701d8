#!/usr/bin/env python3
"""Scratch harness for tuning the toy training config (not shipped logic)."""

import sys
import time
import tempfile
import pathlib

import numpy as np

from otre import imagekit as ik, nnforward as nf
from otre.degrade import DatasetManifest, ManifestEntry, DegradeParams, degrade
from otre.imagekit import _bilinear_axis
from otre_trainer.config import TrainConfig
from otre_trainer.data import ImageStore
from otre_trainer.train import train


def smooth(seed, side=32):
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.1, 0.9, (3, 4, 4))
    img = _bilinear_axis(coarse, side, axis=1)
    img = _bilinear_axis(img, side, axis=2)
    return np.clip(img, 0, 1)


def build_data(tmp):
    (clean_dir := tmp / "clean").mkdir()
    (low_dir := tmp / "low").mkdir()
    for i in range(200):
        clean = smooth(5000 + i)
        ik.save_image(clean, clean_dir / f"c{i:03d}.png")
        d = degrade(clean, DegradeParams(blur_sigma=1.0, noise_std=0.05, seed=100 + i))
        ik.save_image(d, low_dir / f"l{i:03d}.png")
    held = []
    for i in range(20):
        c = smooth(9500 + i)
        d = degrade(c, DegradeParams(blur_sigma=1.0, noise_std=0.05, seed=900 + i))
        held.append((c, d))
    DatasetManifest(entries=[ManifestEntry(path=str(p)) for p in sorted(low_dir.iterdir())]).save(tmp / "low.jsonl")
    DatasetManifest(entries=[ManifestEntry(path=str(p)) for p in sorted(clean_dir.iterdir())]).save(tmp / "high.jsonl")
    return ImageStore.open(tmp / "low.jsonl", 32), ImageStore.open(tmp / "high.jsonl", 32), held


def trial(low, high, held, tmp, name, **kw):
    t0 = time.time()
    cfg = TrainConfig(epochs=30, image_side=32, seed=11,
                      generator=nf.GeneratorSpec(depth=2, base_channels=8), **kw)
    run_dir = tmp / f"run_{name}"; final = train(low, high, cfg, run_dir)
    gen = nf.Generator.load(final)
    base = np.mean([ik.psnr(d, c) for c, d in held])
    enh = np.mean([ik.psnr(gen(d), c) for c, d in held])
    print(f"{name} [{run_dir}]: baseline {base:.2f} enhanced {enh:.2f} gain {enh - base:+.2f} dB "
          f"({time.time() - t0:.0f}s)", flush=True)
    return enh - base


def main():
    tmp = pathlib.Path(tempfile.mkdtemp())
    low, high, held = build_data(tmp)
    which = sys.argv[1] if len(sys.argv) > 1 else "all"
    configs = {
        "zinit_a10": dict(alpha=10.0, beta=5.0, critic_steps=1, lr_d=1e-4, lr_g=5e-4, batch=4),
        "zinit_a20": dict(alpha=20.0, beta=10.0, critic_steps=1, lr_d=1e-4, lr_g=5e-4, batch=4),
        "zinit_a60": dict(alpha=60.0, beta=20.0, critic_steps=1, lr_d=1e-4, lr_g=5e-4, batch=4),
    }
    for name, kw in configs.items():
        if which in ("all", name):
            trial(low, high, held, tmp, name, **kw)


if __name__ == "__main__":
    main()
