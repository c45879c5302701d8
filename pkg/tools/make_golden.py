#!/usr/bin/env python3
"""Generate the golden fixtures shipped under tests/data/.

Run once from the repo root; artifacts are committed.  The 8x8 forward-pass
golden is cross-checked here against an independent loop-based forward pass
(written before and apart from the vectorized engine) so the stored vector is
an oracle, not a self-fulfilling regression file.
"""

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from otre import imagekit, nnforward as nf  # noqa: E402
from otre.degrade import DegradeParams, degrade  # noqa: E402

DATA = Path(__file__).resolve().parents[1] / "tests" / "data"


# --- independent forward pass (naive loops, no shared helpers) --------------

def loop_conv(x, k, b, stride, pad):
    cout, cin, kh, kw = k.shape
    xp = np.zeros((cin, x.shape[1] + 2 * pad, x.shape[2] + 2 * pad))
    xp[:, pad:pad + x.shape[1], pad:pad + x.shape[2]] = x
    oh = (xp.shape[1] - kh) // stride + 1
    ow = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((cout, oh, ow))
    for co in range(cout):
        for i in range(oh):
            for j in range(ow):
                s = 0.0
                for ci in range(cin):
                    for u in range(kh):
                        for v in range(kw):
                            s += k[co, ci, u, v] * xp[ci, i * stride + u, j * stride + v]
                out[co, i, j] = s + b[co]
    return out


def loop_inorm(x, eps=nf.INSTANCE_NORM_EPS):
    out = np.zeros_like(x)
    for c in range(x.shape[0]):
        mu = x[c].mean()
        var = x[c].var()
        out[c] = (x[c] - mu) / np.sqrt(var + eps)
    return out


def loop_lrelu(x, slope=nf.LEAKY_SLOPE):
    out = x.copy()
    out[out < 0] *= slope
    return out


def loop_eca(x, k):
    c = x.shape[0]
    pooled = np.array([x[ci].mean() for ci in range(c)])
    pad = (len(k) - 1) // 2
    padded = np.concatenate([np.zeros(pad), pooled, np.zeros(pad)])
    out = np.zeros_like(x)
    for ci in range(c):
        score = sum(k[t] * padded[ci + t] for t in range(len(k)))
        out[ci] = x[ci] / (1.0 + np.exp(-score))
    return out


def loop_up2(x):
    c, h, w = x.shape
    out = np.zeros((c, 2 * h, 2 * w))
    for i in range(2 * h):
        for j in range(2 * w):
            out[:, i, j] = x[:, i // 2, j // 2]
    return out


def loop_generator(spec, manifest, x):
    w = {r.name: r.array() for r in manifest.records}

    def block(h, name, stride):
        kern = w[name]
        pad = (kern.shape[-1] - 1) // 2
        return loop_lrelu(loop_inorm(loop_conv(h, kern, w[f"{name}.bias"], stride, pad)))

    def ecab(h, pfx):
        t = loop_conv(h, w[f"{pfx}.conv1"], w[f"{pfx}.conv1.bias"], 1, 1)
        t = loop_lrelu(loop_inorm(t))
        t = loop_conv(t, w[f"{pfx}.conv2"], w[f"{pfx}.conv2.bias"], 1, 1)
        t = loop_inorm(t)
        t = loop_eca(t, w[f"{pfx}.eca"])
        return h + t

    h = x
    skips = []
    for i in range(spec.depth):
        h = block(h, f"enc{i}.conv", 1)
        h = ecab(h, f"enc{i}.ecab")
        skips.append(h)
        h = block(h, f"down{i}.conv", 2)
    h = block(h, "bott.conv", 1)
    h = ecab(h, "bott.ecab")
    for i in reversed(range(spec.depth)):
        h = loop_up2(h)
        h = block(h, f"up{i}.conv", 1)
        h = np.concatenate([h, skips[i]], axis=0)
        h = block(h, f"dec{i}.conv", 1)
        h = ecab(h, f"dec{i}.ecab")
    delta = loop_conv(h, w["head.conv"], w["head.conv.bias"], 1, 0)
    raw = x + delta if spec.residual_output else delta
    return np.clip(raw, 0.0, 1.0)


def main():
    DATA.mkdir(parents=True, exist_ok=True)

    # identity checkpoint (zero weights, residual output)
    id_spec = nf.GeneratorSpec(depth=1, base_channels=4)
    nf.save_weights(nf.zero_manifest(id_spec), DATA / "identity-d1c4.otre")

    # golden generator: seeded small weights, spectrally normalized at export
    spec = nf.GeneratorSpec(depth=2, base_channels=4)
    manifest = nf.random_manifest(spec, seed=20240811, scale=0.2)
    nf.save_weights(manifest, DATA / "golden-gen-d2c4.otre")

    # golden 8x8 input and forward output
    rng = np.random.default_rng(77)
    x = rng.uniform(0.05, 0.95, (3, 8, 8))
    np.save(DATA / "golden-input-8x8.npy", x)
    imagekit.save_image(x, DATA / "golden-input-8x8.png")

    engine_out = nf.generator_forward(spec, manifest, x)
    oracle_out = loop_generator(spec, manifest, x)
    gap = np.abs(engine_out - oracle_out).max()
    print(f"engine vs independent loop forward: max abs diff {gap:.3e}")
    assert gap <= 1e-9, "engine disagrees with the independent forward pass"
    np.save(DATA / "golden-output-8x8.npy", engine_out.astype(np.float32))

    # golden end-to-end pipeline PNG (what cmd_enhance must reproduce)
    x_png = imagekit.load_image(DATA / "golden-input-8x8.png")
    out_png = nf.generator_forward(spec, manifest, imagekit.preprocess(x_png, 8))
    imagekit.save_image(out_png, DATA / "golden-enhanced-8x8.png")

    # degradation golden checksum
    img = np.load(DATA / "golden-input-8x8.npy")
    big = np.clip(np.repeat(np.repeat(img, 8, axis=1), 8, axis=2), 0, 1)
    p = DegradeParams(blur_sigma=1.2, illum_strength=0.4, brightness_shift=-0.05,
                      contrast_scale=0.9, noise_std=0.03, seed=123456789)
    deg = degrade(big, p)
    u8 = np.round(deg * 255).astype(np.uint8)
    import hashlib

    digest = hashlib.sha256(u8.tobytes()).hexdigest()
    (DATA / "golden-checksums.json").write_text(json.dumps({
        "degrade_sha256_u8": digest,
        "degrade_params": {
            "blur_sigma": 1.2, "illum_strength": 0.4, "brightness_shift": -0.05,
            "contrast_scale": 0.9, "noise_std": 0.03, "seed": 123456789,
        },
    }, indent=2))
    print("degrade checksum:", digest)
    print("golden fixtures written to", DATA)


if __name__ == "__main__":
    main()
