#!/usr/bin/env python3
"""Fit and ship the toy denoising checkpoint used by the end-to-end tests.

A small supervised regression (synthetic smooth images, blur sigma 1 + noise
0.05 degradation) — deliberately NOT the adversarial trainer — producing an
OTRE file whose quality gain is then measured through the package's own
forward engine.  Torch is needed only to (re)generate the shipped file.

Usage: python tools/make_toy_checkpoint.py [out.otre]
"""

import sys
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from otre import imagekit, nnforward as nf  # noqa: E402
from otre.degrade import DegradeParams, degrade  # noqa: E402

SPEC = nf.GeneratorSpec(depth=2, base_channels=8)
SIDE = 64
N_TRAIN, N_HELD = 120, 20
STEPS = 700
BATCH = 8
SEED = 20240811


def smooth(seed, side=SIDE):
    rng = np.random.default_rng(seed)
    coarse = rng.uniform(0.1, 0.9, (3, 4, 4))
    t = torch.from_numpy(coarse)[None]
    img = F.interpolate(t, size=(side, side), mode="bilinear", align_corners=False)
    return img[0].numpy().clip(0, 1)


def degraded(img, seed):
    return degrade(img, DegradeParams(blur_sigma=1.0, noise_std=0.05, seed=seed))


class TorchEca(nn.Module):
    def __init__(self, channels, spec):
        super().__init__()
        k = nf.eca_kernel_size(channels, spec.eca_gamma, spec.eca_b)
        self.weight = nn.Parameter(torch.zeros(k))

    def forward(self, x):
        pooled = x.mean(dim=(2, 3))  # (b, c)
        score = F.conv1d(pooled[:, None, :], self.weight[None, None, :],
                         padding=(self.weight.numel() - 1) // 2)[:, 0]
        return x * torch.sigmoid(score)[:, :, None, None]


class TorchGenerator(nn.Module):
    """Mirror of the numpy forward pass (training-time clone)."""

    def __init__(self, spec):
        super().__init__()
        self.spec = spec
        ch = lambda i: spec.base_channels << i
        self.convs = nn.ModuleDict()
        self.ecas = nn.ModuleDict()

        def add_conv(name, cout, cin, k):
            self.convs[name.replace(".", "/")] = nn.Conv2d(cin, cout, k, padding=(k - 1) // 2)

        for i in range(spec.depth):
            cin = 3 if i == 0 else ch(i)
            add_conv(f"enc{i}.conv", ch(i), cin, 3)
            add_conv(f"enc{i}.ecab.conv1", ch(i), ch(i), 3)
            add_conv(f"enc{i}.ecab.conv2", ch(i), ch(i), 3)
            self.ecas[f"enc{i}.ecab".replace(".", "/")] = TorchEca(ch(i), spec)
            add_conv(f"down{i}.conv", ch(i + 1), ch(i), 3)
        add_conv("bott.conv", ch(spec.depth), ch(spec.depth), 3)
        add_conv("bott.ecab.conv1", ch(spec.depth), ch(spec.depth), 3)
        add_conv("bott.ecab.conv2", ch(spec.depth), ch(spec.depth), 3)
        self.ecas["bott/ecab"] = TorchEca(ch(spec.depth), spec)
        for i in reversed(range(spec.depth)):
            add_conv(f"up{i}.conv", ch(i), ch(i + 1), 3)
            add_conv(f"dec{i}.conv", ch(i), 2 * ch(i), 3)
            add_conv(f"dec{i}.ecab.conv1", ch(i), ch(i), 3)
            add_conv(f"dec{i}.ecab.conv2", ch(i), ch(i), 3)
            self.ecas[f"dec{i}.ecab".replace(".", "/")] = TorchEca(ch(i), spec)
        add_conv("head.conv", 3, ch(0), 1)

    def conv(self, name):
        return self.convs[name.replace(".", "/")]

    def block(self, x, name, stride=1):
        c = self.conv(name)
        x = F.conv2d(x, c.weight, c.bias, stride=stride, padding=c.padding)
        return F.leaky_relu(F.instance_norm(x, eps=nf.INSTANCE_NORM_EPS), 0.2)

    def ecab(self, x, prefix):
        t = self.conv(f"{prefix}.conv1")(x)
        t = F.leaky_relu(F.instance_norm(t, eps=nf.INSTANCE_NORM_EPS), 0.2)
        t = self.conv(f"{prefix}.conv2")(t)
        t = F.instance_norm(t, eps=nf.INSTANCE_NORM_EPS)
        t = self.ecas[prefix.replace(".", "/")](t)
        return x + t

    def forward(self, x, clamp=False):
        h = x
        skips = []
        for i in range(self.spec.depth):
            h = self.block(h, f"enc{i}.conv")
            h = self.ecab(h, f"enc{i}.ecab")
            skips.append(h)
            h = self.block(h, f"down{i}.conv", stride=2)
        h = self.block(h, "bott.conv")
        h = self.ecab(h, "bott.ecab")
        for i in reversed(range(self.spec.depth)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self.block(h, f"up{i}.conv")
            h = torch.cat([h, skips[i]], dim=1)
            h = self.block(h, f"dec{i}.conv")
            h = self.ecab(h, f"dec{i}.ecab")
        head = self.conv("head.conv")
        delta = F.conv2d(h, head.weight, head.bias)
        out = x + delta if self.spec.residual_output else delta
        return out.clamp(0, 1) if clamp else out

    @torch.no_grad()
    def project_spectral(self):
        """Miyato-style projection: divide every conv kernel by its top
        singular value so the exported weights honour the Lipschitz budget."""
        for conv in self.convs.values():
            w = conv.weight
            sigma = torch.linalg.matrix_norm(w.reshape(w.shape[0], -1), ord=2)
            if sigma > 0:
                conv.weight.data = w / sigma


def export(model: TorchGenerator, path):
    records = []
    for name, kind, shape in nf.layer_plan(model.spec):
        if kind == nf.KIND_CONV2D:
            w = model.conv(name).weight.detach().numpy().astype(np.float64)
            mat = w.reshape(w.shape[0], -1)
            sigma = float(np.linalg.svd(mat, compute_uv=False)[0])
            if sigma > 1.0:
                w = w / sigma
            w32 = w.astype(np.float32)
            sigma32 = float(np.linalg.svd(
                w32.astype(np.float64).reshape(w.shape[0], -1), compute_uv=False)[0])
            records.append(nf.LayerRecord(name, kind, shape, w32.ravel(), sigma32))
        elif kind == nf.KIND_BIAS:
            b = model.conv(name[: -len(".bias")]).bias.detach().numpy().astype(np.float32)
            records.append(nf.LayerRecord(name, kind, shape, b.ravel()))
        elif kind == nf.KIND_ECA:
            k = model.ecas[name[: -len(".eca")].replace(".", "/")].weight
            records.append(nf.LayerRecord(name, kind, shape,
                                          k.detach().numpy().astype(np.float32).ravel()))
    nf.save_weights(nf.WeightManifest(arch_id=model.spec.arch_id, records=records), path)


def main():
    out_path = Path(sys.argv[1]) if len(sys.argv) > 1 else (
        Path(__file__).resolve().parents[1] / "tests" / "data" / "toy-denoiser-d2c8.otre"
    )
    torch.manual_seed(SEED)
    clean = [smooth(SEED + i) for i in range(N_TRAIN + N_HELD)]
    noisy = [degraded(c, SEED + 10_000 + i) for i, c in enumerate(clean)]
    x_train = torch.tensor(np.stack(noisy[:N_TRAIN]), dtype=torch.float32)
    y_train = torch.tensor(np.stack(clean[:N_TRAIN]), dtype=torch.float32)

    model = TorchGenerator(SPEC)
    model.project_spectral()
    opt = torch.optim.Adam(model.parameters(), lr=2e-3)
    rng = np.random.default_rng(SEED)
    for step in range(STEPS):
        idx = rng.integers(0, N_TRAIN, BATCH)
        xb, yb = x_train[idx], y_train[idx]
        pred = model(xb)
        loss = F.mse_loss(pred, yb)
        opt.zero_grad()
        loss.backward()
        opt.step()
        model.project_spectral()
        if step % 100 == 0:
            print(f"step {step:4d}  mse {loss.item():.5f}")

    export(model, out_path)
    print("exported", out_path)

    # verify through the package's own loader + forward engine
    gen = nf.Generator.load(out_path)
    gains = []
    for i in range(N_TRAIN, N_TRAIN + N_HELD):
        base = imagekit.psnr(noisy[i], clean[i])
        enhanced = gen(noisy[i])
        gains.append(imagekit.psnr(enhanced, clean[i]) - base)
    gains = np.array(gains)
    print(f"held-out PSNR gain via nnforward: mean {gains.mean():.2f} dB "
          f"(min {gains.min():.2f}, max {gains.max():.2f})")
    assert gains.mean() >= 1.0, "toy checkpoint must gain >= 1 dB"


if __name__ == "__main__":
    main()
