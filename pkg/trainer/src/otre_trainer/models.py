"""Torch generator (training-time twin of the numpy forward engine) and critic."""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

from otre.nnforward import GeneratorSpec, INSTANCE_NORM_EPS, LEAKY_SLOPE, eca_kernel_size

#: Spectral projection slack: kernels are renormalized only when their top
#: singular value drifts above 1 by more than this, keeping the projection
#: idempotent in float32 (a zero-lr epoch must not move parameters).
SN_SLACK = 1e-6


class Eca(nn.Module):
    def __init__(self, channels: int, spec: GeneratorSpec):
        super().__init__()
        k = eca_kernel_size(channels, spec.eca_gamma, spec.eca_b)
        self.weight = nn.Parameter(torch.zeros(k))

    def forward(self, x):
        pooled = x.mean(dim=(2, 3))
        score = F.conv1d(pooled[:, None, :], self.weight[None, None, :],
                         padding=(self.weight.numel() - 1) // 2)[:, 0]
        return x * torch.sigmoid(score)[:, :, None, None]


class Generator(nn.Module):
    """UNet with spectrally constrained convolutions and residual ECA blocks.

    Layer names mirror the OTRE layer plan so export is a straight walk.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        self._convs = nn.ModuleDict()
        self._ecas = nn.ModuleDict()
        ch = lambda i: spec.base_channels << i

        def conv(name, cout, cin, k):
            self._convs[name.replace(".", "/")] = nn.Conv2d(cin, cout, k, padding=(k - 1) // 2)

        def ecab(prefix, c):
            conv(f"{prefix}.conv1", c, c, 3)
            conv(f"{prefix}.conv2", c, c, 3)
            self._ecas[prefix.replace(".", "/")] = Eca(c, spec)

        for i in range(spec.depth):
            conv(f"enc{i}.conv", ch(i), 3 if i == 0 else ch(i), 3)
            ecab(f"enc{i}.ecab", ch(i))
            conv(f"down{i}.conv", ch(i + 1), ch(i), 3)
        conv("bott.conv", ch(spec.depth), ch(spec.depth), 3)
        ecab("bott.ecab", ch(spec.depth))
        for i in reversed(range(spec.depth)):
            conv(f"up{i}.conv", ch(i), ch(i + 1), 3)
            conv(f"dec{i}.conv", ch(i), 2 * ch(i), 3)
            ecab(f"dec{i}.ecab", ch(i))
        conv("head.conv", 3, ch(0), 1)
        # zero head: with residual output the generator starts exactly at the
        # identity, so training sculpts a correction instead of unlearning noise
        nn.init.zeros_(self.conv("head.conv").weight)
        nn.init.zeros_(self.conv("head.conv").bias)

    def conv(self, name: str) -> nn.Conv2d:
        return self._convs[name.replace(".", "/")]

    def eca(self, prefix: str) -> Eca:
        return self._ecas[prefix.replace(".", "/")]

    def _block(self, x, name, stride=1):
        c = self.conv(name)
        x = F.conv2d(x, c.weight, c.bias, stride=stride, padding=c.padding)
        return F.leaky_relu(F.instance_norm(x, eps=INSTANCE_NORM_EPS), LEAKY_SLOPE)

    def _ecab(self, x, prefix):
        t = self.conv(f"{prefix}.conv1")(x)
        t = F.leaky_relu(F.instance_norm(t, eps=INSTANCE_NORM_EPS), LEAKY_SLOPE)
        t = self.conv(f"{prefix}.conv2")(t)
        t = F.instance_norm(t, eps=INSTANCE_NORM_EPS)
        return x + self.eca(prefix)(t)

    def forward(self, x, clamp: bool = True):
        h = x
        skips = []
        for i in range(self.spec.depth):
            h = self._block(h, f"enc{i}.conv")
            h = self._ecab(h, f"enc{i}.ecab")
            skips.append(h)
            h = self._block(h, f"down{i}.conv", stride=2)
        h = self._block(h, "bott.conv")
        h = self._ecab(h, "bott.ecab")
        for i in reversed(range(self.spec.depth)):
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = self._block(h, f"up{i}.conv")
            h = torch.cat([h, skips[i]], dim=1)
            h = self._block(h, f"dec{i}.conv")
            h = self._ecab(h, f"dec{i}.ecab")
        head = self.conv("head.conv")
        delta = F.conv2d(h, head.weight, head.bias)
        out = x + delta if self.spec.residual_output else delta
        return out.clamp(0.0, 1.0) if clamp else out

    @torch.no_grad()
    def project_spectral(self) -> None:
        """Renormalize any conv kernel whose spectral norm exceeds 1."""
        for conv in self._convs.values():
            w = conv.weight
            sigma = torch.linalg.matrix_norm(w.reshape(w.shape[0], -1), ord=2)
            if float(sigma) > 1.0 + SN_SLACK:
                conv.weight.data = w / sigma

    def parameter_snapshot(self) -> dict[str, torch.Tensor]:
        return {k: v.detach().clone() for k, v in self.state_dict().items()}


class Critic(nn.Module):
    """Four strided conv blocks (no normalization: it interacts badly with a
    per-sample gradient penalty) and a global-sum linear head."""

    def __init__(self, base_channels: int = 32, blocks: int = 4):
        super().__init__()
        layers = []
        cin = 3
        c = base_channels
        for _ in range(blocks):
            layers += [nn.Conv2d(cin, c, 4, stride=2, padding=1), nn.LeakyReLU(LEAKY_SLOPE)]
            cin, c = c, c * 2
        self.features = nn.Sequential(*layers)
        self.head = nn.Linear(cin, 1)

    def forward(self, x):
        h = self.features(x)
        return self.head(h.sum(dim=(2, 3)))[:, 0]
