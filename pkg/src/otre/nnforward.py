"""Forward-only generator engine and the OTRE weight file format.

The generator is a UNet encoder-decoder with spectrally normalized
convolutions and residual blocks carrying efficient channel attention (ECA).
Weights travel in the little-endian OTRE container (see docs/weight-format.md
for the byte-exact layout); the loader re-verifies the spectral norm of every
convolution kernel via power iteration, failing loudly on violation, so that
a loaded generator is certifiably close to 1-Lipschitz.

No training and no autodiff here: the training side writes OTRE files, this
module only reads and runs them.
"""

from __future__ import annotations

import io
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import (
    BadMagic,
    CorruptData,
    LipschitzViolation,
    NonFiniteParam,
    ShapeMismatch,
    VersionUnsupported,
)

MAGIC = b"OTRE"
FORMAT_VERSION = 1

#: Epsilon of the per-sample channel normalization inside generator blocks.
INSTANCE_NORM_EPS = 1e-5

#: Negative slope of the leaky ReLU used throughout the generator.
LEAKY_SLOPE = 0.2

KIND_CONV2D = "conv2d"
KIND_ECA = "eca"
KIND_NORM = "norm"
KIND_BIAS = "bias"

_KIND_TO_BYTE = {KIND_CONV2D: 0, KIND_ECA: 1, KIND_NORM: 2, KIND_BIAS: 3}
_BYTE_TO_KIND = {v: k for k, v in _KIND_TO_BYTE.items()}


@dataclass(frozen=True)
class GeneratorSpec:
    """Architecture hyperparameters, pinned by the arch_id string."""

    depth: int = 4
    base_channels: int = 32
    eca_gamma: int = 2
    eca_b: int = 1
    residual_output: bool = True

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ValueError("depth and base_channels must be >= 1")

    @property
    def arch_id(self) -> str:
        tail = "res" if self.residual_output else "raw"
        return (
            f"unet-eca-d{self.depth}-c{self.base_channels}"
            f"-g{self.eca_gamma}-b{self.eca_b}-{tail}"
        )

    @staticmethod
    def from_arch_id(arch_id: str) -> "GeneratorSpec":
        m = re.fullmatch(r"unet-eca-d(\d+)-c(\d+)-g(\d+)-b(\d+)-(res|raw)", arch_id)
        if m is None:
            raise CorruptData(f"unrecognized arch_id {arch_id!r}")
        return GeneratorSpec(
            depth=int(m.group(1)),
            base_channels=int(m.group(2)),
            eca_gamma=int(m.group(3)),
            eca_b=int(m.group(4)),
            residual_output=m.group(5) == "res",
        )


@dataclass
class LayerRecord:
    name: str
    kind: str
    shape: tuple[int, ...]
    data: np.ndarray = field(repr=False)  # float32, flat, row-major
    sn_sigma: float | None = None

    def array(self) -> np.ndarray:
        return self.data.reshape(self.shape).astype(np.float64)


@dataclass
class WeightManifest:
    arch_id: str
    records: list[LayerRecord]
    version: int = FORMAT_VERSION

    def by_name(self) -> dict[str, LayerRecord]:
        return {r.name: r for r in self.records}


def eca_kernel_size(channels: int, gamma: int = 2, b: int = 1) -> int:
    """Adaptive ECA kernel size: nearest odd to |log2(C)/gamma + b/gamma|."""
    t = int(abs(np.log2(channels) / gamma + b / gamma))
    k = t if t % 2 == 1 else t + 1
    return max(k, 1)


def layer_plan(spec: GeneratorSpec) -> list[tuple[str, str, tuple[int, ...]]]:
    """Ordered (name, kind, shape) sequence the arch_id implies."""

    def ch(i: int) -> int:
        return spec.base_channels << i

    def conv(name: str, cout: int, cin: int, k: int) -> list:
        return [(name, KIND_CONV2D, (cout, cin, k, k)), (f"{name}.bias", KIND_BIAS, (cout,))]

    def ecab(prefix: str, c: int) -> list:
        k = eca_kernel_size(c, spec.eca_gamma, spec.eca_b)
        return (
            conv(f"{prefix}.conv1", c, c, 3)
            + conv(f"{prefix}.conv2", c, c, 3)
            + [(f"{prefix}.eca", KIND_ECA, (k,))]
        )

    plan: list = []
    for i in range(spec.depth):
        cin = 3 if i == 0 else ch(i)
        plan += conv(f"enc{i}.conv", ch(i), cin, 3)
        plan += ecab(f"enc{i}.ecab", ch(i))
        plan += conv(f"down{i}.conv", ch(i + 1), ch(i), 3)
    plan += conv("bott.conv", ch(spec.depth), ch(spec.depth), 3)
    plan += ecab("bott.ecab", ch(spec.depth))
    for i in reversed(range(spec.depth)):
        plan += conv(f"up{i}.conv", ch(i), ch(i + 1), 3)
        plan += conv(f"dec{i}.conv", ch(i), 2 * ch(i), 3)
        plan += ecab(f"dec{i}.ecab", ch(i))
    plan += conv("head.conv", 3, ch(0), 1)
    return plan


# ---------------------------------------------------------------------------
# OTRE container serialization
# ---------------------------------------------------------------------------

def _write_str(buf: io.BytesIO, s: str) -> None:
    raw = s.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)


def _read_exact(f, n: int) -> bytes:
    raw = f.read(n)
    if len(raw) != n:
        raise CorruptData("unexpected end of weight file")
    return raw


def _read_str(f) -> str:
    (n,) = struct.unpack("<H", _read_exact(f, 2))
    return _read_exact(f, n).decode("utf-8")


def save_weights(manifest: WeightManifest, path) -> None:
    """Serialize a manifest to the OTRE container."""
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<H", manifest.version))
    _write_str(buf, manifest.arch_id)
    buf.write(struct.pack("<I", len(manifest.records)))
    for rec in manifest.records:
        _write_str(buf, rec.name)
        buf.write(struct.pack("<BB", _KIND_TO_BYTE[rec.kind], len(rec.shape)))
        buf.write(struct.pack(f"<{len(rec.shape)}I", *rec.shape))
        if rec.sn_sigma is None:
            buf.write(struct.pack("<B", 0))
        else:
            buf.write(struct.pack("<Bd", 1, float(rec.sn_sigma)))
        data = np.ascontiguousarray(rec.data, dtype="<f4")
        if data.size != int(np.prod(rec.shape)):
            raise ShapeMismatch(f"record {rec.name}: {data.size} values for shape {rec.shape}")
        buf.write(data.tobytes())
    Path(path).write_bytes(buf.getvalue())


def _read_manifest(path) -> WeightManifest:
    with open(path, "rb") as f:
        magic = _read_exact(f, 4)
        if magic != MAGIC:
            raise BadMagic(f"{path}: magic {magic!r}")
        (version,) = struct.unpack("<H", _read_exact(f, 2))
        if version != FORMAT_VERSION:
            raise VersionUnsupported(f"{path}: version {version}")
        arch_id = _read_str(f)
        (count,) = struct.unpack("<I", _read_exact(f, 4))
        records = []
        for _ in range(count):
            name = _read_str(f)
            kind_b, rank = struct.unpack("<BB", _read_exact(f, 2))
            if kind_b not in _BYTE_TO_KIND:
                raise CorruptData(f"{path}: unknown record kind {kind_b}")
            shape = struct.unpack(f"<{rank}I", _read_exact(f, 4 * rank))
            (flag,) = struct.unpack("<B", _read_exact(f, 1))
            sigma = None
            if flag == 1:
                (sigma,) = struct.unpack("<d", _read_exact(f, 8))
            elif flag != 0:
                raise CorruptData(f"{path}: bad sn flag {flag}")
            n = int(np.prod(shape)) if shape else 1
            data = np.frombuffer(_read_exact(f, 4 * n), dtype="<f4").copy()
            records.append(LayerRecord(name, _BYTE_TO_KIND[kind_b], tuple(shape), data, sigma))
        if f.read(1):
            raise CorruptData(f"{path}: trailing bytes")
    return WeightManifest(arch_id=arch_id, records=records, version=version)


def load_weights(path, verify_sn: bool = True, sn_tol: float = 1e-3):
    """Load and validate an OTRE file.

    Returns ``(GeneratorSpec, WeightManifest)``.  Validation: record sequence
    must match the arch_id's layer plan, all parameters finite, and (unless
    ``verify_sn`` is off) every conv kernel's power-iteration spectral norm
    must not exceed 1 + ``sn_tol``.
    """
    manifest = _read_manifest(path)
    spec = GeneratorSpec.from_arch_id(manifest.arch_id)
    plan = layer_plan(spec)
    if len(plan) != len(manifest.records):
        raise ShapeMismatch(
            f"{path}: {len(manifest.records)} records, arch {manifest.arch_id} "
            f"implies {len(plan)}"
        )
    for rec, (name, kind, shape) in zip(manifest.records, plan):
        if rec.name != name or rec.kind != kind or tuple(rec.shape) != tuple(shape):
            raise ShapeMismatch(
                f"{path}: record {rec.name!r} ({rec.kind}, {rec.shape}) does not match "
                f"plan entry {name!r} ({kind}, {shape})"
            )
        if not np.all(np.isfinite(rec.data)):
            raise NonFiniteParam(rec.name)
        if rec.sn_sigma is not None and not rec.sn_sigma > 0:
            raise CorruptData(f"{path}: record {rec.name}: sn_sigma must be > 0")
        if verify_sn and rec.kind == KIND_CONV2D:
            sigma = verify_spectral_norm(rec.array())
            if sigma > 1.0 + sn_tol:
                raise LipschitzViolation(rec.name, sigma)
    return spec, manifest


def zero_manifest(spec: GeneratorSpec) -> WeightManifest:
    """All-zero weights; with residual output this generator is the identity."""
    records = [
        LayerRecord(name, kind, shape, np.zeros(int(np.prod(shape)), dtype=np.float32))
        for name, kind, shape in layer_plan(spec)
    ]
    return WeightManifest(arch_id=spec.arch_id, records=records)


def random_manifest(spec: GeneratorSpec, seed: int, scale: float = 0.2) -> WeightManifest:
    """Seeded random weights with every conv kernel SVD-normalized to sigma 1."""
    rng = np.random.default_rng(seed)
    records = []
    for name, kind, shape in layer_plan(spec):
        data = rng.normal(0.0, scale, int(np.prod(shape)))
        if kind == KIND_CONV2D:
            mat = data.reshape(shape[0], -1)
            sigma = np.linalg.svd(mat, compute_uv=False)[0]
            if sigma > 0:
                data = data / sigma
            rec_sigma = float(np.linalg.svd((data.reshape(shape[0], -1)), compute_uv=False)[0])
            records.append(LayerRecord(name, kind, shape, data.astype(np.float32), rec_sigma))
        elif kind == KIND_BIAS:
            records.append(
                LayerRecord(name, kind, shape, (data * 0.1).astype(np.float32))
            )
        else:
            records.append(LayerRecord(name, kind, shape, data.astype(np.float32)))
    return WeightManifest(arch_id=spec.arch_id, records=records)


# ---------------------------------------------------------------------------
# Primitive forward ops
# ---------------------------------------------------------------------------

def conv2d_forward(
    x: np.ndarray,
    kernel: np.ndarray,
    bias: np.ndarray | None = None,
    stride: int = 1,
    padding: int = 0,
) -> np.ndarray:
    """Cross-correlation of a (C_in, H, W) map with a (C_out, C_in, kh, kw) kernel."""
    x = np.asarray(x, dtype=np.float64)
    kernel = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv2d: input {x.shape}, kernel {kernel.shape}")
    cout, cin, kh, kw = kernel.shape
    if x.shape[0] != cin:
        raise ShapeMismatch(f"conv2d: {x.shape[0]} input channels, kernel expects {cin}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if padding:
        x = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    _, h, w = x.shape
    if h < kh or w < kw:
        raise ShapeMismatch(f"conv2d: padded input {h}x{w} smaller than kernel {kh}x{kw}")
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    win = win[:, ::stride, ::stride]  # (cin, oh, ow, kh, kw)
    out = np.tensordot(kernel, win, axes=([1, 2, 3], [0, 3, 4]))
    if bias is not None:
        bias = np.asarray(bias, dtype=np.float64)
        if bias.shape != (cout,):
            raise ShapeMismatch(f"conv2d: bias {bias.shape}, expected ({cout},)")
        out = out + bias[:, None, None]
    return out


def eca_forward(x: np.ndarray, kernel1d: np.ndarray) -> np.ndarray:
    """Efficient channel attention: pooled channels -> zero-padded 1-d conv
    across the channel axis -> sigmoid -> channel-wise rescale of the input."""
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(kernel1d, dtype=np.float64).ravel()
    if x.ndim != 3:
        raise ShapeMismatch(f"eca: expected (C,H,W), got {x.shape}")
    if k.size % 2 == 0:
        raise ShapeMismatch(f"eca: kernel length must be odd, got {k.size}")
    pooled = x.mean(axis=(1, 2))
    pad = (k.size - 1) // 2
    padded = np.pad(pooled, pad)
    scores = np.array([padded[i:i + k.size] @ k for i in range(x.shape[0])])
    attn = 1.0 / (1.0 + np.exp(-scores))
    return x * attn[:, None, None]


def leaky_relu(x: np.ndarray, slope: float = LEAKY_SLOPE) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def instance_norm(x: np.ndarray, eps: float = INSTANCE_NORM_EPS) -> np.ndarray:
    """Per-channel standardization over the spatial axes (no affine params)."""
    mu = x.mean(axis=(1, 2), keepdims=True)
    var = x.var(axis=(1, 2), keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def nearest_upsample2(x: np.ndarray) -> np.ndarray:
    return np.repeat(np.repeat(x, 2, axis=1), 2, axis=2)


def verify_spectral_norm(kernel: np.ndarray, tol: float = 1e-3, iters: int = 50) -> float:
    """Power-iteration estimate of the top singular value of a conv kernel.

    The kernel is reshaped to (out_channels, in_channels*kh*kw).  Block power
    iteration (subspace width 6) with a deterministic start block whose first
    column is the normalized all-ones vector; single-vector iteration stalls
    on clustered spectra and cannot reach the ``tol`` accuracy contract.
    Runs at least ``iters`` sweeps, then until the estimate is stable to well
    under ``tol``.  A zero kernel returns 0.
    """
    mat = np.asarray(kernel, dtype=np.float64).reshape(kernel.shape[0], -1)
    rows, n = mat.shape
    p = max(1, min(6, rows, n))
    basis = np.ones((n, p))
    idx = np.arange(n)
    for j in range(1, p):
        basis[:, j] = np.cos(np.pi * j * (idx + 0.5) / n)
    basis, _ = np.linalg.qr(basis)
    sigma = 0.0
    for k in range(200 * iters):
        z = mat.T @ (mat @ basis)
        basis, _ = np.linalg.qr(z)
        sigma_new = float(np.linalg.svd(mat @ basis, compute_uv=False)[0])
        if sigma_new == 0.0:
            return 0.0
        if k + 1 >= iters and abs(sigma_new - sigma) <= 1e-3 * tol * sigma_new:
            return sigma_new
        sigma = sigma_new
    return sigma


# ---------------------------------------------------------------------------
# Generator forward pass
# ---------------------------------------------------------------------------

class Generator:
    """Immutable (spec, weights) pair with a pure forward pass.

    Shareable across threads; also usable as a plain ``x -> G(x)`` callable,
    which is the handle shape the refinement solver expects.
    """

    def __init__(self, spec: GeneratorSpec, manifest: WeightManifest):
        if manifest.arch_id != spec.arch_id:
            raise ShapeMismatch(f"manifest arch {manifest.arch_id} != spec arch {spec.arch_id}")
        self.spec = spec
        self.manifest = manifest
        self._w = {r.name: r.array() for r in manifest.records}

    @classmethod
    def load(cls, path, verify_sn: bool = True, sn_tol: float = 1e-3) -> "Generator":
        spec, manifest = load_weights(path, verify_sn=verify_sn, sn_tol=sn_tol)
        return cls(spec, manifest)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)

    def _block(self, x, name, stride, trace):
        w, b = self._w[name], self._w[f"{name}.bias"]
        out = conv2d_forward(x, w, b, stride=stride, padding=(w.shape[-1] - 1) // 2)
        if trace is not None:
            trace.append(("conv", name, out))
        normed = instance_norm(out)
        if trace is not None:
            trace.append(("norm", name, out))
        return leaky_relu(normed)

    def _ecab(self, x, prefix, trace):
        w1, b1 = self._w[f"{prefix}.conv1"], self._w[f"{prefix}.conv1.bias"]
        w2, b2 = self._w[f"{prefix}.conv2"], self._w[f"{prefix}.conv2.bias"]
        t = conv2d_forward(x, w1, b1, stride=1, padding=1)
        if trace is not None:
            trace.append(("conv", f"{prefix}.conv1", t))
        t0 = t
        t = leaky_relu(instance_norm(t))
        if trace is not None:
            trace.append(("norm", f"{prefix}.conv1", t0))
        t = conv2d_forward(t, w2, b2, stride=1, padding=1)
        if trace is not None:
            trace.append(("conv", f"{prefix}.conv2", t))
        t1 = t
        t = instance_norm(t)
        if trace is not None:
            trace.append(("norm", f"{prefix}.conv2", t1))
        t = eca_forward(t, self._w[f"{prefix}.eca"])
        return x + t

    def forward(self, x: np.ndarray, _trace: list | None = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3 or x.shape[0] != 3:
            raise ShapeMismatch(f"generator: expected (3,H,W), got {x.shape}")
        side_div = 1 << self.spec.depth
        if x.shape[1] % side_div or x.shape[2] % side_div:
            raise ShapeMismatch(
                f"generator: spatial dims {x.shape[1:]} must be divisible by {side_div}"
            )
        h = x
        skips = []
        for i in range(self.spec.depth):
            h = self._block(h, f"enc{i}.conv", 1, _trace)
            h = self._ecab(h, f"enc{i}.ecab", _trace)
            skips.append(h)
            h = self._block(h, f"down{i}.conv", 2, _trace)
        h = self._block(h, "bott.conv", 1, _trace)
        h = self._ecab(h, "bott.ecab", _trace)
        for i in reversed(range(self.spec.depth)):
            h = nearest_upsample2(h)
            h = self._block(h, f"up{i}.conv", 1, _trace)
            h = np.concatenate([h, skips[i]], axis=0)
            h = self._block(h, f"dec{i}.conv", 1, _trace)
            h = self._ecab(h, f"dec{i}.ecab", _trace)
        delta = conv2d_forward(h, self._w["head.conv"], self._w["head.conv.bias"])
        raw = x + delta if self.spec.residual_output else delta
        return np.clip(raw, 0.0, 1.0)

    # -- diagnostics -------------------------------------------------------

    def conv_sigmas(self) -> dict[str, float]:
        return {
            r.name: verify_spectral_norm(r.array())
            for r in self.manifest.records
            if r.kind == KIND_CONV2D
        }

    def lipschitz_budget(self, x: np.ndarray) -> float:
        """Layer-wise product bound on the local Lipschitz constant at ``x``.

        Conv layers contribute their measured spectral norm, leaky-ReLU and
        the ECA rescale contribute at most 1, nearest upsampling contributes
        2, skip concatenations combine branch constants in quadrature, and
        the per-sample normalizations contribute their local gain
        1/sqrt(var + eps) (largest channel) captured from a forward pass at
        the probe point.  First-order bound: valid for small perturbations.
        """
        trace: list = []
        self.forward(x, _trace=trace)
        gains: dict[str, float] = {}
        for kind, name, arr in trace:
            if kind == "norm":
                var = arr.var(axis=(1, 2))
                gains[name] = float(np.max(1.0 / np.sqrt(var + INSTANCE_NORM_EPS)))
        sig = self.conv_sigmas()

        def block(name: str) -> float:
            return sig[name] * gains[name]

        def ecab(prefix: str) -> float:
            # residual: identity plus the conv1->conv2->eca branch
            branch = block(f"{prefix}.conv1") * block(f"{prefix}.conv2")
            return 1.0 + branch

        lip = 1.0
        skip_lips = []
        for i in range(self.spec.depth):
            lip *= block(f"enc{i}.conv")
            lip *= ecab(f"enc{i}.ecab")
            skip_lips.append(lip)
            lip *= block(f"down{i}.conv")
        lip *= block("bott.conv")
        lip *= ecab("bott.ecab")
        for i in reversed(range(self.spec.depth)):
            lip *= 2.0  # nearest upsample
            lip *= block(f"up{i}.conv")
            lip = float(np.hypot(lip, skip_lips[i]))
            lip *= block(f"dec{i}.conv")
            lip *= ecab(f"dec{i}.ecab")
        lip *= sig["head.conv"]
        if self.spec.residual_output:
            lip = 1.0 + lip
        return lip


def generator_forward(spec: GeneratorSpec, weights: WeightManifest, x: np.ndarray) -> np.ndarray:
    """One feed-forward enhancement pass; output has the input's shape, in [0,1]."""
    return Generator(spec, weights).forward(x)


GeneratorHandle = Callable[[np.ndarray], np.ndarray]
