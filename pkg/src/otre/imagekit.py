"""Image I/O, preprocessing and similarity metrics (PSNR / SSIM / MS-SSIM).

Images are plain numpy arrays of shape (channels, height, width) with values
in [0, 1] (float64).  MS-SSIM comes with an analytic gradient with respect to
its first argument, obtained as the exact adjoint of the forward computation;
it is the data-fidelity term of the refinement solver and the consistency cost
of the trainer.

Conventions (pinned so tests can rely on them):
  * 11x11 Gaussian window, sigma 1.5, K1=0.01, K2=0.03, dynamic range 1.0;
  * 5 scale exponents (0.0448, 0.2856, 0.3001, 0.2363, 0.1333);
  * valid-region window convolution (the SSIM map is smaller than the image);
  * 2x2 mean pooling between scales (odd trailing row/col dropped);
  * the window is shrunk to the largest odd size that fits at coarse scales;
  * colour images are scored per channel and averaged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    CorruptData,
    MissingFile,
    ShapeMismatch,
    TooSmall,
    UnsupportedFormat,
)

# An image is a (C, H, W) float64 array, C in {1, 3}, values in [0, 1].
ImageTensor = np.ndarray

# The published 5-scale exponents sum to 1.0001; normalize so the weights sum
# to exactly 1 (the product composition is scale-invariant up to this rounding).
_RAW_SCALE_WEIGHTS = np.array((0.0448, 0.2856, 0.3001, 0.2363, 0.1333))

#: Canonical 5-scale MS-SSIM exponents, normalized to sum to 1.
MSSSIM_SCALE_WEIGHTS = tuple(float(v) for v in _RAW_SCALE_WEIGHTS / _RAW_SCALE_WEIGHTS.sum())

_RASTER_SUFFIXES = {".png", ".jpg", ".jpeg"}


def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Check the (C, H, W) layout, channel count, finiteness and value range."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] not in (1, 3):
        raise ShapeMismatch(f"{name}: expected (C,H,W) with C in {{1,3}}, got {img.shape}")
    if not np.all(np.isfinite(img)):
        raise CorruptData(f"{name}: non-finite values")
    if img.min() < 0.0 or img.max() > 1.0:
        raise CorruptData(f"{name}: values outside [0,1]")
    return img


@dataclass(frozen=True)
class SsimParams:
    """SSIM / MS-SSIM constants.

    ``scale_weights`` are the per-scale exponents; their length sets the number
    of scales and they must sum to 1.
    """

    window_size: int = 11
    window_sigma: float = 1.5
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 1.0
    scale_weights: tuple[float, ...] = MSSSIM_SCALE_WEIGHTS

    def __post_init__(self):
        if self.window_size < 3 or self.window_size % 2 == 0:
            raise ValueError(f"window_size must be odd and >= 3, got {self.window_size}")
        w = np.asarray(self.scale_weights, dtype=np.float64)
        if w.size == 0 or np.any(w <= 0):
            raise ValueError("scale_weights must be non-empty and positive")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"scale_weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "scale_weights", tuple(float(v) for v in w))

    def truncated_for(self, height: int, width: int) -> "SsimParams":
        """Largest feasible scale prefix for this image size, renormalized.

        An S-scale evaluation needs min(height, width) >= 2**S so that every
        halving leaves at least a 2x2 image.
        """
        feasible = max(1, int(math.floor(math.log2(min(height, width)))))
        n = min(len(self.scale_weights), feasible)
        if n == len(self.scale_weights):
            return self
        w = np.asarray(self.scale_weights[:n])
        return SsimParams(
            window_size=self.window_size,
            window_sigma=self.window_sigma,
            k1=self.k1,
            k2=self.k2,
            dynamic_range=self.dynamic_range,
            scale_weights=tuple(w / w.sum()),
        )


@dataclass
class MsSsimResult:
    """MS-SSIM value and its gradient with respect to the first argument."""

    value: float
    grad: np.ndarray = field(repr=False)


# ---------------------------------------------------------------------------
# I/O and preprocessing
# ---------------------------------------------------------------------------

def load_image(path) -> ImageTensor:
    """Load a PNG/JPEG file as a (C, H, W) float64 array in [0, 1].

    8-bit value v maps to v/255 (16-bit to v/65535).  Palette/alpha images are
    converted to RGB.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFile(str(path))
    if path.suffix.lower() not in _RASTER_SUFFIXES:
        raise UnsupportedFormat(f"{path}: expected one of {sorted(_RASTER_SUFFIXES)}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode == "L":
                arr = np.asarray(im, dtype=np.float64) / 255.0
                return arr[None, :, :]
            if im.mode in ("I", "I;16"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
                return np.clip(arr, 0.0, 1.0)[None, :, :]
            if im.mode != "RGB":
                im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except UnidentifiedImageError as e:
        raise CorruptData(f"{path}: {e}") from e
    except OSError as e:
        raise CorruptData(f"{path}: {e}") from e
    return arr.transpose(2, 0, 1)


def save_image(img: ImageTensor, path) -> None:
    """Quantize to 8 bit (round(v*255)) and write PNG or JPEG by extension."""
    img = validate_image(img)
    path = Path(path)
    if path.suffix.lower() not in _RASTER_SUFFIXES:
        raise UnsupportedFormat(f"{path}: expected one of {sorted(_RASTER_SUFFIXES)}")
    u8 = np.round(img * 255.0).astype(np.uint8)
    if u8.shape[0] == 1:
        pil = Image.fromarray(u8[0], mode="L")
    else:
        pil = Image.fromarray(u8.transpose(1, 2, 0), mode="RGB")
    pil.save(path)


def _bilinear_axis(img: np.ndarray, out_len: int, axis: int) -> np.ndarray:
    """Bilinear resample along one axis (half-pixel-centre convention)."""
    n = img.shape[axis]
    if out_len == n:
        return img
    src = (np.arange(out_len, dtype=np.float64) + 0.5) * (n / out_len) - 0.5
    src = np.clip(src, 0.0, n - 1.0)
    i0 = np.floor(src).astype(np.int64)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    a = np.take(img, i0, axis=axis)
    b = np.take(img, i1, axis=axis)
    shape = [1] * img.ndim
    shape[axis] = out_len
    frac = frac.reshape(shape)
    return a * (1.0 - frac) + b * frac


def preprocess(img: ImageTensor, side: int = 256) -> ImageTensor:
    """Centre square crop (ties toward top-left) then bilinear resize.

    Idempotent on side x side inputs.
    """
    img = validate_image(img)
    if side < 1:
        raise ValueError(f"side must be positive, got {side}")
    _, h, w = img.shape
    crop = min(h, w)
    top = (h - crop) // 2
    left = (w - crop) // 2
    img = img[:, top:top + crop, left:left + crop]
    img = _bilinear_axis(img, side, axis=1)
    img = _bilinear_axis(img, side, axis=2)
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# PSNR
# ---------------------------------------------------------------------------

#: Reported PSNR when the two images are identical (zero MSE).
PSNR_CAP_DB = 99.0


def psnr(a: ImageTensor, b: ImageTensor, dynamic_range: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; zero MSE reports the 99 dB sentinel."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return 10.0 * math.log10(dynamic_range ** 2 / mse)


# ---------------------------------------------------------------------------
# Windowed statistics machinery
# ---------------------------------------------------------------------------

def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    """Normalized 1-d Gaussian kernel."""
    if size == 1:
        return np.ones(1, dtype=np.float64)
    coords = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def _corr1d_valid(x: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    """Valid cross-correlation with a short kernel along one axis."""
    k = g.shape[0]
    if k == 1:
        return x * g[0]
    n = x.shape[axis]
    out_len = n - k + 1
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(0, out_len)
    out = g[0] * x[tuple(sl)]
    for t in range(1, k):
        sl[axis] = slice(t, t + out_len)
        out = out + g[t] * x[tuple(sl)]
    return out


def _corr1d_valid_adjoint(u: np.ndarray, g: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of `_corr1d_valid`: full convolution of the cotangent with g."""
    k = g.shape[0]
    if k == 1:
        return u * g[0]
    pad = [(0, 0)] * u.ndim
    pad[axis] = (k - 1, k - 1)
    return _corr1d_valid(np.pad(u, pad), g[::-1], axis)


def _window_valid(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Separable valid correlation over the last two axes."""
    return _corr1d_valid(_corr1d_valid(x, g, -2), g, -1)


def _window_valid_adjoint(u: np.ndarray, g: np.ndarray) -> np.ndarray:
    return _corr1d_valid_adjoint(_corr1d_valid_adjoint(u, g, -2), g, -1)


def _pool2(x: np.ndarray) -> np.ndarray:
    """2x2 mean pooling; odd trailing row/column is dropped."""
    h, w = x.shape[-2] // 2, x.shape[-1] // 2
    x = x[..., : 2 * h, : 2 * w]
    shape = x.shape[:-2] + (h, 2, w, 2)
    return x.reshape(shape).mean(axis=(-3, -1))


def _pool2_adjoint(u: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Adjoint of `_pool2` back to an image of spatial shape ``out_shape``."""
    h, w = u.shape[-2], u.shape[-1]
    full = np.zeros(u.shape[:-2] + out_shape, dtype=u.dtype)
    spread = np.repeat(np.repeat(u, 2, axis=-2), 2, axis=-1) * 0.25
    full[..., : 2 * h, : 2 * w] = spread
    return full


def _fit_window(p: SsimParams, h: int, w: int) -> np.ndarray:
    """Window for a given scale, shrunk to the largest odd size that fits."""
    size = min(p.window_size, h, w)
    if size % 2 == 0:
        size -= 1
    return _gaussian_window(size, p.window_sigma)


class _ScaleStats:
    """Windowed statistics of one channel pair at one scale, with adjoint.

    Caches everything the backward pass needs; `grad_first` maps cotangents on
    the cs/luminance map means back to the first image plane.
    """

    def __init__(self, x: np.ndarray, y: np.ndarray, p: SsimParams):
        self.x, self.y = x, y
        self.g = _fit_window(p, x.shape[-2], x.shape[-1])
        self.c1 = (p.k1 * p.dynamic_range) ** 2
        self.c2 = (p.k2 * p.dynamic_range) ** 2
        self.mu_x = _window_valid(x, self.g)
        self.mu_y = _window_valid(y, self.g)
        self.sxx = _window_valid(x * x, self.g) - self.mu_x ** 2
        self.syy = _window_valid(y * y, self.g) - self.mu_y ** 2
        self.sxy = _window_valid(x * y, self.g) - self.mu_x * self.mu_y
        self.a1 = 2.0 * self.mu_x * self.mu_y + self.c1
        self.b1 = self.mu_x ** 2 + self.mu_y ** 2 + self.c1
        self.a2 = 2.0 * self.sxy + self.c2
        self.b2 = self.sxx + self.syy + self.c2
        self.l_map = self.a1 / self.b1
        self.cs_map = self.a2 / self.b2
        self.npix = self.l_map.size

    def cs_mean(self) -> float:
        return float(self.cs_map.mean())

    def l_mean(self) -> float:
        return float(self.l_map.mean())

    def ssim_mean(self) -> float:
        return float((self.l_map * self.cs_map).mean())

    def grad_first(self, g_cs_mean: float, g_l_mean: float) -> np.ndarray:
        """d(g_cs_mean*cs_mean + g_l_mean*l_mean)/dx for this scale."""
        g_cs = np.full_like(self.cs_map, g_cs_mean / self.npix)
        g_l = np.full_like(self.l_map, g_l_mean / self.npix)
        # cs = a2/b2 and l = a1/b1; only mu_x, sxx, sxy depend on x.
        g_sxy = g_cs * (2.0 / self.b2)
        g_sxx = g_cs * (-self.a2 / self.b2 ** 2)
        g_mux = g_l * (2.0 * self.mu_y * self.b1 - 2.0 * self.mu_x * self.a1) / self.b1 ** 2
        g_mux = g_mux - 2.0 * self.mu_x * g_sxx - self.mu_y * g_sxy
        out = _window_valid_adjoint(g_mux, self.g)
        out += 2.0 * self.x * _window_valid_adjoint(g_sxx, self.g)
        out += self.y * _window_valid_adjoint(g_sxy, self.g)
        return out


# ---------------------------------------------------------------------------
# SSIM / MS-SSIM
# ---------------------------------------------------------------------------

def ssim(a: ImageTensor, b: ImageTensor, p: SsimParams | None = None) -> float:
    """Single-scale SSIM: mean of the Gaussian-windowed map, channels averaged."""
    p = p or SsimParams()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[None], b[None]
    _, h, w = a.shape
    if min(h, w) < p.window_size:
        raise TooSmall(f"ssim: image {h}x{w} smaller than {p.window_size}x{p.window_size} window")
    vals = [_ScaleStats(a[c], b[c], p).ssim_mean() for c in range(a.shape[0])]
    return float(np.mean(vals))


def ms_ssim_with_grad(a: ImageTensor, b: ImageTensor, p: SsimParams | None = None) -> MsSsimResult:
    """Multi-scale SSIM of ``a`` against ``b`` plus d(value)/d(a).

    Contrast/structure enters at every scale, luminance only at the coarsest;
    per-scale map means are combined with the exponent weights and channels
    are averaged.  The gradient is the exact adjoint of this computation.
    """
    p = p or SsimParams()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"ms_ssim: {a.shape} vs {b.shape}")
    squeeze = a.ndim == 2
    if squeeze:
        a, b = a[None], b[None]
    nch, h, w = a.shape
    nscales = len(p.scale_weights)
    if min(h, w) < 2 ** nscales:
        raise TooSmall(
            f"ms_ssim: image {h}x{w} cannot support {nscales} scales "
            f"(needs min side >= {2 ** nscales}); truncate the scale list"
        )
    weights = p.scale_weights
    value = 0.0
    grad = np.zeros_like(a)
    for c in range(nch):
        stats: list[_ScaleStats] = []
        x, y = a[c], b[c]
        for s in range(nscales):
            st = _ScaleStats(x, y, p)
            stats.append(st)
            if s < nscales - 1:
                x, y = _pool2(x), _pool2(y)
        cs_means = np.array([st.cs_mean() for st in stats])
        l_mean = stats[-1].l_mean()
        if np.any(cs_means <= 0.0) or l_mean <= 0.0:
            # Fractional powers of non-positive terms are undefined; such pairs
            # are treated as fully dissimilar with a zero (sub)gradient.
            continue
        prod = float(l_mean ** weights[-1] * np.prod(cs_means ** np.array(weights)))
        value += prod / nch
        # Backpropagate through the weighted product, then scale by scale.
        g_cs = [(prod / nch) * weights[s] / cs_means[s] for s in range(nscales)]
        g_l = (prod / nch) * weights[-1] / l_mean
        g_x = stats[-1].grad_first(g_cs[-1], g_l)
        for s in range(nscales - 2, -1, -1):
            up = _pool2_adjoint(g_x, stats[s].x.shape[-2:])
            g_x = stats[s].grad_first(g_cs[s], 0.0) + up
        grad[c] = g_x
    if squeeze:
        grad = grad[0]
    return MsSsimResult(value=float(value), grad=grad)


def ms_ssim(a: ImageTensor, b: ImageTensor, p: SsimParams | None = None) -> float:
    """MS-SSIM value only (same computation as `ms_ssim_with_grad`)."""
    return ms_ssim_with_grad(a, b, p).value


def fidelity_loss(x: ImageTensor, y: ImageTensor, p: SsimParams | None = None) -> tuple[float, np.ndarray]:
    """Structural-dissimilarity loss 1 - MS-SSIM(x, y) and its gradient in x."""
    res = ms_ssim_with_grad(x, y, p)
    return 1.0 - res.value, -res.grad
