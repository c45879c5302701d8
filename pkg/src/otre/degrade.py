"""Seeded synthetic degradation of high-quality fundus images.

A four-factor approximation of the acquisition defects this pipeline targets:
photometric distortion (contrast/brightness), radial shading, defocus blur
and sensor noise, applied in that fixed order (photometric -> shading ->
blur -> noise) to mimic physical acquisition, then clamped to [0, 1].
The whole recipe is a pure function of (input, params) - the seed drives the
shading-centre jitter and the noise draw.

Also holds the dataset manifest plumbing shared with the trainer and CLI.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import MalformedLabels, MissingDir
from .imagekit import ImageTensor, validate_image

log = logging.getLogger(__name__)

#: Shading-mask centre jitter, as a fraction of the image side (per axis).
CENTER_JITTER_FRAC = 0.05

QUALITY_LABELS = ("good", "usable", "reject", "synthetic-low")


@dataclass(frozen=True)
class DegradeParams:
    blur_sigma: float = 0.0
    illum_strength: float = 0.0
    brightness_shift: float = 0.0
    contrast_scale: float = 1.0
    noise_std: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.blur_sigma < 0 or self.noise_std < 0:
            raise ValueError("blur_sigma and noise_std must be >= 0")
        if not 0.0 <= self.illum_strength <= 1.0:
            raise ValueError("illum_strength must be in [0,1]")
        if not -0.5 <= self.brightness_shift <= 0.5:
            raise ValueError("brightness_shift must be in [-0.5,0.5]")
        if not 0.0 < self.contrast_scale <= 2.0:
            raise ValueError("contrast_scale must be in (0,2]")

    @property
    def is_neutral(self) -> bool:
        return (
            self.blur_sigma == 0.0
            and self.illum_strength == 0.0
            and self.brightness_shift == 0.0
            and self.contrast_scale == 1.0
            and self.noise_std == 0.0
        )


def _gaussian_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(4.0 * sigma)))
    coords = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(coords ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


def _blur_reflect(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with reflect padding (hand-rolled so the golden
    checksum does not depend on any third-party filter implementation)."""
    k = _gaussian_kernel(sigma)
    r = (k.size - 1) // 2
    for axis in (1, 2):
        pad = [(0, 0)] * img.ndim
        pad[axis] = (r, r)
        padded = np.pad(img, pad, mode="reflect")
        out = np.zeros_like(img)
        n = img.shape[axis]
        sl = [slice(None)] * img.ndim
        for t in range(k.size):
            sl[axis] = slice(t, t + n)
            out += k[t] * padded[tuple(sl)]
        img = out
    return img


def degrade(x: ImageTensor, p: DegradeParams) -> ImageTensor:
    """Apply the seeded degradation recipe; neutral params return the input
    bitwise."""
    x = validate_image(x)
    if p.is_neutral:
        return x.copy()
    rng = np.random.default_rng(p.seed)
    out = x
    # photometric: contrast about mid-grey, then brightness shift
    if p.contrast_scale != 1.0 or p.brightness_shift != 0.0:
        out = np.clip(p.contrast_scale * (out - 0.5) + 0.5 + p.brightness_shift, 0.0, 1.0)
    # radial shading mask, centre jittered from the seed; the radius is
    # normalized by the farthest corner so the mask stays in [1-strength, 1]
    cy = (0.5 + rng.uniform(-CENTER_JITTER_FRAC, CENTER_JITTER_FRAC)) * (x.shape[1] - 1)
    cx = (0.5 + rng.uniform(-CENTER_JITTER_FRAC, CENTER_JITTER_FRAC)) * (x.shape[2] - 1)
    if p.illum_strength > 0.0:
        yy = np.arange(x.shape[1], dtype=np.float64)[:, None] - cy
        xx = np.arange(x.shape[2], dtype=np.float64)[None, :] - cx
        corners = [
            np.hypot(cy, cx),
            np.hypot(cy, x.shape[2] - 1 - cx),
            np.hypot(x.shape[1] - 1 - cy, cx),
            np.hypot(x.shape[1] - 1 - cy, x.shape[2] - 1 - cx),
        ]
        r2 = (yy ** 2 + xx ** 2) / max(corners) ** 2
        out = out * (1.0 - p.illum_strength * r2)[None, :, :]
    if p.blur_sigma > 0.0:
        out = _blur_reflect(out, p.blur_sigma)
    if p.noise_std > 0.0:
        out = out + rng.normal(0.0, p.noise_std, out.shape)
    return np.clip(out, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    path: str
    label: str = "good"
    grade: int | None = None
    clean_path: str | None = None


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def save(self, path) -> None:
        """Line-delimited JSON records (the format the trainer reads)."""
        with open(path, "w") as f:
            for e in self.entries:
                rec = {"path": e.path, "label": e.label}
                if e.grade is not None:
                    rec["grade"] = e.grade
                if e.clean_path is not None:
                    rec["clean_path"] = e.clean_path
                f.write(json.dumps(rec) + "\n")

    @staticmethod
    def load(path) -> "DatasetManifest":
        entries = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                entries.append(
                    ManifestEntry(
                        path=rec["path"],
                        label=rec.get("label", "good"),
                        grade=rec.get("grade"),
                        clean_path=rec.get("clean_path"),
                    )
                )
        return DatasetManifest(entries=entries)


def _read_labels(path) -> dict[str, int]:
    grades: dict[str, int] = {}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["filename", "grade"]:
            raise MalformedLabels(f"{path}: expected 'filename,grade' header")
        for i, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) < 2:
                raise MalformedLabels(f"{path}: line {i}: expected 'filename,grade'")
            name = row[0].strip()
            if name in grades:
                raise MalformedLabels(f"{path}: line {i}: duplicate filename {name!r}")
            try:
                grades[name] = int(row[1])
            except ValueError as e:
                raise MalformedLabels(f"{path}: line {i}: bad grade {row[1]!r}") from e
    return grades


def build_manifest(root, labels=None, label: str = "good") -> DatasetManifest:
    """Scan ``root`` for images, optionally joining grades from a labels CSV.

    Entries are sorted lexicographically by path; images missing from the CSV
    get no grade and a recorded warning.
    """
    root = Path(root)
    if not root.is_dir():
        raise MissingDir(str(root))
    grades = _read_labels(labels) if labels is not None else {}
    manifest = DatasetManifest()
    paths = sorted(
        p for p in root.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg")
    )
    for p in paths:
        grade = grades.get(p.name)
        if labels is not None and grade is None:
            msg = f"no grade for {p.name}"
            manifest.warnings.append(msg)
            log.warning("%s: %s", root, msg)
        manifest.entries.append(ManifestEntry(path=str(p), label=label, grade=grade))
    return manifest
