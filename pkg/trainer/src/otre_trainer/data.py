"""Dataset access and label-matched unpaired batch sampling."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import torch

from otre.degrade import DatasetManifest
from otre.imagekit import load_image, preprocess


class EmptyDomain(Exception):
    pass


class GradeMismatch(Exception):
    """Label matching requested but the high domain cannot cover a grade."""


@dataclass
class BatchPair:
    """Unpaired batch with element-wise matched grades (when labelled)."""

    low: torch.Tensor   # (B, 3, S, S)
    high: torch.Tensor  # (B, 3, S, S)
    grades: list | None = None        # low-side grades
    high_grades: list | None = None

    def assert_grade_match(self) -> None:
        if sorted(self.grades) != sorted(self.high_grades):
            raise GradeMismatch(
                f"batch grade multisets differ: {self.grades} vs {self.high_grades}"
            )


class ImageStore:
    """Manifest-backed image access, preprocessed to a fixed side."""

    def __init__(self, manifest: DatasetManifest, side: int):
        if not manifest.entries:
            raise EmptyDomain("manifest has no entries")
        self.entries = manifest.entries
        self.side = side
        self._get = lru_cache(maxsize=1024)(self._load)

    @staticmethod
    def open(path, side: int) -> "ImageStore":
        return ImageStore(DatasetManifest.load(Path(path)), side)

    def _load(self, idx: int) -> torch.Tensor:
        img = load_image(self.entries[idx].path)
        if img.shape[0] == 1:
            img = np.repeat(img, 3, axis=0)
        img = preprocess(img, self.side)
        return torch.from_numpy(img.astype(np.float32))

    def __len__(self):
        return len(self.entries)

    def tensor(self, idx: int) -> torch.Tensor:
        return self._get(idx)

    def grades(self) -> list:
        return [e.grade for e in self.entries]

    def fully_graded(self) -> bool:
        return all(e.grade is not None for e in self.entries)


class PairSampler:
    """Epoch iterator over unpaired (low, high) batches.

    With label matching on, each low image is paired with a randomly chosen
    high image of the same grade, so grade multisets match element-wise; the
    match is asserted on every batch.
    """

    def __init__(self, low: ImageStore, high: ImageStore, batch: int,
                 seed: int, label_matched: bool | None = None):
        self.low, self.high, self.batch = low, high, batch
        self.rng = np.random.default_rng(seed)
        if label_matched is None:
            label_matched = low.fully_graded() and high.fully_graded()
        if label_matched:
            if not (low.fully_graded() and high.fully_graded()):
                raise GradeMismatch("label matching requested but grades are incomplete")
            self.by_grade = {}
            for i, g in enumerate(high.grades()):
                self.by_grade.setdefault(g, []).append(i)
            missing = set(low.grades()) - set(self.by_grade)
            if missing:
                raise GradeMismatch(f"high domain lacks grades {sorted(missing)}")
        self.label_matched = label_matched

    def steps_per_epoch(self) -> int:
        return max(1, len(self.low) // self.batch)

    def __iter__(self):
        order = self.rng.permutation(len(self.low))
        for step in range(self.steps_per_epoch()):
            low_idx = order[step * self.batch: (step + 1) * self.batch]
            if len(low_idx) < self.batch:
                extra = self.rng.integers(0, len(self.low), self.batch - len(low_idx))
                low_idx = np.concatenate([low_idx, extra])
            if self.label_matched:
                low_grades = [self.low.entries[i].grade for i in low_idx]
                high_idx = [
                    self.by_grade[g][self.rng.integers(0, len(self.by_grade[g]))]
                    for g in low_grades
                ]
                high_grades = [self.high.entries[i].grade for i in high_idx]
            else:
                high_idx = self.rng.integers(0, len(self.high), self.batch)
                low_grades = high_grades = None
            pair = BatchPair(
                low=torch.stack([self.low.tensor(int(i)) for i in low_idx]),
                high=torch.stack([self.high.tensor(int(i)) for i in high_idx]),
                grades=low_grades,
                high_grades=high_grades,
            )
            if self.label_matched:
                pair.assert_grade_match()
            yield pair
