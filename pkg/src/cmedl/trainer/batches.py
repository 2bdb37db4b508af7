"""Deterministic unpaired batch assembly.

Sample order, augmentation draws and the labeled-teacher subset are pure
functions of (seed, epoch, step), so data loading can run ahead of the
training loop and a resumed run sees exactly the batches the original
would have.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..data.augment import AugmentationPolicy, augment
from ..data.phantom import SplitData, Sample
from ..data.preprocess import clip_rescale

# stream tags for SeedSequence derivation
_ORDER_STUDENT, _ORDER_TEACHER, _AUG, _LABELS = 11, 12, 13, 14


@dataclass
class UnpairedBatch:
    student_images: torch.Tensor        # (B, 1, H, W), in (-1, 1)
    student_masks: torch.Tensor         # (B, H, W) int64
    teacher_images: torch.Tensor
    teacher_masks: torch.Tensor         # (B, H, W) int64; valid where labeled
    teacher_labeled: torch.Tensor       # (B,) bool


def labeled_teacher_ids(split: SplitData, fraction: float, seed: int) -> set[str]:
    ids = sorted(s.case_id for s in split.teacher)
    n_labeled = int(round(fraction * len(ids)))
    rng = np.random.default_rng(np.random.SeedSequence([seed, _LABELS]))
    picked = rng.permutation(len(ids))[:n_labeled]
    return {ids[i] for i in picked}


class BatchSchedule:
    def __init__(self, split: SplitData, batch_size: int, seed: int,
                 policy: AugmentationPolicy | None = None,
                 teacher_label_fraction: float = 1.0):
        if not split.student or not split.teacher:
            raise ValueError("split must contain both modalities")
        self.split = split
        self.batch_size = batch_size
        self.seed = seed
        self.policy = policy
        self.labeled_ids = labeled_teacher_ids(split, teacher_label_fraction, seed)

    @property
    def steps_per_epoch(self) -> int:
        return max(1, len(self.split.student) // self.batch_size)

    def _orders(self, epoch: int) -> tuple[np.ndarray, np.ndarray]:
        rng_s = np.random.default_rng(np.random.SeedSequence([self.seed, _ORDER_STUDENT, epoch]))
        rng_t = np.random.default_rng(np.random.SeedSequence([self.seed, _ORDER_TEACHER, epoch]))
        order_s = rng_s.permutation(len(self.split.student))
        n_needed = self.steps_per_epoch * self.batch_size
        order_t = np.concatenate([
            rng_t.permutation(len(self.split.teacher))
            for _ in range(n_needed // len(self.split.teacher) + 1)])[:n_needed]
        return order_s, order_t

    def batch(self, epoch: int, step: int) -> UnpairedBatch:
        order_s, order_t = self._orders(epoch)
        lo = step * self.batch_size
        idx_s = order_s[lo:lo + self.batch_size]
        idx_t = order_t[lo:lo + self.batch_size]
        students = [self.split.student[i] for i in idx_s]
        teachers = [self.split.teacher[i] for i in idx_t]
        if self.policy is not None and self.policy.enabled:
            students = [self._augment(s, epoch, step, 2 * k) for k, s in enumerate(students)]
            teachers = [self._augment(t, epoch, step, 2 * k + 1) for k, t in enumerate(teachers)]
        return UnpairedBatch(
            student_images=_stack_images(students),
            student_masks=_stack_masks(students),
            teacher_images=_stack_images(teachers),
            teacher_masks=_stack_masks(teachers),
            teacher_labeled=torch.tensor([t.case_id in self.labeled_ids for t in teachers]),
        )

    def _augment(self, sample: Sample, epoch: int, step: int, k: int) -> Sample:
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, _AUG, epoch, step, k]))
        return augment(sample, self.policy, rng)


def _stack_images(samples: list[Sample], clip=(0.0, 1.0)) -> torch.Tensor:
    arrs = [clip_rescale(s.image, *clip) for s in samples]
    return torch.from_numpy(np.stack(arrs)[:, None]).float()


def _stack_masks(samples: list[Sample]) -> torch.Tensor:
    return torch.from_numpy(np.stack([s.mask for s in samples])).long()


def samples_to_tensors(samples: list[Sample],
                       clip=(0.0, 1.0)) -> tuple[torch.Tensor, torch.Tensor]:
    return _stack_images(samples, clip), _stack_masks(samples)
