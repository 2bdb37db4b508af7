"""End-to-end training loop, validation, early stopping and inference.

Run directory layout::

    run_dir/
      config.json            resolved config, its hash, seed, warnings
      checkpoints/epoch_NNN.ckpt
      best.ckpt              lowest validation loss
      logs/losses.csv        one row per step: counters, components, weights
      logs/val_metrics.csv   one row per epoch
"""

from __future__ import annotations

import csv
import json
import math
import os
from pathlib import Path

import numpy as np
import torch

from .. import losses as L
from ..data.phantom import PhantomCorpus, Sample
from .batches import BatchSchedule, samples_to_tensors
from .config import TrainConfig, MODE_UPDATED_NETS
from .steps import train_step, ImageBuffer
from .system import CmedlSystem


class EarlyStopper:
    """Stop after more than ``patience`` consecutive non-improving epochs."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = math.inf
        self.epochs_since_best = 0

    def update(self, value: float) -> bool:
        if value < self.best:
            self.best = value
            self.epochs_since_best = 0
            return True
        self.epochs_since_best += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.epochs_since_best > self.patience


def infer_probabilities(system: CmedlSystem, images: torch.Tensor) -> torch.Tensor:
    """Mode-appropriate inference route; expects (B, 1, H, W) in (-1, 1)."""
    cfg = system.config
    system.eval_mode()
    with torch.no_grad():
        if cfg.mode in ("pmr_only_cycle", "pmr_cmedl"):
            pseudo = system.cycle.gen_s2t(images)
            return system.nets["seg_teacher"](pseudo).probabilities
        if cfg.mode == "pmr_only_drit":
            content = system.drit.content_enc_s(images)
            z = torch.zeros(images.shape[0], system.drit.style_dim, dtype=images.dtype)
            pseudo = system.drit.gen_t(content, z)
            return system.nets["seg_teacher"](pseudo).probabilities
        if cfg.mode == "concat_ct_pmr":
            pseudo = system.cycle.gen_s2t(images)
            return system.nets["seg_student"](torch.cat([images, pseudo], dim=1)).probabilities
        if cfg.mode == "weighted_ct_pmr":
            pseudo = system.cycle.gen_s2t(images)
            out, _alpha = L.weighted_fusion_forward(system.nets["alpha_net"], images,
                                                    pseudo, system.nets["seg_student"])
            return out.probabilities
        return system.nets["seg_student"](images).probabilities


def infer(checkpoint_or_system, images: torch.Tensor, device: str = "cpu"
          ) -> tuple[torch.Tensor, torch.Tensor]:
    """(argmax masks, probabilities) for a checkpoint path or a live system."""
    if isinstance(checkpoint_or_system, CmedlSystem):
        system = checkpoint_or_system
    else:
        system, _meta = CmedlSystem.load(checkpoint_or_system, device=device)
    probs = infer_probabilities(system, images)
    return probs.argmax(dim=1), probs


def validation_loss(system: CmedlSystem, samples: list[Sample],
                    chunk: int = 8) -> float:
    """Dice loss of the inference route, averaged over the split."""
    total, count = 0.0, 0
    for lo in range(0, len(samples), chunk):
        part = samples[lo:lo + chunk]
        images, masks = samples_to_tensors(part)
        probs = infer_probabilities(system, images)
        loss = L.segmentation_loss(probs, masks)
        total += float(loss) * len(part)
        count += len(part)
    return total / max(count, 1)


def _write_csv_row(writer_state: dict, path: Path, row: dict) -> None:
    if writer_state.get("header") is None:
        writer_state["header"] = list(row.keys())
        with open(path, "w", newline="") as fh:
            csv.writer(fh).writerow(writer_state["header"])
    header = writer_state["header"]
    with open(path, "a", newline="") as fh:
        csv.writer(fh).writerow([repr(row[k]) if isinstance(row.get(k), float)
                                 else row.get(k, "") for k in header])


def _check_updated_nets(system: CmedlSystem, before: dict, after: dict) -> None:
    changed = set()
    for key in before:
        if not np.array_equal(before[key], after[key]):
            changed.add(key.split(".", 1)[0])
    expected = MODE_UPDATED_NETS[system.config.mode] & set(system.nets)
    if changed != expected:
        raise AssertionError(
            f"mode {system.config.mode}: updated nets {sorted(changed)} != "
            f"documented {sorted(expected)}")


def train(config: TrainConfig, corpus: PhantomCorpus, out_dir, seed: int | None = None,
          resume_from=None) -> Path:
    config, warnings = config.normalized()
    seed = config.seeds[0] if seed is None else seed
    run_dir = Path(out_dir)
    (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
    (run_dir / "logs").mkdir(parents=True, exist_ok=True)
    lock_path = run_dir / "run.lock"
    lock_fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    os.write(lock_fd, str(os.getpid()).encode())
    os.close(lock_fd)
    try:
        return _train_locked(config, corpus, run_dir, seed, warnings, resume_from)
    finally:
        lock_path.unlink(missing_ok=True)


def _train_locked(config: TrainConfig, corpus: PhantomCorpus, run_dir: Path,
                  seed: int, warnings: list[str], resume_from) -> Path:
    for split in ("train", "val"):
        if split not in corpus.splits:
            raise ValueError(f"corpus is missing the {split!r} split")

    start_epoch = 0
    stopper = EarlyStopper(config.early_stop_patience)
    if resume_from is not None:
        # networks and objectives come from the checkpoint; loop control
        # (epoch budget, patience, cadence) from the caller
        system, meta = CmedlSystem.load(resume_from, device=config.device)
        loop_cfg = config
        config = system.config
        config.max_epochs = loop_cfg.max_epochs
        config.early_stop_patience = loop_cfg.early_stop_patience
        config.checkpoint_every = loop_cfg.checkpoint_every
        stopper = EarlyStopper(config.early_stop_patience)
        start_epoch = int(meta["epoch"]) + 1
        stopper.best = float(meta.get("best_val", math.inf))
        stopper.epochs_since_best = int(meta.get("epochs_since_best", 0))
        seed = system.seed
    else:
        system = CmedlSystem(config, seed=seed, device=config.device)

    (run_dir / "config.json").write_text(json.dumps(
        {"config": config.to_dict(), "config_hash": config.hash(), "seed": seed,
         "warnings": warnings}, indent=1, sort_keys=True))

    schedule = BatchSchedule(corpus.splits["train"], config.batch_size, seed,
                             policy=config.augmentation,
                             teacher_label_fraction=config.teacher_label_fraction)
    buffers = None
    if config.use_image_buffer:
        buffers = {"teacher": ImageBuffer(config.image_buffer_size, seed),
                   "student": ImageBuffer(config.image_buffer_size, seed + 1)}

    losses_csv: dict = {"header": None}
    val_csv: dict = {"header": None}
    best_path = run_dir / "best.ckpt"

    for epoch in range(start_epoch, config.max_epochs):
        system.train_mode()
        for step in range(schedule.steps_per_epoch):
            batch = schedule.batch(epoch, step)
            before = system.parameter_snapshot() if config.debug_grad_check else None
            components = train_step(system, batch, buffers=buffers)
            if config.debug_grad_check:
                _check_updated_nets(system, before, system.parameter_snapshot())
            row = {"step": epoch * schedule.steps_per_epoch + step, "epoch": epoch}
            row.update(components)
            _write_csv_row(losses_csv, run_dir / "logs" / "losses.csv", row)

        val = validation_loss(system, corpus.splits["val"].student)
        improved = stopper.update(val)
        meta = {"epoch": epoch, "best_val": stopper.best,
                "epochs_since_best": stopper.epochs_since_best, "val_loss": val}
        if config.checkpoint_every and (epoch % config.checkpoint_every == 0
                                        or epoch == config.max_epochs - 1):
            system.save(run_dir / "checkpoints" / f"epoch_{epoch:03d}.ckpt", meta)
        if improved:
            system.save(best_path, meta)
        _write_csv_row(val_csv, run_dir / "logs" / "val_metrics.csv",
                       {"epoch": epoch, "val_loss": val, "best_val": stopper.best,
                        "improved": int(improved)})
        if stopper.should_stop:
            break
    if not best_path.exists():  # no epoch improved on +inf is impossible; safety net
        system.save(best_path, {"epoch": config.max_epochs - 1, "best_val": stopper.best,
                                "epochs_since_best": stopper.epochs_since_best})
    return run_dir
