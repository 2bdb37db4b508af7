"""Single optimization steps: the three-phase alternation.

Every step runs up to three sub-updates in a fixed order:

1. generator update   - translation nets; of the coupled terms, only those
                        with a gradient path into the generator are put on
                        the graph (teacher-on-pseudo segmentation and the
                        hint loss; the real-teacher and student-on-real
                        terms are constants w.r.t. generator weights)
2. discriminator update
3. segmentor update   - hint (gated by its weight) plus the segmentation
                        terms: real-teacher (labeled cases only),
                        pseudo-teacher, student

Pseudo images used by phases 2 and 3 are the (detached) outputs of the
pre-update generator. Non-finite loss components abort the step by raising
``TrainingDiverged`` naming the component.
"""

from __future__ import annotations

import numpy as np
import torch

from .. import losses as L
from ..errors import TrainingDiverged
from ..i2inets import encode_decode
from .batches import UnpairedBatch
from .config import TrainConfig, HINT_MODES
from .system import CmedlSystem


class ImageBuffer:
    """Pool of past fake images for discriminator updates (optional)."""

    def __init__(self, size: int, seed: int = 0):
        self.size = size
        self.images: list[torch.Tensor] = []
        self.rng = np.random.default_rng(seed)

    def query(self, batch: torch.Tensor) -> torch.Tensor:
        out = []
        for img in batch.detach():
            img = img[None]
            if len(self.images) < self.size:
                self.images.append(img)
                out.append(img)
            elif self.rng.uniform() > 0.5:
                i = int(self.rng.integers(self.size))
                out.append(self.images[i])
                self.images[i] = img
            else:
                out.append(img)
        return torch.cat(out)


def _finite(name: str, value: torch.Tensor) -> torch.Tensor:
    if not torch.isfinite(value):
        raise TrainingDiverged(name, float(value))
    return value


def _val(t) -> float:
    return float(t.detach()) if torch.is_tensor(t) else float(t)


def _mode_flags(cfg: TrainConfig) -> dict:
    return {
        "has_student": cfg.mode not in ("pmr_only_cycle", "pmr_only_drit"),
        "has_teacher": cfg.mode not in ("student_only", "concat_ct_pmr", "weighted_ct_pmr"),
        "couples_seg_to_gen": cfg.mode in HINT_MODES | {"output_distill"},
        "uses_distill": cfg.mode == "output_distill",
        "fusion": {"concat_ct_pmr": "concat", "weighted_ct_pmr": "weighted"}.get(cfg.mode),
        "plus_pmr_aug": cfg.mode == "weak_teacher_cmedl_plus_pmr",
    }


def _gen_coupled_terms(system: CmedlSystem, batch: UnpairedBatch,
                       pseudo_teacher: torch.Tensor, flags: dict) -> dict:
    """Hint + pseudo-teacher segmentation, on the generator's graph."""
    parts: dict[str, torch.Tensor] = {}
    teacher_out = system.nets["seg_teacher"](pseudo_teacher)
    parts["seg"] = _finite("seg_pm", L.segmentation_loss(
        teacher_out.probabilities, batch.student_masks))
    if flags["has_student"] and not flags["uses_distill"] \
            and system.config.mode in HINT_MODES:
        with torch.no_grad():
            student_hints = system.nets["seg_student"](batch.student_images).hints
        parts["hint"] = _finite("hint", L.hint_loss(student_hints, teacher_out.hints))
    return parts


def _seg_and_hint_terms(system: CmedlSystem, batch: UnpairedBatch,
                        pseudo_teacher: torch.Tensor | None, flags: dict) -> dict:
    """Hint/distill and the full segmentation terms (segmentor phase)."""
    cfg = system.config
    parts: dict[str, torch.Tensor] = {}
    seg_terms = []
    teacher_out_pseudo = None
    if flags["has_teacher"]:
        teacher_out_pseudo = system.nets["seg_teacher"](pseudo_teacher)
        parts["seg_pm"] = _finite("seg_pm", L.segmentation_loss(
            teacher_out_pseudo.probabilities, batch.student_masks))
        seg_terms.append(parts["seg_pm"])
        if bool(batch.teacher_labeled.any()):
            sel = batch.teacher_labeled
            teacher_out_real = system.nets["seg_teacher"](batch.teacher_images[sel])
            parts["seg_rm"] = _finite("seg_rm", L.segmentation_loss(
                teacher_out_real.probabilities, batch.teacher_masks[sel]))
            seg_terms.append(parts["seg_rm"])
    student_out = None
    if flags["has_student"]:
        if flags["fusion"] == "concat":
            student_out = system.nets["seg_student"](
                torch.cat([batch.student_images, pseudo_teacher], dim=1))
        elif flags["fusion"] == "weighted":
            student_out, alpha = L.weighted_fusion_forward(
                system.nets["alpha_net"], batch.student_images, pseudo_teacher,
                system.nets["seg_student"])
            parts["alpha"] = alpha.mean()
        else:
            student_out = system.nets["seg_student"](batch.student_images)
        parts["seg_ct"] = _finite("seg_ct", L.segmentation_loss(
            student_out.probabilities, batch.student_masks))
        seg_terms.append(parts["seg_ct"])
        if flags["plus_pmr_aug"]:
            aug_out = system.nets["seg_student"](pseudo_teacher)
            parts["seg_ct_pseudo"] = _finite("seg_ct_pseudo", L.segmentation_loss(
                aug_out.probabilities, batch.student_masks))
            seg_terms.append(parts["seg_ct_pseudo"])
    parts["seg"] = _finite("seg", sum(seg_terms[1:], seg_terms[0])) if seg_terms \
        else torch.zeros(())

    if flags["has_student"] and flags["has_teacher"]:
        if flags["uses_distill"]:
            parts["hint"] = _finite("distill", L.output_distillation_loss(
                student_out.logits, teacher_out_pseudo.logits, cfg.distill_temperature))
        elif cfg.mode in HINT_MODES:
            teacher_hints = teacher_out_pseudo.hints
            if cfg.hint_stop_teacher:
                teacher_hints = [h.detach() for h in teacher_hints]
            parts["hint"] = _finite("hint", L.hint_loss(student_out.hints, teacher_hints))
    return parts


def _segmentor_phase(system: CmedlSystem, batch: UnpairedBatch,
                     pseudo_teacher: torch.Tensor | None, flags: dict,
                     log: dict) -> None:
    if "seg" not in system.optimizers:
        return
    w = system.config.weights
    system.zero_grad()
    parts = _seg_and_hint_terms(system, batch, pseudo_teacher, flags)
    loss = parts["seg"]
    if "hint" in parts:
        loss = loss + w.hint * parts["hint"]
    _finite("total_seg", loss).backward()
    system.optimizers["seg"].step()
    log.update({k: _val(v) for k, v in parts.items()})
    log["total_seg"] = _val(loss)
    if flags["plus_pmr_aug"]:
        log["student_samples_seen"] = 2 * batch.student_images.shape[0]
    elif flags["has_student"]:
        log["student_samples_seen"] = batch.student_images.shape[0]


def train_step_cmedl(system: CmedlSystem, batch: UnpairedBatch,
                     buffers: dict | None = None) -> dict[str, float]:
    """One three-phase step for the cycle-translation family of modes."""
    cfg = system.config
    w = cfg.weights
    flags = _mode_flags(cfg)
    log: dict[str, float] = {}
    x_s, x_t = batch.student_images, batch.teacher_images

    if system.cycle is None:  # student_only: segmentor phase only
        _segmentor_phase(system, batch, None, flags, log)
        _log_weights(log, w)
        return log

    gens = system.cycle

    # phase 1: generator update
    system.zero_grad()
    pseudo_t = gens.gen_s2t(x_s)
    pseudo_s = gens.gen_t2s(x_t)
    parts = {
        "adv": _finite("adv", L.adversarial_loss(gens.disc_teacher, x_t, pseudo_t, "generator")
                       + L.adversarial_loss(gens.disc_student, x_s, pseudo_s, "generator")),
    }
    if w.cycle > 0:
        parts["cycle"] = _finite("cycle", L.cycle_loss(
            gens.gen_s2t, gens.gen_t2s, x_s, x_t, pseudo_t, pseudo_s))
    if w.context > 0 and system.extractor is not None:
        parts["context"] = _finite("context", L.contextual_loss(system.extractor, pseudo_t, x_t))
    if flags["couples_seg_to_gen"]:
        parts.update(_gen_coupled_terms(system, batch, pseudo_t, flags))
    total_gen = _finite("total_gen", L.total_loss_cyclegan(parts, w))
    total_gen.backward()
    system.optimizers["gen"].step()
    log.update({f"{k}_genphase": _val(v) for k, v in parts.items()})
    log["total_gen"] = _val(total_gen)

    # phase 2: discriminator update
    system.zero_grad()
    fake_t, fake_s = pseudo_t.detach(), pseudo_s.detach()
    if buffers is not None:
        fake_t = buffers["teacher"].query(fake_t)
        fake_s = buffers["student"].query(fake_s)
    loss_disc = _finite("adv_disc", L.adversarial_loss(gens.disc_teacher, x_t, fake_t, "discriminator")
                        + L.adversarial_loss(gens.disc_student, x_s, fake_s, "discriminator"))
    loss_disc.backward()
    system.optimizers["disc"].step()
    log["adv_disc"] = _val(loss_disc)

    # phase 3: segmentor update
    _segmentor_phase(system, batch, pseudo_t.detach(), flags, log)
    _log_weights(log, w)
    return log


def train_step_drit(system: CmedlSystem, batch: UnpairedBatch) -> dict[str, float]:
    """One three-phase step for the disentangled-translation modes."""
    cfg = system.config
    w = cfg.weights
    flags = _mode_flags(cfg)
    log: dict[str, float] = {}
    nets = system.drit
    x_s, x_t = batch.student_images, batch.teacher_images

    # phase 1: encoders + generators
    system.zero_grad()
    ed = encode_decode(nets, x_s, x_t)
    pseudo_t = nets.gen_t(ed.content_s, ed.style_t[2])   # student content, teacher style
    parts = {
        "adv": _finite("adv", L.drit_adversarial_loss(
            nets.disc_student, x_s, ed.xhat_s, ed.fake_s_random, "generator")
            + L.drit_adversarial_loss(nets.disc_teacher, x_t, ed.xhat_t, ed.fake_t_random,
                                      "generator")),
        "content_adv": _finite("content_adv", L.content_adversarial_loss(
            nets.disc_content, [ed.content_s, ed.content_s_cross],
            [ed.content_t, ed.content_t_cross], "generator")),
        "vae": _finite("vae", L.vae_loss([ed.style_s, ed.style_t],
                                         [ed.xhat_s, ed.xhat_t], [x_s, x_t])),
        "code_recon": _finite("code_recon", L.content_reconstruction_loss(
            nets.content_enc_s, nets.content_enc_t, x_s, ed.xhat_s, x_t, ed.xhat_t)),
        "latent_reg": _finite("latent_reg", L.latent_regression_loss(
            [(nets.style_enc_s, nets.gen_s, ed.content_s, ed.z_random_s),
             (nets.style_enc_t, nets.gen_t, ed.content_t, ed.z_random_t)])),
    }
    if flags["couples_seg_to_gen"]:
        parts.update(_gen_coupled_terms(system, batch, pseudo_t, flags))
    total_gen = _finite("total_gen", L.total_loss_drit(parts, w))
    total_gen.backward()
    system.optimizers["gen"].step()
    log.update({f"{k}_genphase": _val(v) for k, v in parts.items()})
    log["total_gen"] = _val(total_gen)

    # phase 2: image + content discriminators
    system.zero_grad()
    loss_disc = _finite("adv_disc", L.drit_adversarial_loss(
        nets.disc_student, x_s, ed.xhat_s.detach(), ed.fake_s_random.detach(), "discriminator")
        + L.drit_adversarial_loss(nets.disc_teacher, x_t, ed.xhat_t.detach(),
                                  ed.fake_t_random.detach(), "discriminator"))
    loss_dc = _finite("content_adv_disc", L.content_adversarial_loss(
        nets.disc_content, [ed.content_s, ed.content_s_cross],
        [ed.content_t, ed.content_t_cross], "discriminator"))
    (loss_disc + loss_dc).backward()
    system.optimizers["disc"].step()
    log["adv_disc"] = _val(loss_disc)
    log["content_adv_disc"] = _val(loss_dc)

    # phase 3: segmentors
    _segmentor_phase(system, batch, pseudo_t.detach(), flags, log)
    _log_weights(log, w)
    return log


def train_step(system: CmedlSystem, batch: UnpairedBatch,
               buffers: dict | None = None) -> dict[str, float]:
    if system.drit is not None:
        return train_step_drit(system, batch)
    return train_step_cmedl(system, batch, buffers=buffers)


def generator_objective(system: CmedlSystem, batch: UnpairedBatch) -> float:
    """Full weighted generator objective (all coupled terms), no gradients.

    Used to verify that a generator update decreases its objective; the
    training phase itself only differentiates the generator-dependent terms.
    """
    cfg = system.config
    w = cfg.weights
    flags = _mode_flags(cfg)
    with torch.no_grad():
        if system.cycle is not None:
            gens = system.cycle
            x_s, x_t = batch.student_images, batch.teacher_images
            pseudo_t = gens.gen_s2t(x_s)
            pseudo_s = gens.gen_t2s(x_t)
            parts = {"adv": L.adversarial_loss(gens.disc_teacher, x_t, pseudo_t, "generator")
                     + L.adversarial_loss(gens.disc_student, x_s, pseudo_s, "generator")}
            if w.cycle > 0:
                parts["cycle"] = L.cycle_loss(gens.gen_s2t, gens.gen_t2s, x_s, x_t,
                                              pseudo_t, pseudo_s)
            if w.context > 0 and system.extractor is not None:
                parts["context"] = L.contextual_loss(system.extractor, pseudo_t, x_t)
            if flags["couples_seg_to_gen"]:
                full = _seg_and_hint_terms(system, batch, pseudo_t, flags)
                parts["seg"] = full["seg"]
                if "hint" in full:
                    parts["hint"] = full["hint"]
            return float(L.total_loss_cyclegan(parts, w))

        nets = system.drit
        x_s, x_t = batch.student_images, batch.teacher_images
        ed = encode_decode(nets, x_s, x_t)
        pseudo_t = nets.gen_t(ed.content_s, ed.style_t[2])
        parts = {
            "adv": L.drit_adversarial_loss(nets.disc_student, x_s, ed.xhat_s,
                                           ed.fake_s_random, "generator")
            + L.drit_adversarial_loss(nets.disc_teacher, x_t, ed.xhat_t,
                                      ed.fake_t_random, "generator"),
            "content_adv": L.content_adversarial_loss(
                nets.disc_content, [ed.content_s, ed.content_s_cross],
                [ed.content_t, ed.content_t_cross], "generator"),
            "vae": L.vae_loss([ed.style_s, ed.style_t], [ed.xhat_s, ed.xhat_t],
                              [x_s, x_t]),
            "code_recon": L.content_reconstruction_loss(
                nets.content_enc_s, nets.content_enc_t, x_s, ed.xhat_s, x_t, ed.xhat_t),
            "latent_reg": L.latent_regression_loss(
                [(nets.style_enc_s, nets.gen_s, ed.content_s, ed.z_random_s),
                 (nets.style_enc_t, nets.gen_t, ed.content_t, ed.z_random_t)]),
        }
        if flags["couples_seg_to_gen"]:
            full = _seg_and_hint_terms(system, batch, pseudo_t, flags)
            parts["seg"] = full["seg"]
            if "hint" in full:
                parts["hint"] = full["hint"]
        return float(L.total_loss_drit(parts, w))


def _log_weights(log: dict, w: L.LossWeights) -> None:
    for name, value in w.as_dict().items():
        log[f"lambda_{name}"] = float(value)
