"""Training objectives: segmentation, hint, contextual, adversarial, cycle,
disentanglement (content-adversarial, content-reconstruction, VAE, latent
regression), output distillation, and the weighted modality fusion forward.

Conventions
-----------
* Discriminators emit logits; probabilities are clamped to [1e-7, 1 - 1e-7]
  before logs, and the generator side uses the non-saturating form.
* The hint loss normalizes each tap's squared Frobenius norm by its element
  count and sums over taps, so a weight of 1 is comparable across tap sizes.
* Every function is pure: gradient routing (detaching teacher taps or fake
  images) is the caller's choice unless the role argument implies it.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import torch
from torch import nn
from torch.nn import functional as F

PROB_EPS = 1e-7
DICE_EPS = 1e-5
CX_BANDWIDTH = 0.5
CX_EPS = 1e-5


@dataclass
class LossWeights:
    """Objective weights; cycle-translation and disentangled variants share
    the hint/seg weights."""

    adv: float = 1.0
    cycle: float = 10.0
    context: float = 1.0
    hint: float = 1.0
    seg: float = 5.0
    content_adv: float = 1.0
    vae: float = 1.0
    code_recon: float = 10.0
    latent_reg: float = 10.0

    def as_dict(self) -> dict:
        return asdict(self)


# -- segmentation -------------------------------------------------------------

def segmentation_loss(pred_probs: torch.Tensor, target_mask: torch.Tensor,
                      variant: str = "dice") -> torch.Tensor:
    """Dice (default) or pixelwise negative log-likelihood.

    Dice: 1 - mean over foreground classes of (2|P.G| + eps)/(|P| + |G| + eps),
    pooled over the batch. Classes absent from both prediction mass and
    target contribute zero loss.
    """
    n_classes = pred_probs.shape[1]
    if int(target_mask.max()) >= n_classes:
        raise ValueError(
            f"target labels reach {int(target_mask.max())} but prediction has {n_classes} classes")
    if variant == "nll":
        logp = torch.log(pred_probs.clamp_min(PROB_EPS))
        return F.nll_loss(logp, target_mask.long())
    if variant != "dice":
        raise ValueError(f"unknown segmentation loss variant {variant!r}")
    per_class = []
    for k in range(1, n_classes):
        p = pred_probs[:, k]
        g = (target_mask == k).to(pred_probs.dtype)
        inter = (p * g).sum()
        dice = (2 * inter + DICE_EPS) / (p.sum() + g.sum() + DICE_EPS)
        per_class.append(1.0 - dice)
    return torch.stack(per_class).mean()


# -- hint (feature distillation) ----------------------------------------------

def hint_loss(hints_a: list[torch.Tensor], hints_b: list[torch.Tensor]) -> torch.Tensor:
    """Sum over taps of the mean squared feature difference."""
    if len(hints_a) != len(hints_b):
        raise ValueError(f"tap count mismatch: {len(hints_a)} vs {len(hints_b)}")
    total = None
    for a, b in zip(hints_a, hints_b):
        if a.shape != b.shape:
            raise ValueError(f"hint tap shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        term = ((a - b) ** 2).mean()
        total = term if total is None else total + term
    return total


# -- contextual similarity ------------------------------------------------------

def contextual_similarity(feats_src: torch.Tensor, feats_tgt: torch.Tensor,
                          bandwidth: float = CX_BANDWIDTH, eps: float = CX_EPS) -> torch.Tensor:
    """All-pairs cosine-affinity similarity between two feature sets.

    Inputs are (N, C) stacks of feature vectors (spatial location already
    discarded). Both sets are shifted by the target mean (skipped for a
    singleton target, where the shift would zero it out), pairwise cosine
    distances are normalized per source row by their minimum, turned into
    exponential affinities and row-normalized; the score is the mean over
    source rows of the best affinity. The eps in the row normalization keeps
    the score strictly increasing in feature similarity even for tiny sets.
    """
    if feats_src.numel() == 0 or feats_tgt.numel() == 0:
        raise ValueError("contextual similarity needs non-empty feature sets")
    if feats_src.shape[1] != feats_tgt.shape[1]:
        raise ValueError("feature channel dimensions differ")
    if feats_tgt.shape[0] > 1:
        mu = feats_tgt.mean(dim=0, keepdim=True)
        feats_src = feats_src - mu
        feats_tgt = feats_tgt - mu
    src = feats_src / feats_src.norm(dim=1, keepdim=True).clamp_min(eps)
    tgt = feats_tgt / feats_tgt.norm(dim=1, keepdim=True).clamp_min(eps)
    dist = (1.0 - src @ tgt.T).clamp_min(0.0)                 # (Ns, Nt)
    dist_norm = dist / (dist.min(dim=1, keepdim=True).values + eps)
    w = torch.exp((1.0 - dist_norm) / bandwidth)
    cx = w / (w.sum(dim=1, keepdim=True) + eps)
    return cx.max(dim=1).values.mean()


def _flatten_features(t: torch.Tensor) -> torch.Tensor:
    # (B, C, H, W) -> (B*H*W, C)
    return t.permute(0, 2, 3, 1).reshape(-1, t.shape[1])


def contextual_loss(extractor, pseudo_img: torch.Tensor, real_target_batch: torch.Tensor,
                    max_features: int = 4096) -> torch.Tensor:
    """Mean over tap layers of -log CX(features(pseudo), features(real))."""
    feats_src = extractor(pseudo_img)
    feats_tgt = extractor(real_target_batch)
    losses = []
    for fs, ft in zip(feats_src, feats_tgt):
        s = _subsample(_flatten_features(fs), max_features)
        t = _subsample(_flatten_features(ft), max_features)
        losses.append(-torch.log(contextual_similarity(s, t)))
    return torch.stack(losses).mean()


def _subsample(x: torch.Tensor, cap: int) -> torch.Tensor:
    if x.shape[0] <= cap:
        return x
    stride = x.shape[0] // cap + (x.shape[0] % cap > 0)
    return x[::stride]


# -- adversarial ----------------------------------------------------------------

def _prob(d_logits: torch.Tensor) -> torch.Tensor:
    return torch.sigmoid(d_logits).clamp(PROB_EPS, 1.0 - PROB_EPS)


def adversarial_loss(disc: nn.Module, real: torch.Tensor, fake: torch.Tensor,
                     role: str) -> torch.Tensor:
    """Patch-averaged GAN loss; non-saturating generator form."""
    if role == "discriminator":
        p_real = _prob(disc(real))
        p_fake = _prob(disc(fake.detach()))
        return -(torch.log(p_real).mean() + torch.log(1.0 - p_fake).mean())
    if role == "generator":
        return -torch.log(_prob(disc(fake))).mean()
    raise ValueError(f"unknown role {role!r}")


def drit_adversarial_loss(disc: nn.Module, real: torch.Tensor, fake_cross: torch.Tensor,
                          fake_random: torch.Tensor, role: str) -> torch.Tensor:
    """Image GAN loss with two half-weighted fake branches (style-swapped and
    randomly-styled renders of the same content)."""
    if role == "discriminator":
        p_real = _prob(disc(real))
        p_cross = _prob(disc(fake_cross.detach()))
        p_rand = _prob(disc(fake_random.detach()))
        return -(torch.log(p_real).mean()
                 + 0.5 * torch.log(1.0 - p_cross).mean()
                 + 0.5 * torch.log(1.0 - p_rand).mean())
    if role == "generator":
        return -(0.5 * torch.log(_prob(disc(fake_cross))).mean()
                 + 0.5 * torch.log(_prob(disc(fake_random))).mean())
    raise ValueError(f"unknown role {role!r}")


def cycle_loss(gen_s2t: nn.Module, gen_t2s: nn.Module, x_student: torch.Tensor,
               x_teacher: torch.Tensor, pseudo_teacher: torch.Tensor | None = None,
               pseudo_student: torch.Tensor | None = None) -> torch.Tensor:
    """Round-trip L1; precomputed first-leg translations may be passed in."""
    round_s = gen_t2s(gen_s2t(x_student) if pseudo_teacher is None else pseudo_teacher)
    round_t = gen_s2t(gen_t2s(x_teacher) if pseudo_student is None else pseudo_student)
    return (round_s - x_student).abs().mean() + (round_t - x_teacher).abs().mean()


# -- totals ---------------------------------------------------------------------

def total_loss_cyclegan(parts: dict, w: LossWeights) -> torch.Tensor:
    """parts: {"adv", "cycle", "context", "hint", "seg"} (missing keys count 0)."""
    zero = _zero_like(parts)
    return (w.adv * parts.get("adv", zero)
            + w.cycle * parts.get("cycle", zero)
            + w.context * parts.get("context", zero)
            + w.hint * parts.get("hint", zero)
            + w.seg * parts.get("seg", zero))


def total_loss_drit(parts: dict, w: LossWeights) -> torch.Tensor:
    """parts: {"adv", "content_adv", "vae", "code_recon", "latent_reg",
    "hint", "seg"}."""
    zero = _zero_like(parts)
    return (w.adv * parts.get("adv", zero)
            + w.content_adv * parts.get("content_adv", zero)
            + w.vae * parts.get("vae", zero)
            + w.code_recon * parts.get("code_recon", zero)
            + w.latent_reg * parts.get("latent_reg", zero)
            + w.hint * parts.get("hint", zero)
            + w.seg * parts.get("seg", zero))


def _zero_like(parts: dict):
    for v in parts.values():
        if isinstance(v, torch.Tensor):
            return torch.zeros((), dtype=v.dtype, device=v.device)
    return torch.zeros(())


# -- disentanglement -------------------------------------------------------------

def content_adversarial_loss(disc_content: nn.Module, codes_student, codes_teacher,
                             role: str) -> torch.Tensor:
    """Domain-confusion objective on content codes.

    ``codes_student``/``codes_teacher`` are content codes computed from
    student/teacher images (single tensors or lists; passing each image
    through both encoders gives the four-term symmetric form). The
    discriminator classifies the image domain a code came from; in the
    generator (encoder) role every code is pushed toward the maximum-
    confusion point via cross-entropy against a uniform target.
    """
    codes_s = codes_student if isinstance(codes_student, (list, tuple)) else [codes_student]
    codes_t = codes_teacher if isinstance(codes_teacher, (list, tuple)) else [codes_teacher]
    if role == "discriminator":
        loss = None
        for c in codes_s:
            term = -torch.log(_prob(disc_content(c.detach()))).mean()
            loss = term if loss is None else loss + term
        for c in codes_t:
            loss = loss - torch.log(1.0 - _prob(disc_content(c.detach()))).mean()
        return loss
    if role == "generator":
        loss = None
        for c in [*codes_s, *codes_t]:
            p = _prob(disc_content(c))
            term = -(0.5 * torch.log(p) + 0.5 * torch.log(1.0 - p)).mean()
            loss = term if loss is None else loss + term
        return loss
    raise ValueError(f"unknown role {role!r}")


def content_reconstruction_loss(content_enc_s: nn.Module, content_enc_t: nn.Module,
                                x_student: torch.Tensor, xhat_student: torch.Tensor,
                                x_teacher: torch.Tensor, xhat_teacher: torch.Tensor
                                ) -> torch.Tensor:
    """Mean L1 between first-pass and second-pass content codes, both domains."""
    loss_s = (content_enc_s(x_student) - content_enc_s(xhat_student)).abs().mean()
    loss_t = (content_enc_t(x_teacher) - content_enc_t(xhat_teacher)).abs().mean()
    return loss_s + loss_t


def kl_standard_normal(mu: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    """KL(N(mu, sigma^2) || N(0, I)), summed over dims, mean over batch."""
    return (0.5 * (mu ** 2 + torch.exp(logvar) - logvar - 1.0).sum(dim=1)).mean()


def vae_loss(style_codes: list[tuple], reconstructions: list[torch.Tensor],
             originals: list[torch.Tensor]) -> torch.Tensor:
    """Sum over domains of [KL(style || N(0, I)) + mean L1 reconstruction].

    ``style_codes`` holds (mu, logvar) or (mu, logvar, z) per domain.
    """
    loss = None
    for code, recon, orig in zip(style_codes, reconstructions, originals):
        mu, logvar = code[0], code[1]
        term = kl_standard_normal(mu, logvar) + (recon - orig).abs().mean()
        loss = term if loss is None else loss + term
    return loss


def latent_regression_loss(domains: list[tuple]) -> torch.Tensor:
    """Sum over domains of mean |z - mu(style_enc(gen(content, z)))|.

    Each entry is (style_enc, gen, content, z). The style encoder's mean head
    is used as the recovered code.
    """
    loss = None
    for style_enc, gen, content, z in domains:
        mu, _logvar = style_enc(gen(content, z))
        term = (z - mu).abs().mean()
        loss = term if loss is None else loss + term
    return loss


# -- output distillation -----------------------------------------------------------

def output_distillation_loss(student_logits: torch.Tensor, teacher_logits: torch.Tensor,
                             temperature: float = 0.5) -> torch.Tensor:
    """Temperature-scaled KL(teacher || student) over the class axis, scaled
    by T^2; the teacher side is detached. Zero when the logits agree."""
    t = temperature
    log_p_student = F.log_softmax(student_logits / t, dim=1)
    log_p_teacher = F.log_softmax(teacher_logits.detach() / t, dim=1)
    kl = (log_p_teacher.exp() * (log_p_teacher - log_p_student)).sum(dim=1)
    return t * t * kl.mean()


# -- weighted fusion ------------------------------------------------------------------

class FusionAlphaNet(nn.Module):
    """Small conv encoder + two fully connected layers -> alpha in (0, 1)."""

    def __init__(self, in_channels=2, width=8):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Conv2d(in_channels, width, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(width, 2 * width, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(2 * width, 4 * width, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1),
        )
        self.fc1 = nn.Linear(4 * width, 2 * width)
        self.fc2 = nn.Linear(2 * width, 1)

    def forward(self, x_student, x_pseudo):
        h = self.encoder(torch.cat([x_student, x_pseudo], dim=1)).flatten(1)
        return torch.sigmoid(self.fc2(torch.relu(self.fc1(h))))  # (B, 1)


def weighted_fusion_forward(alpha_net, x_student: torch.Tensor, x_pseudo: torch.Tensor,
                            segnet: nn.Module, force_alpha: float | None = None):
    """Segment the alpha-blend (1 - alpha) * x_student + alpha * x_pseudo.

    ``force_alpha`` of exactly 0 or 1 bypasses the blend so the result is
    bit-identical to the corresponding single-modality forward.

    Returns (SegOutput, alpha tensor of shape (B, 1)).
    """
    b = x_student.shape[0]
    if force_alpha is not None:
        alpha = torch.full((b, 1), float(force_alpha), dtype=x_student.dtype,
                           device=x_student.device)
        if force_alpha == 0.0:
            return segnet(x_student), alpha
        if force_alpha == 1.0:
            return segnet(x_pseudo), alpha
    else:
        alpha = alpha_net(x_student, x_pseudo)
    a = alpha.view(b, 1, 1, 1)
    blended = (1.0 - a) * x_student + a * x_pseudo
    return segnet(blended), alpha
