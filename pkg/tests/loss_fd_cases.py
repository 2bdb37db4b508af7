"""Catalog of finite-difference checks covering every loss in the package.

Each case is (name, fn, input tensors, max_elements). Inputs stay at or
below 256 elements; image-shaped inputs constrained by network minimum
sizes are checked on a seeded 256-element subset.
"""

from __future__ import annotations

import torch

from cmedl import losses as L
from cmedl.i2inets import PerceptualExtractor, ResnetGenerator, PatchDiscriminator
from cmedl.i2inets.drit import ContentDiscriminator, ContentEncoder, StyleEncoder, StyleGenerator


def _double(net):
    return net.double().eval()


def loss_fd_cases() -> list[tuple]:
    torch.manual_seed(0)
    cases = []

    probs = torch.rand(1, 2, 4, 4, dtype=torch.float64) * 0.8 + 0.1
    target = (torch.rand(1, 4, 4) > 0.6).long()
    cases.append(("segmentation_dice",
                  lambda p: L.segmentation_loss(p, target, "dice"), [probs], None, 1e-6))
    cases.append(("segmentation_nll",
                  lambda p: L.segmentation_loss(p, target, "nll"), [probs], None, 1e-6))

    tap_a = torch.randn(1, 2, 3, 3, dtype=torch.float64)
    tap_b = torch.randn(1, 2, 3, 3, dtype=torch.float64)
    tap_c = torch.randn(1, 3, 2, 2, dtype=torch.float64)
    tap_d = torch.randn(1, 3, 2, 2, dtype=torch.float64)
    cases.append(("hint",
                  lambda a, b, c, d: L.hint_loss([a, c], [b, d]),
                  [tap_a, tap_b, tap_c, tap_d], None, 1e-6))

    src = torch.randn(6, 5, dtype=torch.float64)
    tgt = torch.randn(7, 5, dtype=torch.float64)
    cases.append(("contextual_similarity",
                  lambda s, t: -torch.log(L.contextual_similarity(s, t)), [src, tgt], None, 1e-6))

    extractor = PerceptualExtractor(width=4, seed=7).double()
    img_a = torch.rand(1, 1, 32, 32, dtype=torch.float64) * 1.6 - 0.8
    img_b = torch.rand(1, 1, 32, 32, dtype=torch.float64) * 1.6 - 0.8
    cases.append(("contextual_loss",
                  lambda a, b: L.contextual_loss(extractor, a, b), [img_a, img_b], 128, 1e-6))

    # the patch discriminator needs >= 32px inputs (instance-norm spatial
    # minimum), so these run on a seeded 128-element subset
    disc = _double(PatchDiscriminator(width=4))
    real = torch.rand(1, 1, 32, 32, dtype=torch.float64) * 2 - 1
    fake = torch.rand(1, 1, 32, 32, dtype=torch.float64) * 2 - 1
    cases.append(("adversarial_discriminator",
                  lambda r: L.adversarial_loss(disc, r, fake, "discriminator"), [real], 128, 1e-6))
    cases.append(("adversarial_generator",
                  lambda f: L.adversarial_loss(disc, real, f, "generator"), [fake], 128, 1e-6))
    fake2 = torch.rand(1, 1, 32, 32, dtype=torch.float64) * 2 - 1
    cases.append(("drit_adversarial_generator",
                  lambda f, g: L.drit_adversarial_loss(disc, real, f, g, "generator"),
                  [fake, fake2], 64, 1e-6))
    cases.append(("drit_adversarial_discriminator",
                  lambda r: L.drit_adversarial_loss(disc, r, fake, fake2, "discriminator"),
                  [real], 128, 1e-6))

    gen_a = _double(ResnetGenerator(width=4, n_residual_blocks=1))
    gen_b = _double(ResnetGenerator(width=4, n_residual_blocks=1))
    x_a = torch.rand(1, 1, 8, 8, dtype=torch.float64) * 1.6 - 0.8
    x_b = torch.rand(1, 1, 8, 8, dtype=torch.float64) * 1.6 - 0.8
    cases.append(("cycle",
                  lambda a, b: L.cycle_loss(gen_a, gen_b, a, b), [x_a, x_b], None, 1e-7))

    parts_keys = ("adv", "cycle", "context", "hint", "seg")
    scalars = torch.rand(5, dtype=torch.float64)
    cases.append(("total_cyclegan",
                  lambda v: L.total_loss_cyclegan(dict(zip(parts_keys, v)), L.LossWeights()),
                  [scalars], None, 1e-6))
    drit_keys = ("adv", "content_adv", "vae", "code_recon", "latent_reg", "hint", "seg")
    scalars7 = torch.rand(7, dtype=torch.float64)
    cases.append(("total_drit",
                  lambda v: L.total_loss_drit(dict(zip(drit_keys, v)), L.LossWeights()),
                  [scalars7], None, 1e-6))

    disc_c = _double(ContentDiscriminator(content_channels=4))
    with torch.no_grad():  # push outputs away from the p=0.5 stationary point
        for p in disc_c.parameters():
            p.mul_(8.0)
    code_s = torch.randn(1, 4, 4, 4, dtype=torch.float64)
    code_t = torch.randn(1, 4, 4, 4, dtype=torch.float64)
    cases.append(("content_adversarial_generator",
                  lambda cs, ct: L.content_adversarial_loss(disc_c, cs, ct, "generator"),
                  [code_s, code_t], None, 1e-6))

    enc_s = _double(ContentEncoder(width=4))
    enc_t = _double(ContentEncoder(width=4))
    xs = torch.rand(1, 1, 8, 8, dtype=torch.float64) * 1.6 - 0.8
    xhs = torch.rand(1, 1, 8, 8, dtype=torch.float64) * 1.6 - 0.8
    xt = torch.rand(1, 1, 8, 8, dtype=torch.float64) * 1.6 - 0.8
    xht = torch.rand(1, 1, 8, 8, dtype=torch.float64) * 1.6 - 0.8
    cases.append(("content_reconstruction",
                  lambda a, b, c, d: L.content_reconstruction_loss(enc_s, enc_t, a, b, c, d),
                  [xs, xhs, xt, xht], None, 1e-7))

    mu = torch.randn(1, 8, dtype=torch.float64)
    logvar = torch.randn(1, 8, dtype=torch.float64) * 0.3
    recon = torch.rand(1, 1, 4, 4, dtype=torch.float64)
    orig = torch.rand(1, 1, 4, 4, dtype=torch.float64)
    cases.append(("vae",
                  lambda m, lv, r, o: L.vae_loss([(m, lv)], [r], [o]),
                  [mu, logvar, recon, orig], None, 1e-6))

    style_enc = _double(StyleEncoder(width=4, style_dim=4))
    gen_style = _double(StyleGenerator(content_channels=16, style_dim=4, n_residual_blocks=1))
    content = torch.randn(1, 16, 2, 2, dtype=torch.float64)
    z = torch.randn(1, 4, dtype=torch.float64)
    cases.append(("latent_regression",
                  lambda c, zz: L.latent_regression_loss([(style_enc, gen_style, c, zz)]),
                  [content, z], None, 1e-7))

    s_logits = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    t_logits = torch.randn(1, 3, 4, 4, dtype=torch.float64)
    cases.append(("output_distillation",
                  lambda s: L.output_distillation_loss(s, t_logits), [s_logits], None, 1e-6))
    return cases
