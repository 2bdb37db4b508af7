"""Walk through every training objective with small closed-form checks."""

import math

import torch

from cmedl import losses as L

print("== segmentation (dice) ==")
target = torch.zeros(1, 4, 4, dtype=torch.long)
target[0, 1:3, 1:3] = 1
pred = torch.zeros(1, 4, 4, dtype=torch.long)
pred[0, 2:4, 1:3] = 1
probs = torch.stack([(pred == 0).float(), (pred == 1).float()], dim=1)
print("half-overlap dice loss:", float(L.segmentation_loss(probs, target)))

print("\n== hint (feature distillation) ==")
print("identical taps ->", float(L.hint_loss([torch.ones(1, 2, 4, 4)],
                                             [torch.ones(1, 2, 4, 4)])))
print("zeros vs ones  ->", float(L.hint_loss([torch.zeros(1, 1, 2, 2)],
                                             [torch.ones(1, 1, 2, 2)])))

print("\n== contextual similarity ==")
g = torch.randn(32, 8)
print("identical sets CX:", float(L.contextual_similarity(g, g.clone())))
print("channel-shuffled CX:", float(L.contextual_similarity(g, g[:, torch.randperm(8)])))

print("\n== adversarial at the maximally confused point ==")


class HalfDisc(torch.nn.Module):
    def forward(self, x):
        return torch.zeros(x.shape[0], 1, 3, 3)


x = torch.rand(1, 1, 16, 16)
print("discriminator loss:", float(L.adversarial_loss(HalfDisc(), x, x, "discriminator")),
      "(= 2 ln 2 =", 2 * math.log(2), ")")

print("\n== weighted totals with the default coefficients ==")
w = L.LossWeights()
parts = {k: torch.ones(()) for k in ("adv", "cycle", "context", "hint", "seg")}
print("cycle-translation total of unit parts:", float(L.total_loss_cyclegan(parts, w)))
parts7 = {k: torch.ones(()) for k in ("adv", "content_adv", "vae", "code_recon",
                                      "latent_reg", "hint", "seg")}
print("disentangled total of unit parts:", float(L.total_loss_drit(parts7, w)))

print("\n== output distillation ==")
logits = torch.randn(1, 3, 4, 4)
print("identical logits:", float(L.output_distillation_loss(logits, logits.clone())))
print("different logits:", float(L.output_distillation_loss(logits, torch.randn(1, 3, 4, 4))))
