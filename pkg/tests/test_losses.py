import math

import numpy as np
import pytest
import torch
from torch import nn
from hypothesis import given, settings, strategies as st

from cmedl import losses as L

from fdcheck import max_relative_fd_error
from loss_fd_cases import loss_fd_cases


class ConstantDisc(nn.Module):
    def __init__(self, prob):
        super().__init__()
        self.logit = math.log(prob / (1 - prob))

    def forward(self, x):
        return torch.full((x.shape[0], 1, 3, 3), self.logit, dtype=x.dtype)


class TestSegmentationLoss:
    def test_one_hot_prediction_zero(self):
        target = torch.zeros(1, 6, 6, dtype=torch.long)
        target[0, 2:4, 2:4] = 1
        probs = torch.stack([(target == 0).float(), (target == 1).float()], dim=1)
        assert float(L.segmentation_loss(probs, target)) < 1e-4

    def test_disjoint_prediction_near_one(self):
        target = torch.zeros(1, 6, 6, dtype=torch.long)
        target[0, :2, :2] = 1
        pred_mask = torch.zeros(1, 6, 6, dtype=torch.long)
        pred_mask[0, 4:, 4:] = 1
        probs = torch.stack([(pred_mask == 0).float(), (pred_mask == 1).float()], dim=1)
        assert float(L.segmentation_loss(probs, target)) > 0.99

    def test_half_overlap_example(self):
        target = torch.zeros(1, 4, 4, dtype=torch.long)
        target[0, 1:3, 1:3] = 1
        pred = torch.zeros(1, 4, 4, dtype=torch.long)
        pred[0, 2:4, 1:3] = 1  # 4 px, overlapping 2
        probs = torch.stack([(pred == 0).float(), (pred == 1).float()], dim=1)
        assert float(L.segmentation_loss(probs, target)) == pytest.approx(0.5, abs=1e-4)

    def test_label_overflow(self):
        with pytest.raises(ValueError):
            L.segmentation_loss(torch.rand(1, 2, 4, 4), torch.full((1, 4, 4), 7))

    @given(seed=st.integers(0, 50))
    @settings(max_examples=15, deadline=None)
    def test_dice_permutation_invariant(self, seed):
        rng = np.random.default_rng(seed)
        probs = torch.rand(1, 2, 4, 4, dtype=torch.float64)
        target = torch.from_numpy(rng.integers(0, 2, (1, 4, 4)))
        perm = rng.permutation(16)
        probs_p = probs.reshape(1, 2, 16)[:, :, perm].reshape(1, 2, 4, 4)
        target_p = target.reshape(1, 16)[:, perm].reshape(1, 4, 4)
        a = float(L.segmentation_loss(probs, target))
        b = float(L.segmentation_loss(probs_p, target_p))
        assert a == pytest.approx(b, rel=1e-12)


class TestHintLoss:
    def test_identical_zero(self):
        taps = [torch.randn(1, 3, 4, 4)]
        assert float(L.hint_loss(taps, [taps[0].clone()])) == 0.0

    def test_mean_normalization(self):
        a = [torch.zeros(1, 1, 2, 2)]
        b = [torch.ones(1, 1, 2, 2)]
        assert float(L.hint_loss(a, b)) == 1.0

    def test_additive_over_taps(self):
        a = [torch.zeros(1, 1, 2, 2), torch.zeros(1, 2, 3, 3)]
        b = [torch.ones(1, 1, 2, 2), torch.ones(1, 2, 3, 3)]
        assert float(L.hint_loss(a, b)) == 2.0

    def test_symmetric_value(self):
        a = [torch.randn(1, 3, 5, 5)]
        b = [torch.randn(1, 3, 5, 5)]
        assert float(L.hint_loss(a, b)) == pytest.approx(float(L.hint_loss(b, a)))

    def test_shape_mismatch_lists_both_shapes(self):
        with pytest.raises(ValueError, match=r"1, 2, 2.*1, 3, 3"):
            L.hint_loss([torch.zeros(1, 1, 2, 2)], [torch.zeros(1, 1, 3, 3)])


class TestContextual:
    def test_identical_singleton_is_one(self):
        v = torch.tensor([[1.0, 2.0, 3.0]])
        assert float(L.contextual_similarity(v, v.clone())) == pytest.approx(1.0, abs=1e-5)

    def test_orthogonal_below_identical(self):
        a = torch.tensor([[1.0, 0.0]])
        same = float(L.contextual_similarity(a, a.clone()))
        ortho = float(L.contextual_similarity(a, torch.tensor([[0.0, 1.0]])))
        assert ortho < same

    def test_identical_sets_bound_and_shuffled_control(self):
        g = torch.randn(24, 8, dtype=torch.float64)
        cx_same = float(L.contextual_similarity(g, g.clone()))
        assert -math.log(cx_same) <= math.log(24) + 1e-9
        perm = torch.randperm(8)
        cx_perm = float(L.contextual_similarity(g, g[:, perm]))
        assert cx_same > cx_perm

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            L.contextual_similarity(torch.zeros(0, 3), torch.zeros(2, 3))

    def test_loss_self_minimum(self, extractor8):
        img = torch.rand(1, 1, 32, 32) * 2 - 1
        self_loss = float(L.contextual_loss(extractor8, img, img.clone()))
        other = torch.rand(1, 1, 32, 32) * 2 - 1
        assert self_loss <= float(L.contextual_loss(extractor8, other, img)) + 1e-6

    def test_loss_finite_positive_for_noise(self, extractor8):
        a = torch.rand(1, 1, 32, 32) * 2 - 1
        b = torch.rand(1, 1, 32, 32) * 2 - 1
        val = float(L.contextual_loss(extractor8, a, b))
        assert math.isfinite(val) and val > 0

    @pytest.mark.parametrize("seed", [0, 3, 7])
    def test_blend_sweep_monotone(self, extractor8, seed):
        # structured cross-modality images; blending toward the target must
        # not increase the loss at any sweep point
        from cmedl.data import generate_phantom_corpus
        from cmedl.data.preprocess import clip_rescale

        data = generate_phantom_corpus(2, "informative_teacher", seed=seed, size=64)
        src = torch.from_numpy(clip_rescale(data.student[0].image, 0, 1)).float()[None, None]
        tgt = torch.from_numpy(clip_rescale(data.teacher[0].image, 0, 1)).float()[None, None]
        losses = [float(L.contextual_loss(extractor8, (1 - a) * src + a * tgt, tgt))
                  for a in (0.0, 0.5, 1.0)]
        assert losses[0] >= losses[1] >= losses[2]


@pytest.fixture(scope="module")
def extractor8():
    from cmedl.i2inets import PerceptualExtractor
    return PerceptualExtractor(width=8, seed=5)


class TestAdversarial:
    def test_half_probability_values(self):
        x = torch.rand(2, 1, 8, 8)
        d = ConstantDisc(0.5)
        assert float(L.adversarial_loss(d, x, x, "discriminator")) == \
            pytest.approx(2 * math.log(2), rel=1e-5)
        assert float(L.adversarial_loss(d, x, x, "generator")) == \
            pytest.approx(math.log(2), rel=1e-5)

    def test_perfect_discriminator_near_zero(self):
        x = torch.rand(1, 1, 8, 8)

        class Perfect(nn.Module):
            def forward(self, inp):
                val = 50.0 if inp is x else -50.0
                return torch.full((1, 1, 2, 2), val)

        assert float(L.adversarial_loss(Perfect(), x, torch.zeros_like(x),
                                        "discriminator")) < 1e-5

    def test_generator_fooling_near_zero(self):
        assert float(L.adversarial_loss(ConstantDisc(1 - 1e-9), torch.zeros(1, 1, 4, 4),
                                        torch.zeros(1, 1, 4, 4), "generator")) < 1e-4

    def test_discriminator_role_detaches_fake(self):
        d = ConstantDisc(0.7)
        fake = torch.rand(1, 1, 4, 4, requires_grad=True)
        loss = L.adversarial_loss(d, torch.rand(1, 1, 4, 4), fake, "discriminator")
        assert not loss.requires_grad or fake.grad is None

    def test_drit_half_weighted_fakes(self):
        d = ConstantDisc(0.5)
        x = torch.rand(1, 1, 8, 8)
        val = float(L.drit_adversarial_loss(d, x, x, x, "discriminator"))
        assert val == pytest.approx(2 * math.log(2), rel=1e-5)  # 1 + 0.5 + 0.5 logs of 2


class _Identity(nn.Module):
    def forward(self, x):
        return x


class _Offset(nn.Module):
    def __init__(self, delta):
        super().__init__()
        self.delta = delta

    def forward(self, x):
        return x + self.delta


class _Negate(nn.Module):
    def forward(self, x):
        return -x


class TestCycleLoss:
    def test_identity_generators(self):
        x = torch.rand(1, 1, 8, 8)
        assert float(L.cycle_loss(_Identity(), _Identity(), x, x)) == 0.0

    def test_double_negation_consistent(self):
        x = torch.rand(1, 1, 8, 8)
        assert float(L.cycle_loss(_Negate(), _Negate(), x, x)) == 0.0

    def test_constant_offset(self):
        x = torch.zeros(1, 1, 4, 4)
        val = float(L.cycle_loss(_Identity(), _Offset(0.1), x, x))
        assert val == pytest.approx(0.2, rel=1e-6)


class TestTotals:
    def test_unit_parts_defaults(self):
        w = L.LossWeights()
        parts5 = {k: torch.ones(()) for k in ("adv", "cycle", "context", "hint", "seg")}
        assert float(L.total_loss_cyclegan(parts5, w)) == pytest.approx(18.0)
        parts7 = {k: torch.ones(()) for k in ("adv", "content_adv", "vae", "code_recon",
                                              "latent_reg", "hint", "seg")}
        assert float(L.total_loss_drit(parts7, w)) == pytest.approx(29.0)

    def test_zero_parts(self):
        w = L.LossWeights()
        assert float(L.total_loss_cyclegan({}, w)) == 0.0
        assert float(L.total_loss_drit({}, w)) == 0.0

    @given(scale=st.floats(0.0, 4.0))
    @settings(max_examples=20, deadline=None)
    def test_linear_in_weights(self, scale):
        parts = {k: torch.tensor(v) for k, v in
                 zip(("adv", "cycle", "context", "hint", "seg"), (0.3, 0.7, 1.1, 0.2, 0.9))}
        base = L.LossWeights()
        scaled = L.LossWeights(**{k: v * scale for k, v in base.as_dict().items()})
        assert float(L.total_loss_cyclegan(parts, scaled)) == \
            pytest.approx(scale * float(L.total_loss_cyclegan(parts, base)),
                          rel=1e-5, abs=1e-6)

    def test_hint_toggle_reproduces_ablation(self):
        parts = {k: torch.ones(()) for k in ("adv", "cycle", "context", "hint", "seg")}
        w0 = L.LossWeights(hint=0.0)
        assert float(L.total_loss_cyclegan(parts, w0)) == pytest.approx(17.0)


class TestContentAdversarial:
    def test_four_terms_at_half(self):
        d = ConstantDisc(0.5)
        c = torch.randn(1, 4, 2, 2)
        val = float(L.content_adversarial_loss(d, [c, c], [c, c], "discriminator"))
        assert val == pytest.approx(4 * math.log(2), rel=1e-5)

    def test_generator_minimized_at_confusion(self):
        c = torch.randn(1, 4, 2, 2)
        at_half = float(L.content_adversarial_loss(ConstantDisc(0.5), [c], [c], "generator"))
        away = float(L.content_adversarial_loss(ConstantDisc(0.9), [c], [c], "generator"))
        assert at_half < away

    def test_discriminator_role_detaches_codes(self):
        class TinyD(nn.Module):
            def __init__(self):
                super().__init__()
                self.conv = nn.Conv2d(4, 1, 1)

            def forward(self, x):
                return self.conv(x)

        d = TinyD()
        code = torch.randn(1, 4, 2, 2, requires_grad=True)
        loss = L.content_adversarial_loss(d, [code], [code], "discriminator")
        loss.backward()
        assert code.grad is None


class TestVae:
    def test_zero_at_standard_normal_perfect_recon(self):
        x = torch.rand(1, 1, 4, 4)
        val = L.vae_loss([(torch.zeros(1, 4), torch.zeros(1, 4))], [x], [x.clone()])
        assert float(val) == 0.0

    def test_single_dim_mu_one(self):
        x = torch.rand(1, 1, 2, 2)
        val = L.vae_loss([(torch.ones(1, 1), torch.zeros(1, 1))], [x], [x.clone()])
        assert float(val) == pytest.approx(0.5)

    @given(seed=st.integers(0, 100))
    @settings(max_examples=25, deadline=None)
    def test_kl_nonnegative(self, seed):
        g = torch.Generator().manual_seed(seed)
        mu = torch.randn(2, 6, generator=g)
        logvar = torch.randn(2, 6, generator=g)
        assert float(L.kl_standard_normal(mu, logvar)) >= 0.0


class TestLatentRegression:
    def test_exact_inverse_zero(self):
        class Gen(nn.Module):
            def forward(self, content, z):
                return z[:, :, None, None].expand(-1, -1, 4, 4)

        class Enc(nn.Module):
            def forward(self, img):
                return img[:, :, 0, 0], torch.zeros(img.shape[0], img.shape[1])

        val = L.latent_regression_loss([(Enc(), Gen(), torch.zeros(1, 2, 4, 4),
                                         torch.randn(1, 2))])
        assert float(val) == 0.0

    def test_constant_offset(self):
        class Gen(nn.Module):
            def forward(self, content, z):
                return z[:, :, None, None].expand(-1, -1, 4, 4)

        class Enc(nn.Module):
            def forward(self, img):
                mu = img[:, :, 0, 0] + 0.3
                return mu, torch.zeros_like(mu)

        val = L.latent_regression_loss([(Enc(), Gen(), torch.zeros(1, 2, 4, 4),
                                         torch.randn(1, 2))])
        assert float(val) == pytest.approx(0.3, rel=1e-6)

    def test_gradient_reaches_generator_and_encoder(self):
        class Gen(nn.Module):
            def __init__(self):
                super().__init__()
                self.scale = nn.Parameter(torch.tensor(1.0))

            def forward(self, content, z):
                return (self.scale * z)[:, :, None, None].expand(-1, -1, 2, 2)

        class Enc(nn.Module):
            def __init__(self):
                super().__init__()
                self.scale = nn.Parameter(torch.tensor(0.9))

            def forward(self, img):
                mu = self.scale * img[:, :, 0, 0]
                return mu, torch.zeros_like(mu)

        gen, enc = Gen(), Enc()
        val = L.latent_regression_loss([(enc, gen, torch.zeros(1, 2, 2, 2),
                                         torch.ones(1, 2))])
        val.backward()
        assert gen.scale.grad is not None and float(gen.scale.grad) != 0.0
        assert enc.scale.grad is not None and float(enc.scale.grad) != 0.0


class TestContentReconstruction:
    def test_identical_images_zero(self):
        enc = nn.Conv2d(1, 2, 3, padding=1)
        x_s = torch.rand(1, 1, 8, 8)
        x_t = torch.rand(1, 1, 8, 8)
        val = L.content_reconstruction_loss(enc, enc, x_s, x_s.clone(), x_t, x_t.clone())
        assert float(val) == 0.0

    def test_constant_code_offset(self):
        class Enc(nn.Module):
            def forward(self, x):
                return x

        x = torch.zeros(1, 1, 4, 4)
        val = L.content_reconstruction_loss(Enc(), Enc(), x, x + 0.2, x, x + 0.2)
        assert float(val) == pytest.approx(0.4, rel=1e-6)

    def test_invariant_to_style_when_generator_ignores_style(self):
        class Enc(nn.Module):
            def forward(self, x):
                return 2.0 * x

        class StyleBlindGen(nn.Module):
            def forward(self, content, z):
                return content

        enc = Enc()
        x_s = torch.rand(1, 1, 4, 4)
        x_t = torch.rand(1, 1, 4, 4)
        gen = StyleBlindGen()
        outs = [L.content_reconstruction_loss(enc, enc, x_s,
                                              gen(enc(x_s), torch.randn(1, 8)),
                                              x_t, gen(enc(x_t), torch.randn(1, 8)))
                for _ in range(3)]
        assert all(float(o) == pytest.approx(float(outs[0])) for o in outs)


class TestOutputDistillation:
    def test_identical_logits_zero(self):
        logits = torch.randn(2, 3, 4, 4)
        assert float(L.output_distillation_loss(logits, logits.clone())) == 0.0

    def test_high_temperature_approaches_uniform(self):
        s = torch.randn(1, 4, 2, 2)
        t = torch.randn(1, 4, 2, 2)
        probs = torch.softmax(t / 1000.0, dim=1)
        assert float((probs - 0.25).abs().max()) < 1e-3
        assert math.isfinite(float(L.output_distillation_loss(s, t, temperature=1000.0)))

    def test_gradient_vanishes_at_equality(self):
        s = torch.randn(1, 3, 2, 2, requires_grad=True)
        loss = L.output_distillation_loss(s, s.detach().clone())
        loss.backward()
        assert float(s.grad.abs().max()) < 1e-7

    def test_teacher_detached(self):
        s = torch.randn(1, 3, 2, 2, requires_grad=True)
        t = torch.randn(1, 3, 2, 2, requires_grad=True)
        loss = L.output_distillation_loss(s, t)
        loss.backward()
        assert s.grad is not None
        assert t.grad is None


class TestWeightedFusion:
    @pytest.fixture(scope="class")
    def segnet(self):
        from cmedl.segnets import SegNetConfig, build_segnet
        torch.manual_seed(0)
        return build_segnet(SegNetConfig(base_width=4)).eval()

    def test_alpha_zero_bitwise_student(self, segnet):
        x_c = torch.rand(1, 1, 64, 64) * 2 - 1
        x_pm = torch.rand(1, 1, 64, 64) * 2 - 1
        with torch.no_grad():
            out, alpha = L.weighted_fusion_forward(None, x_c, x_pm, segnet, force_alpha=0.0)
            ref = segnet(x_c)
        assert torch.equal(out.logits, ref.logits)
        assert float(alpha.max()) == 0.0

    def test_alpha_one_bitwise_pseudo(self, segnet):
        x_c = torch.rand(1, 1, 64, 64) * 2 - 1
        x_pm = torch.rand(1, 1, 64, 64) * 2 - 1
        with torch.no_grad():
            out, _ = L.weighted_fusion_forward(None, x_c, x_pm, segnet, force_alpha=1.0)
            ref = segnet(x_pm)
        assert torch.equal(out.logits, ref.logits)

    def test_half_alpha_on_equal_inputs(self, segnet):
        x = torch.rand(1, 1, 64, 64) * 2 - 1
        with torch.no_grad():
            out, _ = L.weighted_fusion_forward(None, x, x.clone(), segnet, force_alpha=0.5)
            ref = segnet(x)
        assert torch.equal(out.logits, ref.logits)

    def test_alpha_net_in_open_interval(self):
        net = L.FusionAlphaNet(width=4)
        a = net(torch.rand(3, 1, 32, 32), torch.rand(3, 1, 32, 32))
        assert a.shape == (3, 1)
        assert float(a.min()) > 0.0 and float(a.max()) < 1.0


class TestNonnegativity:
    @given(seed=st.integers(0, 60))
    @settings(max_examples=20, deadline=None)
    def test_core_losses_nonnegative(self, seed):
        g = torch.Generator().manual_seed(seed)
        probs = torch.rand(1, 2, 4, 4, generator=g)
        probs = probs / probs.sum(dim=1, keepdim=True)
        target = (torch.rand(1, 4, 4, generator=g) > 0.5).long()
        assert float(L.segmentation_loss(probs, target)) >= 0.0
        a = [torch.randn(1, 2, 3, 3, generator=g)]
        b = [torch.randn(1, 2, 3, 3, generator=g)]
        assert float(L.hint_loss(a, b)) >= 0.0
        s = torch.randn(1, 3, 2, 2, generator=g)
        t = torch.randn(1, 3, 2, 2, generator=g)
        assert float(L.output_distillation_loss(s, t)) >= -1e-9


@pytest.mark.parametrize("case", loss_fd_cases(), ids=lambda c: c[0])
def test_loss_gradients_match_finite_differences(case):
    name, fn, tensors, max_el, eps = case
    err = max_relative_fd_error(fn, tensors, max_elements=max_el, eps=eps)
    assert err < 1e-3, f"{name}: worst relative FD error {err:.2e}"
