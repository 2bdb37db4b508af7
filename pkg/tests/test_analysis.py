import numpy as np
import pytest
import torch
from PIL import Image

from cmedl.analysis import (conditional_probabilities, dump_feature_maps,
                            feature_matrix, harvest_features,
                            perplexity_of_conditionals, separability_score,
                            subsample_balanced, tsne_embed)
from cmedl.data import generate_phantom_corpus
from cmedl.errors import ConfigurationError
from cmedl.segnets import SegNetConfig, build_segnet


def two_clusters(n=240, dim=16, gap=10.0, seed=0):
    rng = np.random.default_rng(seed)
    x = np.r_[rng.normal(0, 1, (n // 2, dim)), rng.normal(gap, 1, (n // 2, dim))]
    labels = np.r_[np.zeros(n // 2), np.ones(n // 2)]
    return x, labels


def oracle_silhouette(points, labels):
    n = len(points)
    scores = []
    for i in range(n):
        same, other = [], []
        for j in range(n):
            if j == i:
                continue
            d = float(np.sqrt(((points[i] - points[j]) ** 2).sum()))
            (same if labels[j] == labels[i] else other).append(d)
        if not same:
            scores.append(0.0)
            continue
        a, b = np.mean(same), np.mean(other)
        scores.append((b - a) / max(a, b))
    return float(np.mean(scores))


class TestTsne:
    def test_well_separated_clusters(self):
        x, labels = two_clusters()
        res = tsne_embed(x, perplexity=40, iterations=500, seed=1)
        score = separability_score(res.embedding, labels)
        assert score > 0.5
        assert score == pytest.approx(oracle_silhouette(res.embedding, labels), abs=1e-9)

    def test_deterministic(self):
        x, _ = two_clusters(n=200)
        a = tsne_embed(x, perplexity=30, iterations=120, seed=5)
        b = tsne_embed(x, perplexity=30, iterations=120, seed=5)
        assert np.array_equal(a.embedding, b.embedding)

    def test_kl_finite_and_decreasing(self):
        x, _ = two_clusters(n=200)
        res = tsne_embed(x, perplexity=30, iterations=300, seed=2)
        assert all(np.isfinite(res.kl_history))
        assert res.kl_history[-1] < res.kl_history[0]

    def test_perplexity_calibration_within_one_percent(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(150, 8))
        p_cond, _ = conditional_probabilities(x, perplexity=25.0)
        perp = perplexity_of_conditionals(p_cond)
        assert np.abs(perp - 25.0).max() / 25.0 < 0.01

    def test_perplexity_too_large_rejected(self):
        x = np.random.default_rng(0).normal(size=(100, 4))
        with pytest.raises(ConfigurationError, match="smaller perplexity"):
            tsne_embed(x, perplexity=60.0, iterations=10, seed=0)


class TestSeparability:
    def test_perfect_clusters(self):
        pts = np.r_[np.random.default_rng(0).normal(0, 0.05, (40, 2)),
                    np.random.default_rng(1).normal(10, 0.05, (40, 2))]
        labels = np.r_[np.zeros(40), np.ones(40)]
        assert separability_score(pts, labels) > 0.9

    def test_identical_clouds_near_zero(self):
        pts = np.random.default_rng(2).normal(size=(80, 2))
        labels = np.r_[np.zeros(40), np.ones(40)]
        rng = np.random.default_rng(3)
        rng.shuffle(labels)
        assert separability_score(pts, labels) <= 0.05

    def test_permutation_does_not_increase_on_average(self):
        x, labels = two_clusters(n=160, gap=6.0)
        res = tsne_embed(x, perplexity=20, iterations=300, seed=4)
        true_score = separability_score(res.embedding, labels)
        rng = np.random.default_rng(5)
        permuted = [separability_score(res.embedding, rng.permutation(labels))
                    for _ in range(10)]
        assert true_score > np.mean(permuted)


@pytest.fixture(scope="module")
def tiny_net_and_samples():
    torch.manual_seed(0)
    net = build_segnet(SegNetConfig(base_width=4))
    data = generate_phantom_corpus(3, "informative_teacher", seed=21, size=64)
    return net, data.student


class TestHarvest:
    def test_cap_and_balance(self, tiny_net_and_samples):
        net, samples = tiny_net_and_samples
        feats = harvest_features(net, samples, patch=160, seed=0)
        by_case = {}
        for f in feats:
            by_case.setdefault(f.case_id, []).append(f)
        assert by_case, "tumor-bearing cases must contribute"
        for case_feats in by_case.values():
            n_tumor = sum(f.label == "tumor" for f in case_feats)
            n_bg = sum(f.label == "background" for f in case_feats)
            assert abs(n_tumor - n_bg) <= 1
            assert len(case_feats) <= 35000

    def test_small_cap_enforced(self, tiny_net_and_samples):
        net, samples = tiny_net_and_samples
        feats = harvest_features(net, samples, patch=160, cap=40, seed=0)
        by_case = {}
        for f in feats:
            by_case.setdefault(f.case_id, []).append(f)
        assert all(len(v) <= 40 for v in by_case.values())

    def test_tumorless_slice_contributes_nothing(self, tiny_net_and_samples):
        net, samples = tiny_net_and_samples
        import dataclasses
        empty = dataclasses.replace(samples[0],
                                    mask=np.zeros_like(samples[0].mask), case_id="empty")
        feats = harvest_features(net, [empty], seed=0)
        assert feats == []

    def test_vector_dim_is_tap_channel_sum(self, tiny_net_and_samples):
        net, samples = tiny_net_and_samples
        feats = harvest_features(net, samples[:1], seed=0)
        with torch.no_grad():
            hints = net(torch.zeros(1, 1, 64, 64)).hints
        expected = hints[-2].shape[1] + hints[-1].shape[1]
        assert feats[0].vector.shape == (expected,)

    def test_deterministic_and_balanced_subsample(self, tiny_net_and_samples):
        net, samples = tiny_net_and_samples
        a = harvest_features(net, samples, seed=3)
        b = harvest_features(net, samples, seed=3)
        assert len(a) == len(b)
        assert all(np.array_equal(x.vector, y.vector) for x, y in zip(a, b))
        sub = subsample_balanced(a, 60, seed=1)
        assert len(sub) == 60
        assert sum(f.label == "tumor" for f in sub) == 30
        x, labels = feature_matrix(sub)
        assert x.shape == (60, a[0].vector.shape[0]) and labels.sum() == 30


class Wide24Net(torch.nn.Module):
    """Stub segmentation net whose last tap carries 24 deterministic channels."""

    def forward(self, x):
        from cmedl.segnets.common import SegOutput
        h, w = x.shape[-2:]
        logits = torch.zeros(1, 2, h, w)
        base = torch.linspace(-1, 1, h * w).reshape(1, 1, h, w)
        tap = torch.cat([base * (c + 1) for c in range(24)], dim=1)
        return SegOutput(logits=logits, probabilities=torch.softmax(logits, 1),
                         hints=[tap])


class TestFeatureMapDump:
    def test_grid_layout_and_determinism(self, tmp_path):
        net = Wide24Net()
        image = np.zeros((16, 16))
        grid = dump_feature_maps(net, image, tmp_path / "a.png", channels=range(24))
        th = tw = 16
        assert grid.shape == (4 * (th + 1) - 1, 6 * (tw + 1) - 1)  # 4x6 tile grid
        dump_feature_maps(net, image, tmp_path / "b.png", channels=range(24))
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_real_net_dump(self, tiny_net_and_samples, tmp_path):
        net, samples = tiny_net_and_samples
        image = samples[0].image * 2 - 1
        grid = dump_feature_maps(net, image, tmp_path / "r.png", channels=range(4))
        assert grid.shape == (64, 4 * 65 - 1)
        assert (tmp_path / "r.png").exists()

    def test_constant_channel_mid_gray(self, tmp_path):
        class ConstNet(torch.nn.Module):
            def forward(self, x):
                from cmedl.segnets.common import SegOutput
                logits = torch.zeros(1, 2, 8, 8)
                return SegOutput(logits=logits, probabilities=torch.softmax(logits, 1),
                                 hints=[torch.full((1, 1, 8, 8), 3.3)])

        grid = dump_feature_maps(ConstNet(), np.zeros((8, 8)), tmp_path / "c.png",
                                 channels=range(1))
        assert np.all(grid == 128)
        assert np.asarray(Image.open(tmp_path / "c.png")).shape == grid.shape
