"""Distribution distances, retrieval, diversity, lip sync, feature encoders."""

import numpy as np
import pytest

from emoface.features import (
    EmotionClassifier,
    FeatConfig,
    MotionVae,
    cross_entropy,
    train_emotion_classifier,
    train_feature_encoder,
)
from emoface.metrics import (
    ConstantInputError,
    GaussianStats,
    MinSamplesError,
    NonPsdError,
    cosine_histograms,
    diversity,
    feature_frechet,
    frechet_distance,
    gaussian_stats,
    lip_content_correlation,
    mean_lip_content_correlation,
    retrieval_by_emotion,
    retrieval_top1,
)
from emoface.nn import one_hot
from emoface.synth import SynthWorld, make_clips, window_content_curve, windows_from_clips
from emoface.tensor import Tensor


class _FlatEncoder:
    """Identity feature map used to test the injectable encoder seam."""

    @staticmethod
    def features(motion):
        m = np.asarray(motion)
        return m.reshape(len(m), -1)


class TestGaussianStats:
    def test_matches_numpy_unbiased(self):
        x = np.random.default_rng(0).normal(size=(40, 5))
        s = gaussian_stats(x)
        assert np.allclose(s.mean, x.mean(0))
        assert np.allclose(s.cov, np.cov(x, rowvar=False, ddof=1))
        assert np.allclose(s.cov, s.cov.T)

    def test_min_samples(self):
        with pytest.raises(MinSamplesError):
            gaussian_stats(np.zeros((1, 3)))

    def test_one_dimensional_kept_as_matrix(self):
        s = gaussian_stats(np.array([[0.0], [2.0], [4.0]]))
        assert s.cov.shape == (1, 1)
        assert s.cov[0, 0] == pytest.approx(4.0)


class TestFrechet:
    def test_identical_distributions_zero(self):
        x = np.random.default_rng(1).normal(size=(100, 6))
        s = gaussian_stats(x)
        assert frechet_distance(s, s) < 1e-6

    def test_one_dimensional_closed_form_equals_two(self):
        a = GaussianStats(mean=np.array([0.0]), cov=np.array([[1.0]]))
        b = GaussianStats(mean=np.array([1.0]), cov=np.array([[4.0]]))
        # (mu diff)^2 + (sigma diff)^2 = 1 + (2-1)^2 = 2
        assert frechet_distance(a, b) == pytest.approx(2.0, abs=1e-10)

    def test_one_dimensional_closed_form_random(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            m1, m2 = rng.normal(size=2)
            s1, s2 = rng.uniform(0.3, 2.0, size=2)
            a = GaussianStats(np.array([m1]), np.array([[s1**2]]))
            b = GaussianStats(np.array([m2]), np.array([[s2**2]]))
            expected = (m1 - m2) ** 2 + (s1 - s2) ** 2
            assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-9)

    def test_diagonal_closed_form(self):
        rng = np.random.default_rng(3)
        d = 7
        mu1, mu2 = rng.normal(size=(2, d))
        s1, s2 = rng.uniform(0.2, 1.5, size=(2, d))
        a = GaussianStats(mu1, np.diag(s1**2))
        b = GaussianStats(mu2, np.diag(s2**2))
        expected = float(np.sum((mu1 - mu2) ** 2) + np.sum((s1 - s2) ** 2))
        assert frechet_distance(a, b) == pytest.approx(expected, abs=1e-9)

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(4)
        x = rng.normal(size=(60, 4))
        y = rng.normal(size=(60, 4)) @ np.diag([1.0, 2.0, 0.5, 1.5]) + 0.3
        a, b = gaussian_stats(x), gaussian_stats(y)
        assert frechet_distance(a, b) == pytest.approx(frechet_distance(b, a), rel=1e-9)

    def test_rejects_asymmetric_covariance(self):
        a = GaussianStats(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))
        with pytest.raises(ValueError):
            frechet_distance(a, a)

    def test_rejects_negative_eigenvalue(self):
        a = GaussianStats(np.zeros(2), np.array([[-1.0, 0.0], [0.0, 1.0]]))
        b = GaussianStats(np.zeros(2), np.eye(2))
        with pytest.raises(NonPsdError):
            frechet_distance(a, b)

    def test_monotone_in_mean_offset(self):
        rng = np.random.default_rng(5)
        base = rng.normal(size=(200, 8, 3)).astype(np.float32)
        enc = _FlatEncoder()
        prev = -1.0
        for offset in [0.0, 0.5, 1.0, 2.0, 4.0]:
            d = feature_frechet(base, base + offset, enc)
            assert d > prev
            prev = d

    def test_feature_frechet_identical_sets(self):
        x = np.random.default_rng(6).normal(size=(50, 4, 2))
        assert feature_frechet(x, x.copy(), _FlatEncoder()) < 1e-6


class TestDiversity:
    def test_identical_samples_zero(self):
        x = np.ones((5, 10, 3))
        assert diversity(x) == pytest.approx(0.0, abs=1e-12)

    def test_two_constant_samples(self):
        a = np.zeros((10, 3))
        b = np.full((10, 3), 2.0)
        # every coordinate differs by 2 -> distance = 2 * sqrt(30)
        assert diversity(np.stack([a, b])) == pytest.approx(2.0 * np.sqrt(30.0), rel=1e-12)

    def test_matches_naive_pairwise_oracle(self):
        rng = np.random.default_rng(7)
        x = rng.normal(size=(6, 4, 5))
        total, pairs = 0.0, 0
        for i in range(6):
            for j in range(i + 1, 6):
                total += np.linalg.norm((x[i] - x[j]).ravel())
                pairs += 1
        assert diversity(x) == pytest.approx(total / pairs, rel=1e-12)

    def test_needs_two_samples(self):
        with pytest.raises(MinSamplesError):
            diversity(np.zeros((1, 4)))


class TestRetrieval:
    def test_one_hot_embeddings_perfect(self):
        labels = np.tile(np.arange(4), 8)
        emb = one_hot(labels, 4).astype(np.float64)
        assert retrieval_top1(emb, emb, labels) == pytest.approx(1.0)
        table = retrieval_by_emotion(emb, emb, labels)
        assert table["audio_to_motion"] == pytest.approx(1.0)
        assert table["motion_to_audio"] == pytest.approx(1.0)
        assert set(table["per_emotion"]) == {0, 1, 2, 3}
        assert all(v == pytest.approx(1.0) for v in table["per_emotion"].values())

    def test_random_embeddings_near_chance(self):
        rng = np.random.default_rng(8)
        n = 2000
        labels = np.tile(np.arange(4), n // 4)
        a = rng.normal(size=(n, 16))
        m = rng.normal(size=(n, 16))
        acc = retrieval_top1(a, m, labels)
        assert abs(acc - 0.25) < 0.05

    def test_alignment_check(self):
        with pytest.raises(ValueError):
            retrieval_top1(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros(3))


class TestCosineHistograms:
    def test_clustered_embeddings_separate_means(self):
        rng = np.random.default_rng(9)
        labels = np.tile(np.arange(4), 25)
        centers = np.eye(4)
        a = centers[labels] + 0.1 * rng.normal(size=(100, 4))
        m = centers[labels] + 0.1 * rng.normal(size=(100, 4))
        out = cosine_histograms(a, m, labels)
        assert out["same_mean"] > out["diff_mean"]
        assert out["edges"].shape == (41,)
        assert out["same_hist"].sum() == int(np.sum(labels[:, None] == labels[None, :]))
        assert out["diff_hist"].sum() == 100 * 100 - out["same_hist"].sum()

    def test_all_values_within_bins(self):
        rng = np.random.default_rng(10)
        labels = np.array([0, 0, 1, 1])
        a = rng.normal(size=(4, 3))
        out = cosine_histograms(a, a, labels)
        assert out["same_hist"].sum() + out["diff_hist"].sum() == 16


class TestLipContentCorrelation:
    def _world_windows(self, n=6, noise=True):
        world = SynthWorld(13)
        clips = make_clips(world, n, seed=3)
        windows = windows_from_clips(clips, np.random.default_rng(0))
        return world, windows

    def test_noise_free_sample_above_099(self):
        world = SynthWorld(13)
        clips = make_clips(world, 1, seed=3)
        spec = clips[0].spec
        _, motion = world.generate_sample(spec, 2.0, noise=False)
        content = world.content_curve(spec.content_seed, np.arange(motion.shape[0]) / world.params.fps)
        r = lip_content_correlation(motion, content, world.fast_dims)
        assert r > 0.99

    def test_real_windows_high_correlation(self):
        world, windows = self._world_windows()
        for w in windows:
            content = window_content_curve(world, w)
            assert lip_content_correlation(w.motion, content, world.fast_dims) > 0.95

    def test_lagged_motion_recovered_within_max_lag(self):
        world, windows = self._world_windows(n=1)
        w = windows[0]
        content = window_content_curve(world, w)
        shifted = np.roll(np.asarray(w.motion, np.float64), 2, axis=0)
        r = lip_content_correlation(shifted, content, world.fast_dims, max_lag=2)
        # interior realigns at lag 2; the two wrapped frames keep it below 1
        assert r > 0.9

    def test_shuffled_frames_near_zero_mean(self):
        world, windows = self._world_windows(n=4)
        rng = np.random.default_rng(11)
        vals = []
        for _ in range(100):
            w = windows[rng.integers(len(windows))]
            content = window_content_curve(world, w)
            shuffled = np.asarray(w.motion)[rng.permutation(w.motion.shape[0])]
            vals.append(lip_content_correlation(shuffled, content, world.fast_dims))
        assert abs(float(np.mean(vals))) < 0.1

    def test_constant_input_rejected(self):
        world, windows = self._world_windows(n=1)
        w = windows[0]
        content = window_content_curve(world, w)
        with pytest.raises(ConstantInputError):
            lip_content_correlation(np.zeros_like(w.motion), content, world.fast_dims)

    def test_shape_checks(self):
        world, windows = self._world_windows(n=1)
        w = windows[0]
        content = window_content_curve(world, w)
        with pytest.raises(ValueError):
            lip_content_correlation(w.motion[:25], content, world.fast_dims)
        with pytest.raises(ValueError):
            lip_content_correlation(w.motion, content[:, :5], world.fast_dims)

    def test_batch_helper_averages(self):
        world, windows = self._world_windows(n=3)
        motions = np.stack([w.motion for w in windows])
        contents = np.stack([window_content_curve(world, w) for w in windows])
        r = mean_lip_content_correlation(motions, contents, world.fast_dims)
        singles = [lip_content_correlation(m, c, world.fast_dims) for m, c in zip(motions, contents)]
        assert r == pytest.approx(np.mean(singles))


SMALL_FEAT = FeatConfig(d_model=16, d_feat=8, n_heads=2, epochs=3, batch_size=16)


class TestCrossEntropy:
    def test_matches_naive_log_softmax(self):
        rng = np.random.default_rng(12)
        logits = rng.normal(size=(10, 4))
        labels = rng.integers(0, 4, size=10)
        val = cross_entropy(Tensor(logits.astype(np.float32)), labels).item()
        p = np.exp(logits - logits.max(-1, keepdims=True))
        p /= p.sum(-1, keepdims=True)
        expected = float(np.mean(-np.log(p[np.arange(10), labels])))
        assert val == pytest.approx(expected, rel=1e-5)

    def test_uniform_logits_log_k(self):
        val = cross_entropy(Tensor(np.zeros((6, 5), np.float32)), np.zeros(6, int)).item()
        assert val == pytest.approx(np.log(5.0), rel=1e-6)

    def test_confident_correct_logits_near_zero(self):
        labels = np.array([0, 1, 2])
        logits = 50.0 * one_hot(labels, 3)
        assert cross_entropy(Tensor(logits), labels).item() < 1e-6


class TestFeatureModels:
    def test_autoencoder_shapes_and_training(self):
        world = SynthWorld(13)
        clips = make_clips(world, 24, seed=5)
        model, hist = train_feature_encoder(world, clips, SMALL_FEAT, seed=1)
        assert len(hist) == SMALL_FEAT.epochs
        assert hist[-1]["loss"] < hist[0]["loss"]
        windows = windows_from_clips(clips[:4], np.random.default_rng(0))
        feats = model.features(np.stack([w.motion for w in windows]))
        assert feats.shape == (4, SMALL_FEAT.d_feat)
        assert np.isfinite(feats).all()

    def test_autoencoder_deterministic(self):
        world = SynthWorld(13)
        clips = make_clips(world, 8, seed=6)
        m1, h1 = train_feature_encoder(world, clips, SMALL_FEAT, seed=2)
        m2, h2 = train_feature_encoder(world, clips, SMALL_FEAT, seed=2)
        assert h1 == h2
        assert all(np.array_equal(a, b) for a, b in zip(m1.state_arrays(), m2.state_arrays()))

    def test_classifier_learns_train_set(self):
        world = SynthWorld(13)
        clips = make_clips(world, 64, seed=7)
        cfg = FeatConfig(d_model=16, d_feat=8, n_heads=2, epochs=12, batch_size=32, lr=3e-3)
        model, hist = train_emotion_classifier(world, clips, cfg, seed=3)
        assert hist[-1]["acc"] > 0.5
        windows = windows_from_clips(clips, np.random.default_rng(0))
        motion = np.stack([w.motion for w in windows])
        labels = np.array([w.spec.emotion_id for w in windows])
        assert model.accuracy(motion, labels) > 0.5
        feats = model.features(motion[:5])
        assert feats.shape == (5, cfg.d_feat)


class TestContractDetails:
    def test_gaussian_stats_records_sample_count(self):
        x = np.random.default_rng(20).normal(size=(17, 3))
        assert gaussian_stats(x).n == 17

    def test_feature_frechet_min_samples_names_minimum(self):
        x = np.random.default_rng(21).normal(size=(5, 4, 2))  # 8-dim flat features
        with pytest.raises(MinSamplesError, match="9"):
            feature_frechet(x, x, _FlatEncoder())

    def test_feature_frechet_order_invariant(self):
        rng = np.random.default_rng(22)
        real = rng.normal(size=(30, 3, 2))
        gen = rng.normal(size=(30, 3, 2)) + 0.5
        d1 = feature_frechet(real, gen, _FlatEncoder())
        perm = rng.permutation(30)
        d2 = feature_frechet(real[perm], gen[rng.permutation(30)], _FlatEncoder())
        assert d1 == pytest.approx(d2, rel=1e-9)

    def test_diversity_single_coordinate_offset_equals_c(self):
        a = np.zeros((4, 5))
        b = a.copy()
        b[2, 3] = 1.75  # differs by c in one frame-dim only
        assert diversity(np.stack([a, b])) == pytest.approx(1.75, rel=1e-12)

    def test_diversity_translation_invariant_and_linear_scaling(self):
        rng = np.random.default_rng(23)
        x = rng.normal(size=(5, 6, 2))
        base = diversity(x)
        assert diversity(x + 3.7) == pytest.approx(base, rel=1e-9)
        assert diversity(2.5 * x) == pytest.approx(2.5 * base, rel=1e-9)

    def test_retrieval_empty_set_rejected(self):
        with pytest.raises(MinSamplesError):
            retrieval_top1(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0))
        with pytest.raises(MinSamplesError):
            cosine_histograms(np.zeros((0, 4)), np.zeros((0, 4)), np.zeros(0))
