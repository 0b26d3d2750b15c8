"""Quantizer, two-level prior, smoothing, and baseline priors."""

import numpy as np
import pytest
from scipy.signal import savgol_filter

from emoface import tensor as T
from emoface.baselines import SingleVqvae, VaePrior, single_vq_loss, vae_loss
from emoface.prior import (
    InvalidSmoothingError,
    PaddingRequiredError,
    PriorConfig,
    ThvqvaeModel,
    smooth,
    train_thvqvae,
    vq_loss,
)
from emoface.quantizer import Codebook, commitment_loss
from emoface.synth import SynthWorld, make_clips
from emoface.tensor import GradTape, Tensor, grad_of

SMALL = PriorConfig(n_top=8, n_bottom=8, c_top=4, c_bottom=8, q_bottom=2, q_top=5, n_heads=2, epochs=2, batch_size=8, warmup_steps=5)


def book(n=8, c=3, seed=0):
    return Codebook(np.random.default_rng(seed), n, c)


class TestCodebook:
    def test_exact_code_row_zero_residual(self):
        b = book()
        f = Tensor(b.codes[7][None].copy())
        q, idx = b.quantize_st(f)
        assert idx[0] == 7
        assert np.allclose(q.data, f.data)

    def test_indices_match_exhaustive_scan(self):
        b = book(n=32, c=6, seed=1)
        rows = np.random.default_rng(2).normal(size=(100, 6)).astype(np.float32)
        idx = b.assign(rows)
        for i in range(100):
            dists = np.linalg.norm(b.codes - rows[i], axis=1)
            assert idx[i] == np.argmin(dists)

    def test_tie_breaks_to_lowest_index(self):
        b = book(n=4, c=2)
        b.codes = np.array([[1.0, 0.0], [3.0, 0.0], [1.0, 0.0], [9.0, 9.0]], dtype=np.float32)
        idx = b.assign(np.array([[2.0, 0.0]], dtype=np.float32))
        assert idx[0] == 0

    def test_straight_through_gradient_is_identity(self):
        b = book(n=8, c=3, seed=3)
        f = Tensor(np.random.default_rng(4).normal(size=(2, 5, 3)).astype(np.float32), requires_grad=True)
        w = np.random.default_rng(5).normal(size=(2, 5, 3)).astype(np.float32)
        with GradTape() as tape:
            q, _ = b.quantize_st(f)
            loss = T.sum_(q * Tensor(w))
        tape.backward(loss)
        assert np.array_equal(f.grad, w)

    def test_straight_through_matches_identity_path_at_coincident_point(self):
        b = book(n=4, c=2, seed=6)
        f0 = b.codes[2][None].copy()

        def run(quantized):
            f = Tensor(f0.copy(), requires_grad=True)
            with GradTape() as tape:
                h = b.quantize_st(f)[0] if quantized else f
                loss = T.sum_(T.tanh(h) * h)
            tape.backward(loss)
            return f.grad

        assert np.allclose(run(True), run(False), atol=1e-7)

    def test_ema_update_hand_computed(self):
        b = book(n=3, c=2, seed=7)
        b.codes = np.array([[0.0, 0.0], [1.0, 1.0], [-1.0, 0.5]], dtype=np.float32)
        b.ema_counts = np.array([1.0, 2.0, 1.0])
        b.ema_sums = b.codes.astype(np.float64) * b.ema_counts[:, None]
        feats = np.array([[0.2, 0.0], [0.0, 0.2], [2.0, 2.0]], dtype=np.float32)
        idx = np.array([0, 0, 1])
        b.ema_update(feats, idx)
        g = 0.99
        exp_counts = np.array([g * 1 + 0.01 * 2, g * 2 + 0.01 * 1, g * 1])
        assert np.allclose(b.ema_counts, exp_counts)
        exp_sum0 = g * np.array([0.0, 0.0]) + 0.01 * np.array([0.2, 0.2])
        assert np.allclose(b.ema_sums[0], exp_sum0)
        assert np.allclose(b.codes[0], exp_sum0 / max(exp_counts[0], 1e-5), atol=1e-6)

    def test_unassigned_code_only_decays(self):
        b = book(n=3, c=2, seed=8)
        before_code = b.codes[2].copy()
        before_count = b.ema_counts[2]
        b.ema_update(np.array([[0.1, 0.1]], dtype=np.float32), np.array([0]))
        assert np.allclose(b.codes[2], before_code, atol=1e-6)
        assert b.ema_counts[2] == pytest.approx(0.99 * before_count)

    def test_constant_feature_fixed_point(self):
        b = book(n=4, c=2, seed=9)
        f = np.array([[0.7, -0.3]], dtype=np.float32)
        target_idx = b.assign(f)[0]
        for _ in range(500):
            b.ema_update(f, np.array([target_idx]))
        assert np.allclose(b.codes[target_idx], f[0], atol=1e-4)

    def test_codes_follow_ema_ratio_invariant(self):
        b = book(n=6, c=4, seed=10)
        rng = np.random.default_rng(11)
        for _ in range(10):
            feats = rng.normal(size=(20, 4)).astype(np.float32)
            b.ema_update(feats, b.assign(feats))
            expected = b.ema_sums / np.maximum(b.ema_counts, 1e-5)[:, None]
            assert np.allclose(b.codes, expected, atol=1e-6)

    def test_perplexity(self):
        b = book(n=4, c=2)
        assert b.perplexity(np.array([0, 1, 2, 3])) == pytest.approx(4.0)
        assert b.perplexity(np.zeros(10, dtype=int)) == pytest.approx(1.0)

    def test_reseed_dead(self):
        b = book(n=4, c=2, seed=12)
        b.ema_counts = np.array([1.0, 1e-6, 1.0, 1e-9])
        pool = np.array([[5.0, 5.0]], dtype=np.float32)
        n = b.reseed_dead(np.random.default_rng(0), pool)
        assert n == 2
        assert np.allclose(b.codes[1], [5.0, 5.0], atol=1e-5)
        assert np.allclose(b.codes[3], [5.0, 5.0], atol=1e-5)
        assert b.ema_counts[1] == pytest.approx(0.1)

    def test_commitment_gradient(self):
        b = book(n=8, c=3, seed=13)
        f = Tensor(np.random.default_rng(14).normal(size=(4, 3)), requires_grad=True)
        with GradTape() as tape:
            q, _ = b.quantize_st(f)
            loss = commitment_loss(f, q)
        tape.backward(loss)
        expected = 2.0 * (f.data - q.data) / f.size
        assert np.allclose(f.grad, expected, atol=1e-6)


@pytest.fixture(scope="module")
def world():
    return SynthWorld(seed=5)


class TestHierarchy:
    def test_shapes(self, world):
        model = ThvqvaeModel(np.random.default_rng(0), 19, SMALL)
        x = np.zeros((2, 50, 19), dtype=np.float32)
        z_b, z_t = model.encode_hierarchy(x)
        assert z_b.shape == (2, 25, 4)
        assert z_t.shape == (2, 5, 4)
        out = model.forward(Tensor(x))
        assert out["recon"].shape == (2, 50, 19)
        assert out["bottom_pre"].shape == (2, 25, 8)
        assert out["idx_t"].shape == (2, 5) and out["idx_b"].shape == (2, 25)

    def test_shape_arithmetic_example(self):
        cfg = PriorConfig(n_top=8, n_bottom=8, c_top=4, c_bottom=8, q_bottom=2, q_top=4, n_heads=2)
        model = ThvqvaeModel(np.random.default_rng(0), 19, cfg)
        z_b, z_t = model.encode_hierarchy(np.zeros((1, 32, 19), dtype=np.float32))
        assert z_b.shape == (1, 16, 4) and z_t.shape == (1, 4, 4)

    def test_indivisible_length_rejected(self):
        model = ThvqvaeModel(np.random.default_rng(0), 19, SMALL)
        with pytest.raises(PaddingRequiredError):
            model.encode_hierarchy(np.zeros((1, 47, 19), dtype=np.float32))

    def test_mismatched_decode_lengths_rejected(self):
        model = ThvqvaeModel(np.random.default_rng(0), 19, SMALL)
        with pytest.raises(PaddingRequiredError):
            model.decode_codes(Tensor(np.zeros((1, 5, 4))), Tensor(np.zeros((1, 20, 8))))

    def test_upsample_repeats(self):
        y = T.repeat_time(Tensor(np.array([[1.0], [2.0]])), 2)
        assert np.allclose(y.data, [[1.0], [1.0], [2.0], [2.0]])

    def test_conv_locality_before_mixing(self):
        model = ThvqvaeModel(np.random.default_rng(1), 19, SMALL)
        rng = np.random.default_rng(2)
        x1 = rng.normal(size=(1, 50, 19)).astype(np.float32)
        x2 = x1.copy()
        x2[0, :SMALL.q_bottom] += 1.0
        h1 = model.enc_bottom.conv(Tensor(x1)).data
        h2 = model.enc_bottom.conv(Tensor(x2)).data
        changed = np.any(np.abs(h1 - h2) > 1e-7, axis=-1)[0]
        assert changed[0] and not changed[1:].any()

    def test_encoder_gradients_flow(self, world):
        model = ThvqvaeModel(np.random.default_rng(3), 19, SMALL)
        x = np.random.default_rng(4).normal(size=(2, 50, 19)).astype(np.float32) * 0.3
        with GradTape() as tape:
            out = model.forward(Tensor(x))
            loss, _ = vq_loss(model, x, out, world.vertex_map.weights)
        tape.backward(loss)
        norms = [np.linalg.norm(grad_of(p)) for p in model.enc_bottom.parameters() + model.enc_top.parameters()]
        assert all(np.isfinite(n) for n in norms)
        assert sum(n > 0 for n in norms) > len(norms) * 0.8

    def test_perfect_reconstruction_zero_loss(self, world):
        model = ThvqvaeModel(np.random.default_rng(5), 19, SMALL)
        x = np.random.default_rng(6).normal(size=(1, 50, 19)).astype(np.float32)
        out = {
            "recon": Tensor(x.copy()),
            "z_t_hat": Tensor(model.book_top.codes[:5][None].copy()),
            "z_t_q": Tensor(model.book_top.codes[:5][None].copy()),
            "bottom_pre": Tensor(model.book_bottom.codes[:25][None].copy()),
            "z_b_q": Tensor(model.book_bottom.codes[:25][None].copy()),
        }
        loss, parts = vq_loss(model, x, out, world.vertex_map.weights)
        assert loss.item() == pytest.approx(0.0, abs=1e-8)

    def test_round_trip_via_indices(self):
        model = ThvqvaeModel(np.random.default_rng(7), 19, SMALL)
        x = np.random.default_rng(8).normal(size=(2, 50, 19)).astype(np.float32)
        idx_t, idx_b = model.encode_indices(x)
        recon = model.decode_indices(idx_t, idx_b)
        assert recon.shape == x.shape
        assert np.allclose(recon, model.reconstruct(x), atol=1e-6)


class TestSmoothing:
    def test_polynomial_preserved(self):
        t = np.arange(30, dtype=np.float64)
        x = (0.5 * t**2 - 3 * t + 1)[:, None]
        y = smooth(x, window=5, polyorder=2)
        assert np.allclose(y[2:-2], x[2:-2], atol=1e-6)

    def test_constant_unchanged(self):
        x = np.full((20, 3), 2.5)
        assert np.allclose(smooth(x), x, atol=1e-10)

    def test_matches_naive_least_squares(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=40)
        window, poly = 7, 3
        y = smooth(x[:, None], window=window, polyorder=poly)[:, 0]
        half = window // 2
        for center in range(half, 40 - half):
            seg = x[center - half : center + half + 1]
            design = np.vander(np.arange(-half, half + 1), poly + 1, increasing=True)
            coef, *_ = np.linalg.lstsq(design, seg, rcond=None)
            assert y[center] == pytest.approx(coef[0], abs=1e-8)

    def test_mirror_endpoints(self):
        x = np.random.default_rng(1).normal(size=(15, 2))
        expected = savgol_filter(x, 5, 2, axis=0, mode="mirror")
        assert np.allclose(smooth(x, 5, 2), expected)

    @pytest.mark.parametrize("window,poly", [(4, 2), (5, 5), (1, 0), (51, 2)])
    def test_invalid_settings_rejected(self, window, poly):
        with pytest.raises(InvalidSmoothingError):
            smooth(np.zeros((20, 2)), window=window, polyorder=poly)


class TestTraining:
    def test_zero_epochs_keeps_init(self, world):
        clips = make_clips(world, 6, seed=1, duration_range=(2.0, 2.4))
        cfg = PriorConfig(n_top=8, n_bottom=8, c_top=4, c_bottom=8, n_heads=2, epochs=0, batch_size=4)
        model, history = train_thvqvae(world, clips, [], cfg, seed=0)
        ref = ThvqvaeModel(np.random.default_rng([0, 0xB0, 0]), 19, cfg)
        for a, b in zip(model.state_arrays(), ref.state_arrays()):
            assert np.array_equal(a, b)
        assert np.array_equal(model.book_top.codes, ref.book_top.codes)
        assert history == []

    def test_deterministic_and_loss_decreases(self, world):
        clips = make_clips(world, 16, seed=2, duration_range=(2.0, 2.6))
        cfg = PriorConfig(n_top=8, n_bottom=8, c_top=4, c_bottom=8, n_heads=2, epochs=4, batch_size=8, warmup_steps=4)
        m1, h1 = train_thvqvae(world, clips, [], cfg, seed=3)
        m2, h2 = train_thvqvae(world, clips, [], cfg, seed=3)
        for a, b in zip(m1.state_arrays(), m2.state_arrays()):
            assert np.array_equal(a, b)
        assert np.array_equal(m1.book_top.codes, m2.book_top.codes)
        assert h1 == h2
        assert h1[-1]["rec_vertex_mse"] < h1[0]["rec_vertex_mse"]


class TestBaselines:
    def test_vae_shapes_and_mean_path(self, world):
        model = VaePrior(np.random.default_rng(0), 19, SMALL)
        x = np.random.default_rng(1).normal(size=(2, 50, 19)).astype(np.float32)
        out = model.forward(Tensor(x), rng=None)
        assert out["recon"].shape == (2, 50, 19)
        r1 = model.reconstruct(x)
        r2 = model.reconstruct(x)
        assert np.array_equal(r1, r2)
        loss, parts = vae_loss(model, x, out, world.vertex_map.weights)
        assert np.isfinite(loss.item()) and parts["kl"] >= 0.0

    def test_single_vq_budget(self, world):
        model = SingleVqvae(np.random.default_rng(0), 19, SMALL)
        assert model.book.n_codes == SMALL.n_top + SMALL.n_bottom
        x = np.random.default_rng(1).normal(size=(2, 50, 19)).astype(np.float32)
        out = model.forward(Tensor(x))
        assert out["recon"].shape == (2, 50, 19)
        loss, _ = single_vq_loss(model, x, out, world.vertex_map.weights)
        assert np.isfinite(loss.item())
