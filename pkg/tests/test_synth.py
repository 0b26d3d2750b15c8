"""Synthetic world: construction guarantees, windowing, file round-trips."""

import numpy as np
import pytest

from emoface import dataio, synth
from emoface.dataio import ChecksumError, DatasetVersionError, TruncatedFileError
from emoface.synth import LatentSpec, SynthWorld, WorldParams, make_clips, window_clip


@pytest.fixture(scope="module")
def world():
    return SynthWorld(seed=7)


def spec(emotion=1, intensity=1.0, identity=2, content=123):
    return LatentSpec(emotion_id=emotion, intensity=intensity, identity_id=identity, content_seed=content)


class TestGeneration:
    def test_shapes_and_rates(self, world):
        audio, motion = world.generate_sample(spec(), duration=2.0)
        assert motion.shape == (50, 19)
        assert audio.shape == (100, 24)
        assert motion.dtype == np.float32 and audio.dtype == np.float32

    def test_too_short_rejected(self, world):
        with pytest.raises(synth.DurationTooShortError):
            world.generate_sample(spec(), duration=0.3)

    def test_deterministic(self, world):
        a1, m1 = world.generate_sample(spec(), 2.0)
        a2, m2 = world.generate_sample(spec(), 2.0)
        assert np.array_equal(a1, a2) and np.array_equal(m1, m2)

    def test_zero_intensity_removes_emotion(self, world):
        _, motion = world.generate_sample(spec(intensity=0.0), 2.0, noise=False)
        expected = world.identity_offset[2][None].repeat(50, axis=0).astype(np.float32).copy()
        fast = world.fast_dims
        t = np.arange(50) / 25.0
        expected[:, fast] += (world.fast_gain[None] * world.content_curve(123, t)).astype(np.float32)
        assert np.allclose(motion, expected, atol=1e-5)
        assert np.allclose(motion[:, world.slow_dims], world.identity_offset[2][world.slow_dims], atol=1e-5)

    def test_emotion_changes_only_slow_dims(self, world):
        _, m1 = world.generate_sample(spec(emotion=0), 2.0, noise=False)
        _, m2 = world.generate_sample(spec(emotion=3), 2.0, noise=False)
        assert np.allclose(m1[:, world.fast_dims], m2[:, world.fast_dims], atol=1e-6)
        assert not np.allclose(m1[:, world.slow_dims], m2[:, world.slow_dims], atol=1e-2)

    def test_content_seed_shared_across_emotions(self, world):
        a1, _ = world.generate_sample(spec(emotion=0), 2.0, noise=False)
        a2, _ = world.generate_sample(spec(emotion=3), 2.0, noise=False)
        # emotion enters audio as a time-constant offset; content is the rest
        assert np.allclose(a1 - a1.mean(axis=0), a2 - a2.mean(axis=0), atol=1e-4)

    def test_slow_dims_slower_than_fast_dims(self, world):
        rng = np.random.default_rng(0)
        doms_slow, doms_fast = [], []
        for _ in range(16):
            s = spec(emotion=int(rng.integers(4)), content=int(rng.integers(10**6)))
            _, motion = world.generate_sample(s, 4.0, noise=False)
            centered = motion - motion.mean(axis=0)
            spectrum = np.abs(np.fft.rfft(centered, axis=0))
            spectrum[0] = 0.0
            freqs = np.fft.rfftfreq(motion.shape[0], d=1 / 25.0)
            dom = freqs[np.argmax(spectrum, axis=0)]
            doms_slow.append(dom[world.slow_dims].mean())
            doms_fast.append(dom[world.fast_dims].mean())
        assert np.mean(doms_slow) < np.mean(doms_fast)
        assert np.mean(doms_fast) > 6.0 and np.mean(doms_slow) < 2.0

    def test_emotion_linearly_recoverable(self, world):
        clips = make_clips(world, 160, seed=11, intensity_range=(1.0, 1.0))
        feats = np.stack([c.motion[:, world.slow_dims].mean(axis=0) for c in clips])
        labels = np.array([c.spec.emotion_id for c in clips])
        train, test = slice(0, 120), slice(120, 160)
        x = np.hstack([feats, np.ones((len(clips), 1))])
        y = np.eye(4)[labels]
        w, *_ = np.linalg.lstsq(x[train], y[train], rcond=None)
        acc = np.mean(np.argmax(x[test] @ w, axis=1) == labels[test])
        assert acc > 0.95

    def test_content_recoverable(self, world):
        clip = make_clips(world, 1, seed=3)[0]
        t = np.arange(clip.motion.shape[0]) / 25.0
        curve = world.content_curve(clip.spec.content_seed, t)
        corrs = []
        for j, d in enumerate(world.fast_dims):
            corrs.append(np.corrcoef(clip.motion[:, d], curve[:, j])[0, 1])
        assert np.mean(corrs) > 0.9

    def test_vertices_linear(self, world):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(10, 19))
        b = rng.normal(size=(10, 19))
        assert np.allclose(world.vertices(np.zeros((4, 19))), 0.0)
        assert np.allclose(world.vertices(a + b), world.vertices(a) + world.vertices(b), atol=1e-10)
        naive = np.stack([world.vertex_map.weights @ a[t] for t in range(10)])
        assert np.allclose(world.vertices(a), naive, atol=1e-12)
        with pytest.raises(synth.DimensionMismatchError):
            world.vertices(np.zeros((4, 7)))

    def test_lip_rows_mass_on_fast_dims(self, world):
        w = world.vertex_map.weights
        rows = world.vertex_map.lip_rows
        fast_mass = np.abs(w[np.ix_(rows, world.fast_dims)]).sum(axis=1)
        total = np.abs(w[rows]).sum(axis=1)
        assert np.all(fast_mass / total >= 0.9)


class TestWindowing:
    def test_exact_length_unchanged(self, world):
        audio, motion = world.generate_sample(spec(), 2.0)
        win = window_clip(audio, motion, spec())
        assert np.array_equal(win.motion, motion) and np.array_equal(win.audio, audio)
        assert win.mask.all() and win.start_frame == 0

    def test_long_clip_random_coslice(self, world):
        audio, motion = world.generate_sample(spec(), 3.0)
        win = window_clip(audio, motion, spec(), rng=np.random.default_rng(0))
        assert win.motion.shape == (50, 19) and win.audio.shape == (100, 24)
        s = win.start_frame
        assert np.array_equal(win.motion, motion[s : s + 50])
        assert np.array_equal(win.audio, audio[2 * s : 2 * s + 100])

    def test_short_clip_padded_with_mask(self, world):
        audio, motion = world.generate_sample(spec(), 1.0)
        win = window_clip(audio, motion, spec())
        assert win.motion.shape == (50, 19)
        assert win.mask[:25].all() and not win.mask[25:].any()
        assert np.allclose(win.motion[25:], 0.0) and np.allclose(win.audio[50:], 0.0)

    def test_window_content_curve_alignment(self, world):
        clip = make_clips(world, 1, seed=9)[0]
        win = window_clip(clip.audio, clip.motion, clip.spec, rng=np.random.default_rng(4))
        curve = synth.window_content_curve(world, win)
        corr = np.corrcoef(win.motion[:, world.fast_dims[0]], curve[:, 0])[0, 1]
        assert corr > 0.9


class TestDataIO:
    def test_round_trip_bitwise(self, world, tmp_path):
        clips = make_clips(world, 10, seed=1)
        dataio.write_dataset(str(tmp_path / "ds"), world, clips)
        world2, loaded = dataio.read_dataset(str(tmp_path / "ds"))
        assert world2.seed == world.seed
        for a, b in zip(clips, loaded):
            assert np.array_equal(a.audio, b.audio)
            assert np.array_equal(a.motion, b.motion)
            assert a.spec == b.spec and a.duration == b.duration

    def test_corrupt_payload_byte(self, world, tmp_path):
        clips = make_clips(world, 2, seed=2)
        dataio.write_dataset(str(tmp_path / "ds"), world, clips)
        victim = tmp_path / "ds" / "samples" / "00001.mot"
        raw = bytearray(victim.read_bytes())
        raw[-1] ^= 0xFF
        victim.write_bytes(bytes(raw))
        with pytest.raises(ChecksumError, match="00001.mot"):
            dataio.read_dataset(str(tmp_path / "ds"))

    def test_truncated_file(self, world, tmp_path):
        clips = make_clips(world, 1, seed=2)
        dataio.write_dataset(str(tmp_path / "ds"), world, clips)
        victim = tmp_path / "ds" / "samples" / "00000.aud"
        victim.write_bytes(victim.read_bytes()[:-10])
        with pytest.raises(TruncatedFileError):
            dataio.read_dataset(str(tmp_path / "ds"))

    def test_unknown_version_no_partial_load(self, world, tmp_path):
        import json

        clips = make_clips(world, 1, seed=2)
        dataio.write_dataset(str(tmp_path / "ds"), world, clips)
        mpath = tmp_path / "ds" / "manifest.json"
        manifest = json.loads(mpath.read_text())
        manifest["format_version"] = 99
        mpath.write_text(json.dumps(manifest))
        with pytest.raises(DatasetVersionError):
            dataio.read_dataset(str(tmp_path / "ds"))

    def test_array_version_rejected(self, tmp_path):
        path = str(tmp_path / "x.aud")
        blob = bytearray(dataio.array_bytes(np.ones((3, 2), dtype=np.float32)))
        blob[8] = 99
        (tmp_path / "x.aud").write_bytes(bytes(blob))
        with pytest.raises(DatasetVersionError):
            dataio.read_array(path)

    def test_checkpoint_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays = {"a": rng.normal(size=(3, 4)).astype(np.float32), "b": rng.normal(size=5).astype(np.float32)}
        path = str(tmp_path / "model.ckpt")
        dataio.save_checkpoint(path, arrays, meta={"epochs": 3})
        loaded, meta = dataio.load_checkpoint(path)
        assert meta == {"epochs": 3}
        assert list(loaded) == ["a", "b"]
        for k in arrays:
            assert np.array_equal(arrays[k], loaded[k])

    def test_model_save_load(self, tmp_path):
        from emoface.nn import Mlp

        m1 = Mlp(np.random.default_rng(0), 4, 8, 2)
        m2 = Mlp(np.random.default_rng(1), 4, 8, 2)
        path = str(tmp_path / "mlp.ckpt")
        dataio.save_model(path, m1, meta={"kind": "mlp"})
        meta = dataio.load_model(path, m2)
        assert meta["kind"] == "mlp"
        for a, b in zip(m1.state_arrays(), m2.state_arrays()):
            assert np.array_equal(a, b)
