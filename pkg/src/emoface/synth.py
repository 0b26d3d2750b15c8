"""Synthetic paired audio-feature / facial-motion generator.

Every sample is built from known latents (emotion, intensity, identity,
content), so downstream models can be scored against exact ground truth.
Construction:

* slow dims ``[0, d_exp/2)`` carry an emotion-dependent offset+wiggle pattern
  (period >= 16 motion frames), scaled by intensity;
* fast dims ``[d_exp/2, d_exp)`` plus the 3 trailing jaw dims follow a
  band-limited content curve (period <= 4 motion frames) shared with the
  audio features; content channels are mixes of a few latent oscillator
  banks whose frequencies are fixed per world, with per-clip amps/phases;
* a small per-identity offset and Gaussian noise sit on top.

Audio features mix a time-constant emotion one-hot (times intensity) with the
same content curve at twice the motion frame rate. Vertices come from a fixed
seeded linear map whose lip rows load almost entirely on the fast+jaw dims.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DurationTooShortError(ValueError):
    """Requested clip duration is below the supported minimum."""


class DimensionMismatchError(ValueError):
    """Motion dims do not match the vertex map."""


MIN_DURATION_S = 0.4
WINDOW_FRAMES = 50
JAW_DIMS = 3
# Latent oscillator channels behind the visible content curve. Few enough
# that a 2 s window's content fits a small discrete code budget, many enough
# that averaging channel correlations suppresses the shuffled-frame null of
# the lip metric below 0.1 (rank 3 leaves the lag-maxed null right at 0.1).
N_CONTENT_LATENTS = 6


@dataclass(frozen=True)
class WorldParams:
    n_emotions: int = 4
    n_identities: int = 8
    d_exp: int = 16
    d_audio: int = 24
    n_vertices: int = 64
    sigma_noise: float = 0.05
    fps: int = 25
    audio_rate: int = 50

    @property
    def d_motion(self) -> int:
        return self.d_exp + JAW_DIMS

    @property
    def d_content(self) -> int:
        return self.d_exp // 2 + JAW_DIMS


@dataclass(frozen=True)
class LatentSpec:
    emotion_id: int
    intensity: float
    identity_id: int
    content_seed: int


@dataclass
class Clip:
    audio: np.ndarray
    motion: np.ndarray
    spec: LatentSpec
    duration: float


@dataclass
class Window:
    """Fixed-length training/eval window co-sliced from a clip."""

    audio: np.ndarray
    motion: np.ndarray
    mask: np.ndarray
    spec: LatentSpec
    start_frame: int = 0

    @property
    def n_valid(self) -> int:
        return int(self.mask.sum())


@dataclass
class VertexMap:
    weights: np.ndarray
    lip_vertex_ids: np.ndarray
    fast_dims: np.ndarray

    @property
    def lip_rows(self) -> np.ndarray:
        return (self.lip_vertex_ids[:, None] * 3 + np.arange(3)).reshape(-1)


class SynthWorld:
    """All fixed mixing patterns for one dataset universe, drawn from a seed."""

    def __init__(self, seed: int, params: WorldParams = WorldParams()):
        self.seed = int(seed)
        self.params = params
        p = params
        rng = np.random.default_rng([self.seed, 0xE0])

        n_slow = p.d_exp // 2
        self.slow_dims = np.arange(0, n_slow)
        self.fast_dims = np.arange(n_slow, p.d_exp + JAW_DIMS)

        # per-emotion slow-dim pattern: offset + amp*sin(2*pi*f*t + phase)
        self.emo_offset = rng.normal(0.0, 0.6, size=(p.n_emotions, n_slow))
        self.emo_amp = rng.uniform(0.15, 0.35, size=(p.n_emotions, n_slow))
        self.emo_phase = rng.uniform(0.0, 2 * np.pi, size=(p.n_emotions, n_slow))
        self.emo_freq = 0.5 + 0.25 * np.arange(p.n_emotions)  # Hz, periods >= 20 frames

        self.identity_offset = rng.normal(0.0, 0.12, size=(p.n_identities, p.d_motion))
        self.fast_gain = rng.uniform(0.8, 1.2, size=p.d_content)

        self.audio_emo_mix = rng.normal(0.0, 0.8, size=(p.d_audio, p.n_emotions))
        self.audio_content_mix = rng.normal(0.0, 0.5 / np.sqrt(p.d_content), size=(p.d_audio, p.d_content))

        self.vertex_map = self._make_vertex_map(rng)

        # World-level content frequency bank: every clip's content is a mix of
        # the same few latent band-limited channels (periods <= 4 motion
        # frames); clips differ only in per-channel amplitudes and phases drawn
        # from their content_seed. Keeping the content manifold low-rank bounds
        # the information a 2 s window carries, so discrete sequence models can
        # represent content faithfully instead of lossily compressing dozens of
        # independent oscillators.
        k = N_CONTENT_LATENTS
        self.content_freqs = rng.uniform(6.5, 11.0, size=(k, 3))
        # Signed assignment rather than a dense mix: channels driven by
        # different latents stay uncorrelated (each latent has its own
        # frequency triple), which keeps the channel-averaged shuffled-frame
        # null of the lip metric low; dense mixing couples every channel's
        # null fluctuation through the shared permutation.
        assign = np.tile(np.arange(k), (p.d_content + k - 1) // k)[: p.d_content]
        mix = np.zeros((p.d_content, k))
        mix[np.arange(p.d_content), assign] = rng.choice([-1.0, 1.0], size=p.d_content)
        self.content_chan_mix = mix

    def _make_vertex_map(self, rng) -> VertexMap:
        p = self.params
        w = rng.normal(0.0, 0.01, size=(3 * p.n_vertices, p.d_motion))
        lip_ids = np.sort(rng.choice(p.n_vertices, size=12, replace=False))
        lip_rows = (lip_ids[:, None] * 3 + np.arange(3)).reshape(-1)
        slow = self.slow_dims
        fast = self.fast_dims
        w[np.ix_(lip_rows, fast)] = rng.normal(0.0, 0.015, size=(lip_rows.size, fast.size))
        fast_l1 = np.abs(w[np.ix_(lip_rows, fast)]).sum(axis=1)
        slow_l1 = np.abs(w[np.ix_(lip_rows, slow)]).sum(axis=1)
        # rescale slow entries so >= 95% of each lip row's L1 mass is fast+jaw
        scale = (fast_l1 * (0.05 / 0.95)) / np.maximum(slow_l1, 1e-12)
        w[np.ix_(lip_rows, slow)] *= scale[:, None]
        return VertexMap(weights=w.astype(np.float64), lip_vertex_ids=lip_ids, fast_dims=fast)

    # ------------------------------------------------------------------
    # generation

    def content_curve(self, content_seed: int, times: np.ndarray) -> np.ndarray:
        """Band-limited trajectory (len(times), d_content), pure in the seed."""
        rng = np.random.default_rng([self.seed, int(content_seed), 0xC0])
        k = N_CONTENT_LATENTS
        amps = rng.uniform(0.3, 1.0, size=(k, 3))
        amps *= 0.7 / np.sqrt(0.5 * (amps**2).sum(axis=1, keepdims=True))
        phases = rng.uniform(0.0, 2 * np.pi, size=(k, 3))
        arg = 2 * np.pi * self.content_freqs[None] * times[:, None, None] + phases[None]
        latent = (amps[None] * np.sin(arg)).sum(axis=2)
        return latent @ self.content_chan_mix.T

    def generate_sample(self, spec: LatentSpec, duration: float, noise: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """Return paired (audio (2T, d_audio), motion (T, d_exp+3)) float32 arrays."""
        if duration < MIN_DURATION_S:
            raise DurationTooShortError(f"duration {duration}s is below the {MIN_DURATION_S}s minimum")
        p = self.params
        t_frames = int(round(duration * p.fps))
        t_audio = 2 * t_frames
        motion_times = np.arange(t_frames) / p.fps
        audio_times = np.arange(t_audio) / p.audio_rate

        e = spec.emotion_id
        motion = np.zeros((t_frames, p.d_motion))
        wave = np.sin(2 * np.pi * self.emo_freq[e] * motion_times[:, None] + self.emo_phase[e][None])
        motion[:, self.slow_dims] = spec.intensity * (self.emo_offset[e][None] + self.emo_amp[e][None] * wave)
        motion[:, self.fast_dims] = self.fast_gain[None] * self.content_curve(spec.content_seed, motion_times)
        motion += self.identity_offset[spec.identity_id][None]

        onehot = np.zeros(p.n_emotions)
        onehot[e] = spec.intensity
        audio = np.broadcast_to(self.audio_emo_mix @ onehot, (t_audio, p.d_audio)).copy()
        audio += self.content_curve(spec.content_seed, audio_times) @ self.audio_content_mix.T

        if noise:
            nrng = np.random.default_rng([self.seed, int(spec.content_seed), spec.emotion_id, spec.identity_id, 0xA3])
            motion += nrng.normal(0.0, p.sigma_noise, size=motion.shape)
            audio += nrng.normal(0.0, p.sigma_noise, size=audio.shape)
        return audio.astype(np.float32), motion.astype(np.float32)

    def vertices(self, motion: np.ndarray) -> np.ndarray:
        """Per-frame linear vertex positions, (T, 3*n_vertices)."""
        motion = np.asarray(motion)
        if motion.shape[-1] != self.params.d_motion:
            raise DimensionMismatchError(
                f"motion dim {motion.shape[-1]} does not match vertex map dim {self.params.d_motion}"
            )
        return motion @ self.vertex_map.weights.T


def make_clips(
    world: SynthWorld,
    n: int,
    seed: int,
    duration_range: tuple[float, float] = (2.2, 3.2),
    intensity_range: tuple[float, float] = (0.5, 1.0),
) -> list[Clip]:
    """Draw n clips with uniform random latents from a split-level seed."""
    rng = np.random.default_rng([world.seed, int(seed), 0xD5])
    p = world.params
    clips = []
    for _ in range(n):
        spec = LatentSpec(
            emotion_id=int(rng.integers(p.n_emotions)),
            intensity=float(rng.uniform(*intensity_range)),
            identity_id=int(rng.integers(p.n_identities)),
            content_seed=int(rng.integers(2**31 - 1)),
        )
        duration = float(rng.uniform(*duration_range))
        audio, motion = world.generate_sample(spec, duration)
        clips.append(Clip(audio=audio, motion=motion, spec=spec, duration=duration))
    return clips


def window_clip(
    audio: np.ndarray,
    motion: np.ndarray,
    spec: LatentSpec,
    rng: np.random.Generator | None = None,
    target_frames: int = WINDOW_FRAMES,
) -> Window:
    """Co-slice a paired clip to a fixed-length window.

    Longer clips are randomly co-sliced (start 0 without an rng); shorter ones
    are zero-padded at the tail with the mask marking real frames.
    """
    t = motion.shape[0]
    audio_per_motion = audio.shape[0] // t if t else 2
    if t == target_frames:
        return Window(audio=audio, motion=motion, mask=np.ones(t, dtype=np.float32), spec=spec)
    if t > target_frames:
        hi = t - target_frames
        start = int(rng.integers(0, hi + 1)) if rng is not None else 0
        a0 = start * audio_per_motion
        return Window(
            audio=audio[a0 : a0 + target_frames * audio_per_motion],
            motion=motion[start : start + target_frames],
            mask=np.ones(target_frames, dtype=np.float32),
            spec=spec,
            start_frame=start,
        )
    pad_m = np.zeros((target_frames, motion.shape[1]), dtype=motion.dtype)
    pad_m[:t] = motion
    pad_a = np.zeros((target_frames * audio_per_motion, audio.shape[1]), dtype=audio.dtype)
    pad_a[: audio.shape[0]] = audio
    mask = np.zeros(target_frames, dtype=np.float32)
    mask[:t] = 1.0
    return Window(audio=pad_a, motion=pad_m, mask=mask, spec=spec)


def windows_from_clips(clips: list[Clip], rng: np.random.Generator | None) -> list[Window]:
    """One window per clip; pass an rng for random offsets, None for start-0."""
    return [window_clip(c.audio, c.motion, c.spec, rng=rng) for c in clips]


def window_content_curve(world: SynthWorld, window: Window) -> np.ndarray:
    """Ground-truth content curve aligned with a window's motion frames."""
    t = np.arange(window.start_frame, window.start_frame + window.motion.shape[0]) / world.params.fps
    return world.content_curve(window.spec.content_seed, t)
