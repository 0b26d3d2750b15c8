"""Frozen feature extractors backing the distribution metrics.

Two small networks trained once on real motion windows and then held fixed:
a motion autoencoder whose bottleneck features feed the general motion
distribution distance, and an emotion classifier whose penultimate features
feed the emotion-conditioned distance (its accuracy on generated motion is
reported alongside).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Adam, Conv1d, Linear, Module, TransformerStack, UpConv1d, clip_grad_norm, one_hot
from .synth import Clip, SynthWorld, windows_from_clips
from .tensor import GradTape, Tensor


@dataclass(frozen=True)
class FeatConfig:
    d_model: int = 32
    d_feat: int = 16
    n_heads: int = 4
    down: int = 2
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3


class _Trunk(Module):
    """Strided conv + one transformer layer + temporal mean pooling."""

    def __init__(self, rng, d_in: int, cfg: FeatConfig):
        self.down = Conv1d(rng, d_in, cfg.d_model, kernel=cfg.down, stride=cfg.down)
        self.mix = TransformerStack(rng, cfg.d_model, cfg.n_heads, 1)

    def __call__(self, x: Tensor) -> Tensor:
        return T.mean(self.mix(self.down(x)), axis=-2)


class MotionVae(Module):
    """Window VAE; the posterior mean is the metric feature space."""

    def __init__(self, rng, d_motion: int, n_frames: int, cfg: FeatConfig = FeatConfig()):
        self.cfg = cfg
        self.n_frames = n_frames
        self.enc = _Trunk(rng, d_motion, cfg)
        self.mu_head = Linear(rng, cfg.d_model, cfg.d_feat)
        self.lv_head = Linear(rng, cfg.d_model, cfg.d_feat)
        self.expand = Linear(rng, cfg.d_feat, cfg.d_model)
        self.mix = TransformerStack(rng, cfg.d_model, cfg.n_heads, 1)
        self.up = UpConv1d(rng, cfg.d_model, d_motion, cfg.down)

    def encode(self, x: Tensor) -> tuple[Tensor, Tensor]:
        h = self.enc(x)
        return self.mu_head(h), self.lv_head(h)

    def decode(self, z: Tensor) -> Tensor:
        h = T.repeat_time(T.reshape(self.expand(z), (z.shape[0], 1, self.cfg.d_model)), self.n_frames // self.cfg.down)
        return self.up(self.mix(h))

    def forward(self, x: Tensor, rng: np.random.Generator | None) -> tuple[Tensor, Tensor, Tensor]:
        mu, lv = self.encode(x)
        if rng is None:
            z = mu
        else:
            eps = Tensor(rng.standard_normal(mu.shape).astype(np.float32))
            z = mu + T.exp(0.5 * lv) * eps
        return self.decode(z), mu, lv

    def features(self, motion: np.ndarray, batch: int = 256) -> np.ndarray:
        out = []
        for s in range(0, len(motion), batch):
            mu, _ = self.encode(Tensor(np.asarray(motion[s : s + batch], np.float32)))
            out.append(mu.data)
        return np.concatenate(out, axis=0)


class EmotionClassifier(Module):
    """Per-window emotion logits; penultimate features feed the metric."""

    def __init__(self, rng, d_motion: int, n_emotions: int, cfg: FeatConfig = FeatConfig()):
        self.cfg = cfg
        self.trunk = _Trunk(rng, d_motion, cfg)
        self.feat = Linear(rng, cfg.d_model, cfg.d_feat)
        self.head = Linear(rng, cfg.d_feat, n_emotions)

    def _features_t(self, x: Tensor) -> Tensor:
        return T.tanh(self.feat(self.trunk(x)))

    def logits(self, x: Tensor) -> Tensor:
        return self.head(self._features_t(x))

    def features(self, motion: np.ndarray, batch: int = 256) -> np.ndarray:
        out = []
        for s in range(0, len(motion), batch):
            out.append(self._features_t(Tensor(np.asarray(motion[s : s + batch], np.float32))).data)
        return np.concatenate(out, axis=0)

    def predict(self, motion: np.ndarray, batch: int = 256) -> np.ndarray:
        out = []
        for s in range(0, len(motion), batch):
            out.append(np.argmax(self.logits(Tensor(np.asarray(motion[s : s + batch], np.float32))).data, axis=-1))
        return np.concatenate(out, axis=0)

    def accuracy(self, motion: np.ndarray, labels: np.ndarray) -> float:
        return float(np.mean(self.predict(motion) == np.asarray(labels)))


def cross_entropy(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean softmax cross entropy; max-shift uses a constant so grads stay exact."""
    shift = Tensor(np.max(logits.data, axis=-1, keepdims=True))
    z = logits - shift
    lse = T.log(T.sum_(T.exp(z), axis=-1))
    picked = T.sum_(z * Tensor(one_hot(labels, logits.shape[-1])), axis=-1)
    return T.mean(lse - picked)


def _window_batches(clips, rng, batch_size):
    windows = windows_from_clips(clips, rng)
    order = rng.permutation(len(windows))
    for s in range(0, len(windows), batch_size):
        chunk = [windows[i] for i in order[s : s + batch_size]]
        motion = np.stack([w.motion for w in chunk])
        labels = np.array([w.spec.emotion_id for w in chunk])
        yield motion, labels


def train_feature_encoder(world: SynthWorld, clips: list[Clip], cfg: FeatConfig, seed: int, kl_weight: float = 1e-4, log=None):
    """Fit the window VAE on real motion with MSE + weighted KL."""
    rng = np.random.default_rng([seed, 0xFE, 0])
    data_rng = np.random.default_rng([seed, 0xFE, 1])
    noise_rng = np.random.default_rng([seed, 0xFE, 2])
    model = MotionVae(rng, world.params.d_motion, n_frames=50, cfg=cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        total, batches = 0.0, 0
        for motion, _ in _window_batches(clips, data_rng, cfg.batch_size):
            opt.zero_grad()
            with GradTape() as tape:
                recon, mu, lv = model.forward(Tensor(motion), noise_rng)
                diff = recon - Tensor(motion)
                kl = T.mean(T.sum_(0.5 * (T.exp(lv) + mu * mu - lv - 1.0), axis=-1))
                loss = T.mean(diff * diff) + kl_weight * kl
            tape.backward(loss)
            clip_grad_norm(model.parameters(), 5.0)
            opt.step()
            total += loss.item()
            batches += 1
        entry = {"epoch": epoch, "loss": total / max(1, batches)}
        history.append(entry)
        if log:
            log(entry)
    return model, history


def train_emotion_classifier(world: SynthWorld, clips: list[Clip], cfg: FeatConfig, seed: int, log=None):
    """Fit the classifier on real windows with softmax cross entropy."""
    rng = np.random.default_rng([seed, 0xFC, 0])
    data_rng = np.random.default_rng([seed, 0xFC, 1])
    model = EmotionClassifier(rng, world.params.d_motion, world.params.n_emotions, cfg=cfg)
    opt = Adam(model.parameters(), lr=cfg.lr)
    history = []
    for epoch in range(cfg.epochs):
        total, correct, seen, batches = 0.0, 0, 0, 0
        for motion, labels in _window_batches(clips, data_rng, cfg.batch_size):
            opt.zero_grad()
            with GradTape() as tape:
                logits = model.logits(Tensor(motion))
                loss = cross_entropy(logits, labels)
            tape.backward(loss)
            clip_grad_norm(model.parameters(), 5.0)
            opt.step()
            total += loss.item()
            correct += int(np.sum(np.argmax(logits.data, axis=-1) == labels))
            seen += len(labels)
            batches += 1
        entry = {"epoch": epoch, "loss": total / max(1, batches), "acc": correct / max(1, seen)}
        history.append(entry)
        if log:
            log(entry)
    return model, history
