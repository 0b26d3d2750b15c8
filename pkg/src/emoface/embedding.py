"""Joint probabilistic emotion embedding for audio features and facial motion.

Each modality maps to a diagonal Gaussian in a shared space: a unit-normalized
mean and an unconstrained log-variance, produced by per-modality transformer
encoders with separate mean/log-variance heads (1-layer transformer plus a
learned rank-weighted pooling). The two encoders are trained jointly with a
contrastive binary cross-entropy over the closed-form expected squared
distance (CSD) between embedding pairs: same-clip pairs are always positives.
When emotion labels accompany the batch, other same-emotion pairs are treated
as pseudo-positives rather than false negatives, so the loss pulls emotion
groups together and pushes only cross-emotion pairs apart; without labels all
off-diagonal pairs are negatives.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Adam, Linear, Mlp, Module, Parameter, TransformerBlock, TransformerStack, clip_grad_norm, warmup_cosine_lr
from .synth import Clip, SynthWorld, WorldParams, windows_from_clips
from .tensor import GradTape, ShapeMismatchError, Tensor


class EmptySequenceError(ValueError):
    """Encoder input has zero temporal length."""


class ContrastiveBatchError(ValueError):
    """Contrastive loss needs at least two pairs to form negatives."""


@dataclass
class ProbEmbedding:
    """Batch of diagonal Gaussians: mu (B, d_e) unit-normalized, log_var (B, d_e)."""

    mu: Tensor
    log_var: Tensor


@dataclass(frozen=True)
class DeeConfig:
    d_e: int = 16
    d_model: int = 32
    n_heads: int = 4
    audio_layers: int = 2
    exp_layers: int = 3
    epochs: int = 60
    batch_size: int = 128
    lr: float = 1e-3
    mean_pool: bool = False
    eval_every: int = 5


class GpoPool(Module):
    """Rank-weighted pooling: softmax weights over descending-sorted values.

    With zero rank logits this is exactly mean pooling; ``mean_fallback``
    pins that behaviour.
    """

    def __init__(self, max_len: int = 64, mean_fallback: bool = False):
        self.rank_logits = Parameter(np.zeros(max_len))
        self.mean_fallback = mean_fallback

    def __call__(self, h: Tensor) -> Tensor:
        if self.mean_fallback:
            return T.mean(h, axis=-2)
        t = h.shape[-2]
        order = np.argsort(-h.data, axis=-2, kind="stable")
        ranked = T.take_along_time(h, order)
        w = T.softmax(T.slice_axis(self.rank_logits, 0, 0, t), axis=-1)
        return T.sum_(ranked * T.reshape(w, (t, 1)), axis=-2)


class EmbeddingHead(Module):
    """One distribution head: 1-layer transformer, pooling, linear projection."""

    def __init__(self, rng, d_model: int, d_out: int, n_heads: int, normalize: bool, mean_pool: bool = False):
        self.block = TransformerBlock(rng, d_model, n_heads)
        self.pool = GpoPool(mean_fallback=mean_pool)
        self.proj = Linear(rng, d_model, d_out)
        self.normalize = normalize

    def __call__(self, h: Tensor) -> Tensor:
        z = self.proj(self.pool(self.block(h)))
        if self.normalize:
            z = z / T.sqrt(T.sum_(z * z, axis=-1, keepdims=True) + 1e-12)
        return z


class EmotionEmbedder(Module):
    """Paired audio/motion encoders emitting ProbEmbeddings of equal dim."""

    def __init__(self, rng, world_params: WorldParams, cfg: DeeConfig = DeeConfig()):
        self.cfg = cfg
        p = world_params
        d = cfg.d_model
        self.f_audio = Mlp(rng, 2 * p.d_audio, 2 * d, d)
        self.enc_audio = TransformerStack(rng, d, cfg.n_heads, cfg.audio_layers)
        self.mu_head_a = EmbeddingHead(rng, d, cfg.d_e, cfg.n_heads, normalize=True, mean_pool=cfg.mean_pool)
        self.lv_head_a = EmbeddingHead(rng, d, cfg.d_e, cfg.n_heads, normalize=False, mean_pool=cfg.mean_pool)
        self.f_exp = Mlp(rng, p.d_motion, 2 * d, d)
        self.enc_exp = TransformerStack(rng, d, cfg.n_heads, cfg.exp_layers)
        self.mu_head_e = EmbeddingHead(rng, d, cfg.d_e, cfg.n_heads, normalize=True, mean_pool=cfg.mean_pool)
        self.lv_head_e = EmbeddingHead(rng, d, cfg.d_e, cfg.n_heads, normalize=False, mean_pool=cfg.mean_pool)
        # Start with small variances so the distance between unit-norm means
        # dominates CSD; with unit variances the 2*d_e variance term saturates
        # every contrastive logit and training collapses to the base rate.
        self.lv_head_a.proj.bias.data[:] = -2.0
        self.lv_head_e.proj.bias.data[:] = -2.0
        # contrastive logit calibration: logits = -softplus(raw_scale)*CSD + bias;
        # scale starts at softplus(-1) ~= 0.31 so initial logits sit in the
        # responsive range of the sigmoid rather than deep in a tail
        self.raw_scale = Parameter(np.array(-1.0))
        self.bias = Parameter(np.array(0.0))

    @staticmethod
    def _lift(x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
        if x.shape[-2] == 0:
            raise EmptySequenceError("cannot encode an empty sequence")
        return x

    def encode_audio(self, audio) -> ProbEmbedding:
        """Audio feature frames (B, T_a, d_audio), T_a even, to (B, d_e) Gaussians."""
        x = self._lift(audio)
        b, t_a, d_a = x.shape
        if t_a % 2:
            raise ShapeMismatchError(f"audio length {t_a} must be even (two frames per motion frame)")
        x = T.reshape(x, (b, t_a // 2, 2 * d_a))
        h = self.enc_audio(self.f_audio(x))
        return ProbEmbedding(mu=self.mu_head_a(h), log_var=self.lv_head_a(h))

    def encode_motion(self, motion) -> ProbEmbedding:
        """Motion frames (B, T, d_exp+3) to (B, d_e) Gaussians."""
        x = self._lift(motion)
        h = self.enc_exp(self.f_exp(x))
        return ProbEmbedding(mu=self.mu_head_e(h), log_var=self.lv_head_e(h))


# ---------------------------------------------------------------------------
# distances and losses


def csd(za: ProbEmbedding, ze: ProbEmbedding) -> Tensor:
    """Closed form of E||z_a - z_e||^2 for row-paired batches: (B,) values."""
    d = za.mu - ze.mu
    return T.sum_(d * d, axis=-1) + T.sum_(T.exp(za.log_var) + T.exp(ze.log_var), axis=-1)


def pairwise_csd(za: ProbEmbedding, ze: ProbEmbedding) -> Tensor:
    """CSD between every audio row i and motion row j: (B_a, B_e)."""
    sq_a = T.sum_(za.mu * za.mu, axis=-1, keepdims=True)
    sq_e = T.sum_(ze.mu * ze.mu, axis=-1, keepdims=True)
    cross = T.matmul(za.mu, T.transpose(ze.mu, (1, 0)))
    var_a = T.sum_(T.exp(za.log_var), axis=-1, keepdims=True)
    var_e = T.sum_(T.exp(ze.log_var), axis=-1, keepdims=True)
    return sq_a + T.transpose(sq_e, (1, 0)) - 2.0 * cross + var_a + T.transpose(var_e, (1, 0))


def contrastive_loss(za: ProbEmbedding, ze: ProbEmbedding, raw_scale, bias, labels=None) -> Tensor:
    """Match-probability BCE over the pairwise CSD matrix, diagonal positives.

    p_ij = sigmoid(-softplus(raw_scale)*CSD_ij + bias); mean BCE over all B^2
    pairs. Targets are the identity by default. When per-row ``labels`` are
    given, off-diagonal pairs with equal labels become pseudo-positives:
    left as negatives they would repel windows of the same emotion — an
    unresolvable pressure that training escapes by inflating every variance
    until all logits saturate at the base rate and the mean geometry freezes.
    """
    b = za.mu.shape[0]
    if b < 2 or ze.mu.shape[0] < 2:
        raise ContrastiveBatchError("contrastive loss needs a batch of >= 2 pairs")
    logits = -T.softplus(raw_scale) * pairwise_csd(za, ze) + bias
    if labels is None:
        targets = np.eye(b, dtype=np.float32)
    else:
        labels = np.asarray(labels)
        targets = (labels[:, None] == labels[None, :]).astype(np.float32)
    # BCE(l, y) = softplus(l) - y*l
    return T.mean(T.softplus(logits) - Tensor(targets) * logits)


def sample_embedding(mu: np.ndarray, log_var: np.ndarray, alpha, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw mu + exp(0.5*alpha*log_var) * eps; alpha="mean" returns mu exactly."""
    mu = np.asarray(mu)
    if alpha == "mean":
        return mu.copy()
    std = np.exp(0.5 * float(alpha) * np.asarray(log_var))
    return mu + std * rng.standard_normal(mu.shape)


# ---------------------------------------------------------------------------
# training


def encode_windows(model: EmotionEmbedder, windows, which: str, batch: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Chunked no-tape encoding; returns (mu, log_var) float32 arrays."""
    mus, lvs = [], []
    for i in range(0, len(windows), batch):
        chunk = windows[i : i + batch]
        if which == "audio":
            emb = model.encode_audio(np.stack([w.audio for w in chunk]))
        else:
            emb = model.encode_motion(np.stack([w.motion for w in chunk]))
        mus.append(emb.mu.data)
        lvs.append(emb.log_var.data)
    return np.concatenate(mus), np.concatenate(lvs)


def _retrieval_accuracy(query_mu, gallery_mu, labels) -> float:
    sims = query_mu @ gallery_mu.T
    hits = labels[np.argmax(sims, axis=1)] == labels
    return float(np.mean(hits))


def train_dee(
    world: SynthWorld,
    train_clips: list[Clip],
    val_clips: list[Clip],
    cfg: DeeConfig,
    seed: int,
    log=None,
) -> tuple[EmotionEmbedder, list[dict]]:
    """Optimize the contrastive objective with Adam and a cosine-annealed LR."""
    emotions = {c.spec.emotion_id for c in train_clips}
    if len(emotions) < 2:
        warnings.warn("training set contains a single emotion; all negatives share its label")

    model = EmotionEmbedder(np.random.default_rng([seed, 0x0D, 0]), world.params, cfg)
    data_rng = np.random.default_rng([seed, 0x0D, 1])
    opt = Adam(model.parameters(), lr=cfg.lr)
    n = len(train_clips)
    steps_per_epoch = max(1, (n + cfg.batch_size - 1) // cfg.batch_size)
    total_steps = cfg.epochs * steps_per_epoch
    val_windows = windows_from_clips(val_clips, np.random.default_rng([seed, 0x0D, 2])) if val_clips else []
    val_labels = np.array([w.spec.emotion_id for w in val_windows])

    history: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = data_rng.permutation(n)
        windows = windows_from_clips([train_clips[i] for i in order], data_rng)
        losses = []
        for s in range(steps_per_epoch):
            chunk = windows[s * cfg.batch_size : (s + 1) * cfg.batch_size]
            if len(chunk) < 2:
                continue
            audio = np.stack([w.audio for w in chunk])
            motion = np.stack([w.motion for w in chunk])
            chunk_labels = np.array([w.spec.emotion_id for w in chunk])
            opt.zero_grad()
            with GradTape() as tape:
                za = model.encode_audio(Tensor(audio))
                ze = model.encode_motion(Tensor(motion))
                loss = contrastive_loss(za, ze, model.raw_scale, model.bias, labels=chunk_labels)
            tape.backward(loss)
            clip_grad_norm(model.parameters(), 5.0)
            opt.step(lr=warmup_cosine_lr(step, total_steps, cfg.lr))
            losses.append(loss.item())
            step += 1
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        if val_windows and (epoch % cfg.eval_every == cfg.eval_every - 1 or epoch == cfg.epochs - 1):
            mu_a, _ = encode_windows(model, val_windows, "audio")
            mu_e, _ = encode_windows(model, val_windows, "motion")
            entry["val_a2m"] = _retrieval_accuracy(mu_a, mu_e, val_labels)
            entry["val_m2a"] = _retrieval_accuracy(mu_e, mu_a, val_labels)
        history.append(entry)
        if log:
            log(entry)
    return model, history
