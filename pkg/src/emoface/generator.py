"""Non-autoregressive motion generator over the frozen priors.

Audio features and a sampled emotion embedding drive two codebook predictors:
top indices first, whose decoded features condition the bottom predictor; the
frozen two-level decoder turns the selected codes into motion. Training uses
straight-through Gumbel-Softmax so the discrete code choices stay
differentiable, in two stages: vertex reconstruction alone with an annealed
Gumbel temperature, then added emotion-consistency and lip-region terms at a
fixed temperature.

Content/style split: the content path sees mean-removed audio features (the
emotion component of the synthetic features is constant in time, so removing
the temporal mean strips it exactly), while the style path receives the
sampled emotion embedding concatenated with an identity one-hot. Emotion can
then only enter through the style path, which is what makes embedding swaps
transfer emotion without disturbing lip content.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .embedding import EmotionEmbedder, sample_embedding
from .nn import Adam, Conv1d, Linear, Module, TransformerStack, clip_grad_norm, one_hot
from .prior import ThvqvaeModel, smooth, vertex_mse
from .synth import Clip, SynthWorld, windows_from_clips
from .tensor import GradTape, Tensor


class NonFiniteLogitsError(ValueError):
    """Sampling received NaN or infinite logits."""


@dataclass(frozen=True)
class GenConfig:
    d_model: int = 32
    n_heads: int = 4
    content_layers: int = 2
    predictor_layers: int = 3
    stage1_epochs: int = 40
    stage2_epochs: int = 10
    batch_size: int = 64
    lr: float = 1e-3
    lambda_rec: float = 1.0
    lambda_emo: float = 0.1
    lambda_lip: float = 1.0
    gumbel_hi: float = 2.0
    gumbel_lo: float = 0.1
    alpha_train: float = 1.0
    w_rec: float = 100000.0


def freeze(module: Module):
    for p in module.parameters():
        p.requires_grad = False


def gumbel_st(logits: Tensor, temperature: float, rng: np.random.Generator | None) -> tuple[Tensor, np.ndarray]:
    """Hard one-hot forward, soft softmax((logits+g)/temperature) backward.

    ``rng=None`` fixes the Gumbel noise to zero (used by tests and argmax-like
    deterministic paths).
    """
    if temperature <= 0:
        raise ValueError("gumbel temperature must be positive")
    g = rng.gumbel(size=logits.shape).astype(np.float32) if rng is not None else np.zeros(logits.shape, np.float32)
    soft = T.softmax((logits + Tensor(g)) * (1.0 / temperature), axis=-1)
    idx = np.argmax(logits.data + g, axis=-1)
    hard = one_hot(idx, logits.shape[-1])
    out = soft + Tensor(hard - soft.data)
    return out, idx


def sample_codes(logits: np.ndarray, temperature: float, mode: str, rng: np.random.Generator | None) -> np.ndarray:
    """argmax ignores temperature; categorical draws from softmax(logits/T)."""
    if not np.isfinite(logits).all():
        raise NonFiniteLogitsError("logits contain NaN or Inf")
    if mode == "argmax":
        return np.argmax(logits, axis=-1)
    if mode != "categorical":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if temperature <= 0:
        raise ValueError("categorical sampling needs temperature > 0")
    # Gumbel-max draw, exactly categorical(softmax(logits/T))
    g = rng.gumbel(size=logits.shape)
    return np.argmax(logits / temperature + g, axis=-1)


def gumbel_schedule(step: int, total_steps: int, hi: float, lo: float) -> float:
    if total_steps <= 1:
        return lo
    frac = min(1.0, step / (total_steps - 1))
    return hi + (lo - hi) * frac


class FaceFeatureExtractor(Module):
    """Content transformer over downsampled mean-free audio, fused with style."""

    def __init__(self, rng, d_audio: int, d_style_in: int, d_model: int, n_heads: int, content_layers: int, down_factor: int):
        self.down = Conv1d(rng, d_audio, d_model, kernel=down_factor, stride=down_factor)
        self.content = TransformerStack(rng, d_model, n_heads, content_layers)
        self.style = Linear(rng, d_style_in, d_model)
        self.fuse_in = Linear(rng, 2 * d_model, d_model)
        self.fusion = TransformerStack(rng, d_model, n_heads, 1)

    def __call__(self, audio: Tensor, style_vec: Tensor) -> Tensor:
        x = audio - T.mean(audio, axis=-2, keepdims=True)
        h = self.content(self.down(x))
        s = self.style(style_vec)
        s_rep = T.repeat_time(T.reshape(s, (s.shape[0], 1, s.shape[-1])), h.shape[-2])
        return self.fusion(self.fuse_in(T.concat([h, s_rep], axis=-1)))


class PredictorStack(Module):
    """Transformer over conditioning features emitting per-step code logits."""

    def __init__(self, rng, d_in: int, d_model: int, n_codes: int, n_heads: int, n_layers: int, down_factor: int = 1):
        self.down = Conv1d(rng, d_in, d_model, kernel=down_factor, stride=down_factor) if down_factor > 1 else Linear(rng, d_in, d_model)
        self.mix = TransformerStack(rng, d_model, n_heads, n_layers)
        self.head = Linear(rng, d_model, n_codes)

    def __call__(self, x: Tensor) -> Tensor:
        return self.head(self.mix(self.down(x)))


class _GeneratorCommon(Module):
    """Shared plumbing: frozen models, style assembly, batched inference."""

    def _init_common(self, world: SynthWorld, dee: EmotionEmbedder):
        self._frozen = {"world": world, "dee": dee}
        freeze(dee)

    @property
    def world(self) -> SynthWorld:
        return self._frozen["world"]

    @property
    def dee(self) -> EmotionEmbedder:
        return self._frozen["dee"]

    def style_vector(self, emb: np.ndarray, identity_ids: np.ndarray) -> np.ndarray:
        ids = one_hot(np.asarray(identity_ids), self.world.params.n_identities)
        return np.concatenate([emb.astype(np.float32), ids], axis=-1)

    def audio_embedding(self, audio: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        za = self.dee.encode_audio(audio)
        return za.mu.data, za.log_var.data

    def generate_batch(
        self,
        audio: np.ndarray,
        identity_ids: np.ndarray,
        alpha="mean",
        tau_t: float = 1.0,
        tau_b: float = 1.0,
        mode: str = "argmax",
        rng: np.random.Generator | None = None,
        smooth_output: bool = True,
        style_override: np.ndarray | None = None,
    ) -> np.ndarray:
        """Audio (B, T_a, d_audio) + identities to motion (B, T, d_exp+3).

        ``style_override`` replaces the sampled audio emotion embedding (the
        emotion-swap path). With alpha="mean" and argmax mode the output is a
        pure function of (audio, identity, weights).
        """
        if style_override is None:
            mu, lv = self.audio_embedding(audio)
            emb = sample_embedding(mu, lv, alpha, rng)
        else:
            emb = style_override
        style = Tensor(self.style_vector(emb, identity_ids))
        pred = self._decode_indices(audio, style, tau_t, tau_b, mode, rng)
        if not smooth_output:
            return pred
        pc = self.prior.cfg
        return smooth(pred, pc.smooth_window, pc.smooth_polyorder)

    def _decode_indices(self, audio, style, tau_t, tau_b, mode, rng) -> np.ndarray:
        raise NotImplementedError


class Generator(_GeneratorCommon):
    """Two-level code predictor over a frozen hierarchical prior."""

    def __init__(self, rng, world: SynthWorld, dee: EmotionEmbedder, prior: ThvqvaeModel, cfg: GenConfig = GenConfig()):
        self.cfg = cfg
        self._init_common(world, dee)
        self._frozen["prior"] = prior
        freeze(prior)
        p = world.params
        pc = prior.cfg
        d_style_in = dee.cfg.d_e + p.n_identities
        self.extractor = FaceFeatureExtractor(
            rng, p.d_audio, d_style_in, cfg.d_model, cfg.n_heads, cfg.content_layers, down_factor=2 * pc.q_bottom
        )
        self.top_pred = PredictorStack(rng, cfg.d_model, cfg.d_model, pc.n_top, cfg.n_heads, cfg.predictor_layers, down_factor=pc.q_top)
        self.bottom_pred = PredictorStack(rng, pc.c_top + cfg.d_model, cfg.d_model, pc.n_bottom, cfg.n_heads, cfg.predictor_layers)

    @property
    def prior(self) -> ThvqvaeModel:
        return self._frozen["prior"]

    def _logits_top(self, face: Tensor) -> Tensor:
        return self.top_pred(face)

    def _bottom_input(self, z_t_q: Tensor, face: Tensor) -> Tensor:
        return T.concat([self.prior.dec_top(z_t_q), face], axis=-1)

    def predict_train(self, audio: np.ndarray, style: np.ndarray, temp: float, rng) -> Tensor:
        """Differentiable prediction via straight-through Gumbel code selection."""
        face = self.extractor(Tensor(audio), Tensor(style))
        top_oh, _ = gumbel_st(self._logits_top(face), temp, rng)
        z_t_q = T.matmul(top_oh, Tensor(self.prior.book_top.codes))
        bot_oh, _ = gumbel_st(self.bottom_pred(self._bottom_input(z_t_q, face)), temp, rng)
        z_b_q = T.matmul(bot_oh, Tensor(self.prior.book_bottom.codes))
        return self.prior.decode_codes(z_t_q, z_b_q)

    def _decode_indices(self, audio, style, tau_t, tau_b, mode, rng) -> np.ndarray:
        face = self.extractor(Tensor(np.asarray(audio, np.float32)), style)
        idx_t = sample_codes(self._logits_top(face).data, tau_t, mode, rng)
        z_t_q = Tensor(self.prior.book_top.lookup(idx_t))
        logits_b = self.bottom_pred(self._bottom_input(z_t_q, face))
        idx_b = sample_codes(logits_b.data, tau_b, mode, rng)
        return self.prior.decode_indices(idx_t, idx_b)


class SingleVqGenerator(_GeneratorCommon):
    """Single predictor over a frozen one-level quantized prior."""

    def __init__(self, rng, world: SynthWorld, dee: EmotionEmbedder, prior, cfg: GenConfig = GenConfig()):
        self.cfg = cfg
        self._init_common(world, dee)
        self._frozen["prior"] = prior
        freeze(prior)
        p = world.params
        d_style_in = dee.cfg.d_e + p.n_identities
        self.extractor = FaceFeatureExtractor(
            rng, p.d_audio, d_style_in, cfg.d_model, cfg.n_heads, cfg.content_layers, down_factor=2 * prior.cfg.q_bottom
        )
        self.pred = PredictorStack(rng, cfg.d_model, cfg.d_model, prior.book.n_codes, cfg.n_heads, cfg.predictor_layers)

    @property
    def prior(self):
        return self._frozen["prior"]

    def predict_train(self, audio, style, temp, rng) -> Tensor:
        face = self.extractor(Tensor(audio), Tensor(style))
        oh, _ = gumbel_st(self.pred(face), temp, rng)
        return self.prior.decode_codes(T.matmul(oh, Tensor(self.prior.book.codes)))

    def _decode_indices(self, audio, style, tau_t, tau_b, mode, rng) -> np.ndarray:
        face = self.extractor(Tensor(np.asarray(audio, np.float32)), style)
        idx = sample_codes(self.pred(face).data, tau_b, mode, rng)
        return self.prior.decode_codes(Tensor(self.prior.book.lookup(idx))).data


class ContinuousGenerator(_GeneratorCommon):
    """Continuous latent predictor over a frozen VAE prior (no sampling step)."""

    def __init__(self, rng, world: SynthWorld, dee: EmotionEmbedder, prior, cfg: GenConfig = GenConfig()):
        self.cfg = cfg
        self._init_common(world, dee)
        self._frozen["prior"] = prior
        freeze(prior)
        p = world.params
        pc = prior.cfg
        d_style_in = dee.cfg.d_e + p.n_identities
        self.extractor = FaceFeatureExtractor(
            rng, p.d_audio, d_style_in, cfg.d_model, cfg.n_heads, cfg.content_layers, down_factor=2 * pc.q_bottom
        )
        self.top_pred = PredictorStack(rng, cfg.d_model, cfg.d_model, pc.c_top, cfg.n_heads, cfg.predictor_layers, down_factor=pc.q_top)
        self.bottom_pred = PredictorStack(rng, pc.c_top + cfg.d_model, cfg.d_model, pc.c_bottom, cfg.n_heads, cfg.predictor_layers)

    @property
    def prior(self):
        return self._frozen["prior"]

    def _predict_latents(self, audio: Tensor, style: Tensor) -> Tensor:
        face = self.extractor(audio, style)
        z_t = self.top_pred(face)
        z_b = self.bottom_pred(T.concat([self.prior.dec_top(z_t), face], axis=-1))
        return self.prior.decode_latents(z_t, z_b)

    def predict_train(self, audio, style, temp, rng) -> Tensor:
        return self._predict_latents(Tensor(audio), Tensor(style))

    def _decode_indices(self, audio, style, tau_t, tau_b, mode, rng) -> np.ndarray:
        return self._predict_latents(Tensor(np.asarray(audio, np.float32)), style).data


# ---------------------------------------------------------------------------
# losses and training


def generator_losses(
    world: SynthWorld,
    dee: EmotionEmbedder,
    pred: Tensor,
    target_motion: np.ndarray,
    mu_audio: np.ndarray | None,
    cfg: GenConfig,
) -> tuple[Tensor, dict]:
    """Weighted sum of vertex reconstruction, emotion consistency, lip MSE.

    ``mu_audio`` is the frozen audio embedding mean (constant); pass None when
    lambda_emo is zero. Vertex terms are pre-scaled by w_rec as in the prior
    stage so all lambdas act on same-order quantities.
    """
    w = world.vertex_map.weights
    rec = cfg.w_rec * vertex_mse(pred, target_motion, w)
    parts = {"rec": rec.item()}
    total = cfg.lambda_rec * rec
    if cfg.lambda_emo > 0.0:
        ze = dee.encode_motion(pred)
        cos = T.sum_(Tensor(mu_audio.astype(np.float32)) * ze.mu, axis=-1)
        emo = T.mean(1.0 - cos)
        parts["emo"] = emo.item()
        total = total + cfg.lambda_emo * emo
    if cfg.lambda_lip > 0.0:
        w_lip = w[world.vertex_map.lip_rows]
        lip = cfg.w_rec * vertex_mse(pred, target_motion, w_lip)
        parts["lip"] = lip.item()
        total = total + cfg.lambda_lip * lip
    parts["total"] = total.item()
    return total, parts


def _train_epochs(model, world, dee, clips, cfg: GenConfig, seed: int, stage: int, epochs: int, log) -> list[dict]:
    data_rng = np.random.default_rng([seed, 0x6E, stage, 1])
    noise_rng = np.random.default_rng([seed, 0x6E, stage, 2])
    params = [p for p in model.parameters() if p.requires_grad]
    opt = Adam(params, lr=cfg.lr)
    n = len(clips)
    steps_per_epoch = max(1, (n + cfg.batch_size - 1) // cfg.batch_size)
    total_steps = epochs * steps_per_epoch

    history = []
    step = 0
    for epoch in range(epochs):
        order = data_rng.permutation(n)
        windows = windows_from_clips([clips[i] for i in order], data_rng)
        sums: dict[str, float] = {}
        for s in range(0, n, cfg.batch_size):
            chunk = windows[s : s + cfg.batch_size]
            audio = np.stack([w.audio for w in chunk])
            motion = np.stack([w.motion for w in chunk])
            ids = np.array([w.spec.identity_id for w in chunk])
            mu, lv = model.audio_embedding(audio)
            emb = sample_embedding(mu, lv, cfg.alpha_train, noise_rng)
            style = model.style_vector(emb, ids)
            temp = gumbel_schedule(step, total_steps, cfg.gumbel_hi, cfg.gumbel_lo) if stage == 1 else cfg.gumbel_hi
            mu_for_loss = mu if cfg.lambda_emo > 0 else None
            opt.zero_grad()
            with GradTape() as tape:
                pred = model.predict_train(audio, style, temp, noise_rng)
                loss, parts = generator_losses(world, dee, pred, motion, mu_for_loss, cfg)
            tape.backward(loss)
            clip_grad_norm(params, 5.0)
            opt.step()
            for k, v in parts.items():
                sums[k] = sums.get(k, 0.0) + v
            step += 1
        entry = {"epoch": epoch, "stage": stage}
        entry.update({k: v / steps_per_epoch for k, v in sums.items()})
        history.append(entry)
        if log:
            log(entry)
    return history


def train_generator_stage1(model, world, dee, clips, cfg: GenConfig, seed: int, log=None) -> list[dict]:
    """Reconstruction only, Gumbel temperature annealed hi -> lo."""
    stage_cfg = replace(cfg, lambda_emo=0.0, lambda_lip=0.0)
    return _train_epochs(model, world, dee, clips, stage_cfg, seed, stage=1, epochs=cfg.stage1_epochs, log=log)


def train_generator_stage2(model, world, dee, clips, cfg: GenConfig, seed: int, log=None) -> list[dict]:
    """All three terms at fixed Gumbel temperature."""
    return _train_epochs(model, world, dee, clips, cfg, seed, stage=2, epochs=cfg.stage2_epochs, log=log)


def train_generator(world: SynthWorld, clips: list[Clip], dee: EmotionEmbedder, prior: ThvqvaeModel, cfg: GenConfig, seed: int, log=None):
    """Fresh two-level generator through both stages."""
    model = Generator(np.random.default_rng([seed, 0x6E, 0]), world, dee, prior, cfg)
    history = train_generator_stage1(model, world, dee, clips, cfg, seed, log=log)
    history += train_generator_stage2(model, world, dee, clips, cfg, seed, log=log)
    return model, history


def clone_weights(src: Module, dst: Module):
    dst.load_state_arrays([a.copy() for a in src.state_arrays()])
