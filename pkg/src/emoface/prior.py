"""Two-level discrete motion prior.

Motion is encoded bottom-up (fine rate T/q_b, then coarse rate T/(q_b*q_t)),
quantized top-down: the top feature is quantized first, its decode is stacked
onto the bottom feature before bottom quantization, and the final decoder
consumes the nearest-neighbor-upsampled top codes next to the bottom codes.
Codebooks train by EMA; encoders/decoders train on weighted vertex-space
reconstruction plus commitment terms. A Savitzky-Golay smoother cleans decoded
motion at inference time only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from . import tensor as T
from .nn import Adam, Conv1d, Module, TransformerStack, UpConv1d, clip_grad_norm
from .quantizer import Codebook, commitment_loss
from .synth import Clip, SynthWorld, WINDOW_FRAMES, windows_from_clips
from .tensor import GradTape, Tensor


class PaddingRequiredError(ValueError):
    """Sequence length is not divisible by the model's quant factors."""


class InvalidSmoothingError(ValueError):
    """Savitzky-Golay window/polyorder combination is unusable."""


@dataclass(frozen=True)
class PriorConfig:
    n_top: int = 64
    n_bottom: int = 512
    c_top: int = 16
    c_bottom: int = 32
    q_bottom: int = 2
    q_top: int = 5
    n_heads: int = 4
    ema_decay: float = 0.99
    beta: float = 1.0
    w_rec: float = 100000.0
    epochs: int = 200
    batch_size: int = 64
    lr: float = 1e-3
    warmup_steps: int = 200
    # window 3 / polyorder 2 fits 3 points exactly: smoothing is an identity
    # by default. At 25 fps the content band sits at 6.5-11 Hz, where any
    # non-trivial symmetric quadratic smoother attenuates or sign-inverts the
    # signal (5-frame window: gain ~ -0.12 at 10 Hz), so a real window is only
    # appropriate for lower-band data.
    smooth_window: int = 3
    smooth_polyorder: int = 2


class SeqEncoder(Module):
    """Strided conv to the target rate, then one transformer layer."""

    def __init__(self, rng, d_in: int, d_out: int, factor: int, n_heads: int):
        self.conv = Conv1d(rng, d_in, d_out, kernel=factor, stride=factor)
        self.mix = TransformerStack(rng, d_out, n_heads, n_layers=1)

    def __call__(self, x: Tensor) -> Tensor:
        return self.mix(self.conv(x))


class SeqDecoder(Module):
    """One transformer layer at the coarse rate, then transposed conv up."""

    def __init__(self, rng, d_in: int, d_out: int, factor: int, n_heads: int):
        self.mix = TransformerStack(rng, d_in, n_heads, n_layers=1)
        self.up = UpConv1d(rng, d_in, d_out, factor=factor)

    def __call__(self, x: Tensor) -> Tensor:
        return self.up(self.mix(x))


class ThvqvaeModel(Module):
    def __init__(self, rng, d_motion: int, cfg: PriorConfig = PriorConfig()):
        self.cfg = cfg
        self.d_motion = d_motion
        c_split = cfg.c_bottom - cfg.c_top
        if c_split <= 0:
            raise ValueError("c_bottom must exceed c_top")
        self.enc_bottom = SeqEncoder(rng, d_motion, c_split, cfg.q_bottom, cfg.n_heads)
        self.enc_top = SeqEncoder(rng, c_split, cfg.c_top, cfg.q_top, cfg.n_heads)
        self.dec_top = SeqDecoder(rng, cfg.c_top, cfg.c_top, cfg.q_top, cfg.n_heads)
        self.dec_bottom = SeqDecoder(rng, cfg.c_top + cfg.c_bottom, d_motion, cfg.q_bottom, cfg.n_heads)
        self.book_top = Codebook(rng, cfg.n_top, cfg.c_top, decay=cfg.ema_decay)
        self.book_bottom = Codebook(rng, cfg.n_bottom, cfg.c_bottom, decay=cfg.ema_decay)

    def _check_length(self, t: int):
        q = self.cfg.q_bottom * self.cfg.q_top
        if t % q:
            raise PaddingRequiredError(f"sequence length {t} is not divisible by q_bottom*q_top={q}; window or pad first")

    def encode_hierarchy(self, x) -> tuple[Tensor, Tensor]:
        """Motion (B, T, d) to bottom (B, T/q_b, c_b - c_t) and top (B, T/(q_b*q_t), c_t)."""
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim == 2:
            x = T.reshape(x, (1,) + x.shape)
        self._check_length(x.shape[-2])
        z_b = self.enc_bottom(x)
        z_t = self.enc_top(z_b)
        return z_b, z_t

    def forward(self, x: Tensor) -> dict:
        """Full quantized round trip; returns every intermediate for the loss."""
        z_b_hat, z_t_hat = self.encode_hierarchy(x)
        z_t_q, idx_t = self.book_top.quantize_st(z_t_hat)
        z_t_dec = self.dec_top(z_t_q)
        bottom_pre = T.concat([z_b_hat, z_t_dec], axis=-1)
        z_b_q, idx_b = self.book_bottom.quantize_st(bottom_pre)
        ups = T.repeat_time(z_t_q, self.cfg.q_top)
        recon = self.dec_bottom(T.concat([ups, z_b_q], axis=-1))
        return {
            "z_t_hat": z_t_hat,
            "idx_t": idx_t,
            "z_t_q": z_t_q,
            "bottom_pre": bottom_pre,
            "idx_b": idx_b,
            "z_b_q": z_b_q,
            "recon": recon,
        }

    def encode_indices(self, motion: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        out = self.forward(Tensor(motion))
        return out["idx_t"], out["idx_b"]

    def decode_codes(self, z_t_q: Tensor, z_b_q: Tensor) -> Tensor:
        """Decode from quantized features (differentiable; used by the generator)."""
        if z_b_q.shape[-2] != z_t_q.shape[-2] * self.cfg.q_top:
            raise PaddingRequiredError(
                f"bottom length {z_b_q.shape[-2]} must be q_top*top length ({self.cfg.q_top}*{z_t_q.shape[-2]})"
            )
        ups = T.repeat_time(z_t_q, self.cfg.q_top)
        return self.dec_bottom(T.concat([ups, z_b_q], axis=-1))

    def decode_indices(self, idx_t: np.ndarray, idx_b: np.ndarray) -> np.ndarray:
        z_t = Tensor(self.book_top.lookup(idx_t))
        z_b = Tensor(self.book_bottom.lookup(idx_b))
        return self.decode_codes(z_t, z_b).data

    def reconstruct(self, motion: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(motion))["recon"].data


def vertex_mse(pred: Tensor, target: np.ndarray, vertex_weights: np.ndarray) -> Tensor:
    """Mean squared error in vertex space via the fixed linear map."""
    w_t = Tensor(vertex_weights.T.astype(np.float32))
    diff = T.matmul(pred, w_t) - Tensor(target @ vertex_weights.T)
    return T.mean(diff * diff)


def vq_loss(model: ThvqvaeModel, x: np.ndarray, out: dict, vertex_weights: np.ndarray) -> tuple[Tensor, dict]:
    cfg = model.cfg
    rec = vertex_mse(out["recon"], x, vertex_weights)
    commit = commitment_loss(out["z_t_hat"], out["z_t_q"]) + commitment_loss(out["bottom_pre"], out["z_b_q"])
    total = cfg.w_rec * rec + cfg.beta * commit
    return total, {"rec_vertex_mse": rec.item(), "commit": commit.item()}


def smooth(motion: np.ndarray, window: int = 5, polyorder: int = 2) -> np.ndarray:
    """Per-dimension Savitzky-Golay along time with mirrored endpoints."""
    motion = np.asarray(motion)
    t = motion.shape[-2]
    if window % 2 == 0 or window < 3:
        raise InvalidSmoothingError(f"window must be odd and >= 3, got {window}")
    if polyorder >= window:
        raise InvalidSmoothingError(f"polyorder {polyorder} must be smaller than window {window}")
    if window > t:
        raise InvalidSmoothingError(f"window {window} exceeds sequence length {t}")
    return savgol_filter(motion, window, polyorder, axis=-2, mode="mirror").astype(motion.dtype)


def train_thvqvae(
    world: SynthWorld,
    train_clips: list[Clip],
    val_clips: list[Clip],
    cfg: PriorConfig,
    seed: int,
    log=None,
) -> tuple[ThvqvaeModel, list[dict]]:
    """Linear LR warmup then constant; EMA codebooks; dead codes re-seeded per epoch."""
    model = ThvqvaeModel(np.random.default_rng([seed, 0xB0, 0]), world.params.d_motion, cfg)
    data_rng = np.random.default_rng([seed, 0xB0, 1])
    reseed_rng = np.random.default_rng([seed, 0xB0, 2])
    opt = Adam(model.parameters(), lr=cfg.lr)
    vw = world.vertex_map.weights
    n = len(train_clips)
    val_windows = windows_from_clips(val_clips, np.random.default_rng([seed, 0xB0, 3])) if val_clips else []

    history: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        order = data_rng.permutation(n)
        windows = windows_from_clips([train_clips[i] for i in order], data_rng)
        losses, rec_mses = [], []
        idx_t_pool, idx_b_pool = [], []
        last_feats: dict[str, np.ndarray] = {}
        for s in range(0, n, cfg.batch_size):
            chunk = windows[s : s + cfg.batch_size]
            x = np.stack([w.motion for w in chunk])
            opt.zero_grad()
            with GradTape() as tape:
                out = model.forward(Tensor(x))
                loss, parts = vq_loss(model, x, out, vw)
            tape.backward(loss)
            clip_grad_norm(model.parameters(), 5.0)
            lr = cfg.lr * min(1.0, (step + 1) / max(1, cfg.warmup_steps))
            opt.step(lr=lr)
            model.book_top.ema_update(out["z_t_hat"].data, out["idx_t"])
            model.book_bottom.ema_update(out["bottom_pre"].data, out["idx_b"])
            losses.append(loss.item())
            rec_mses.append(parts["rec_vertex_mse"])
            idx_t_pool.append(out["idx_t"])
            idx_b_pool.append(out["idx_b"])
            last_feats = {"top": out["z_t_hat"].data, "bottom": out["bottom_pre"].data}
            step += 1
        reseeded = model.book_top.reseed_dead(reseed_rng, last_feats["top"])
        reseeded += model.book_bottom.reseed_dead(reseed_rng, last_feats["bottom"])
        entry = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "rec_vertex_mse": float(np.mean(rec_mses)),
            "perplexity_top": model.book_top.perplexity(np.concatenate([i.reshape(-1) for i in idx_t_pool])),
            "perplexity_bottom": model.book_bottom.perplexity(np.concatenate([i.reshape(-1) for i in idx_b_pool])),
            "reseeded": reseeded,
        }
        if val_windows and (epoch % 10 == 9 or epoch == cfg.epochs - 1):
            entry["val_vertex_mse"] = eval_reconstruction(model, world, val_windows)
        history.append(entry)
        if log:
            log(entry)
    return model, history


def eval_reconstruction(model, world: SynthWorld, windows, batch: int = 128) -> float:
    """Held-out vertex-space reconstruction MSE (no tape, no smoothing)."""
    errs = []
    for i in range(0, len(windows), batch):
        x = np.stack([w.motion for w in windows[i : i + batch]])
        recon = model.reconstruct(x)
        dv = world.vertices(recon) - world.vertices(x)
        errs.append(np.mean(dv**2))
    return float(np.mean(errs))
