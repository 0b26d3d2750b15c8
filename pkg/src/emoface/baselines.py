"""Ablation priors: continuous VAE and single-level VQ-VAE.

Both reuse the hierarchy's encoder/decoder stacks at matched capacity. The
VAE swaps each quantizer for a diagonal-Gaussian reparameterized bottleneck
with a small KL penalty; the single-level model keeps only the bottom pathway
with a code budget equal to the two hierarchy books combined.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Adam, Linear, Module, clip_grad_norm
from .prior import PriorConfig, SeqDecoder, SeqEncoder, vertex_mse
from .quantizer import Codebook, commitment_loss
from .synth import Clip, SynthWorld, windows_from_clips
from .tensor import GradTape, Tensor


@dataclass(frozen=True)
class VaeConfig:
    kl_weight: float = 1e-4


class VaePrior(Module):
    """Two-level continuous prior: Gaussian bottlenecks in place of codebooks."""

    def __init__(self, rng, d_motion: int, cfg: PriorConfig = PriorConfig(), kl_weight: float = 1e-4):
        self.cfg = cfg
        self.kl_weight = kl_weight
        c_split = cfg.c_bottom - cfg.c_top
        self.enc_bottom = SeqEncoder(rng, d_motion, c_split, cfg.q_bottom, cfg.n_heads)
        self.enc_top = SeqEncoder(rng, c_split, cfg.c_top, cfg.q_top, cfg.n_heads)
        self.top_mu = Linear(rng, cfg.c_top, cfg.c_top)
        self.top_lv = Linear(rng, cfg.c_top, cfg.c_top)
        self.dec_top = SeqDecoder(rng, cfg.c_top, cfg.c_top, cfg.q_top, cfg.n_heads)
        self.bottom_mu = Linear(rng, cfg.c_bottom, cfg.c_bottom)
        self.bottom_lv = Linear(rng, cfg.c_bottom, cfg.c_bottom)
        self.dec_bottom = SeqDecoder(rng, cfg.c_top + cfg.c_bottom, d_motion, cfg.q_bottom, cfg.n_heads)

    def forward(self, x: Tensor, rng: np.random.Generator | None) -> dict:
        """Sampling path when an rng is given, mean path otherwise."""
        z_b_hat = self.enc_bottom(x)
        z_t_hat = self.enc_top(z_b_hat)
        mu_t, lv_t = self.top_mu(z_t_hat), self.top_lv(z_t_hat)
        z_t = self._draw(mu_t, lv_t, rng)
        z_t_dec = self.dec_top(z_t)
        bottom_pre = T.concat([z_b_hat, z_t_dec], axis=-1)
        mu_b, lv_b = self.bottom_mu(bottom_pre), self.bottom_lv(bottom_pre)
        z_b = self._draw(mu_b, lv_b, rng)
        ups = T.repeat_time(z_t, self.cfg.q_top)
        recon = self.dec_bottom(T.concat([ups, z_b], axis=-1))
        return {"recon": recon, "mu_t": mu_t, "lv_t": lv_t, "mu_b": mu_b, "lv_b": lv_b}

    @staticmethod
    def _draw(mu: Tensor, lv: Tensor, rng) -> Tensor:
        if rng is None:
            return mu
        eps = rng.standard_normal(mu.shape).astype(np.float32)
        return mu + T.exp(0.5 * lv) * Tensor(eps)

    def decode_latents(self, z_t: Tensor, z_b: Tensor) -> Tensor:
        ups = T.repeat_time(z_t, self.cfg.q_top)
        return self.dec_bottom(T.concat([ups, z_b], axis=-1))

    def reconstruct(self, motion: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(motion), rng=None)["recon"].data


def _kl_to_standard(mu: Tensor, lv: Tensor) -> Tensor:
    """KL(N(mu, exp(lv)) || N(0, 1)), summed over latent dims, mean over batch."""
    per_dim = 0.5 * (T.exp(lv) + mu * mu - lv - 1.0)
    b = mu.shape[0]
    return T.sum_(per_dim) * (1.0 / b)


def vae_loss(model: VaePrior, x: np.ndarray, out: dict, vertex_weights: np.ndarray) -> tuple[Tensor, dict]:
    rec = vertex_mse(out["recon"], x, vertex_weights)
    kl = _kl_to_standard(out["mu_t"], out["lv_t"]) + _kl_to_standard(out["mu_b"], out["lv_b"])
    total = model.cfg.w_rec * rec + model.kl_weight * kl
    return total, {"rec_vertex_mse": rec.item(), "kl": kl.item()}


class SingleVqvae(Module):
    """Bottom pathway only; one codebook sized n_top+n_bottom."""

    def __init__(self, rng, d_motion: int, cfg: PriorConfig = PriorConfig()):
        self.cfg = cfg
        self.enc = SeqEncoder(rng, d_motion, cfg.c_bottom, cfg.q_bottom, cfg.n_heads)
        self.dec = SeqDecoder(rng, cfg.c_bottom, d_motion, cfg.q_bottom, cfg.n_heads)
        self.book = Codebook(rng, cfg.n_top + cfg.n_bottom, cfg.c_bottom, decay=cfg.ema_decay)

    def forward(self, x: Tensor) -> dict:
        z_hat = self.enc(x)
        z_q, idx = self.book.quantize_st(z_hat)
        recon = self.dec(z_q)
        return {"z_hat": z_hat, "z_q": z_q, "idx": idx, "recon": recon}

    def decode_codes(self, z_q: Tensor) -> Tensor:
        return self.dec(z_q)

    def reconstruct(self, motion: np.ndarray) -> np.ndarray:
        return self.forward(Tensor(motion))["recon"].data


def single_vq_loss(model: SingleVqvae, x: np.ndarray, out: dict, vertex_weights: np.ndarray) -> tuple[Tensor, dict]:
    rec = vertex_mse(out["recon"], x, vertex_weights)
    commit = commitment_loss(out["z_hat"], out["z_q"])
    total = model.cfg.w_rec * rec + model.cfg.beta * commit
    return total, {"rec_vertex_mse": rec.item(), "commit": commit.item()}


def train_vae(world: SynthWorld, train_clips: list[Clip], val_clips: list[Clip], cfg: PriorConfig, seed: int, kl_weight: float = 1e-4, log=None):
    model = VaePrior(np.random.default_rng([seed, 0xAE, 0]), world.params.d_motion, cfg, kl_weight)
    return _train_continuous(model, world, train_clips, val_clips, cfg, seed, log)


def _train_continuous(model, world, train_clips, val_clips, cfg, seed, log):
    data_rng = np.random.default_rng([seed, 0xAE, 1])
    noise_rng = np.random.default_rng([seed, 0xAE, 2])
    opt = Adam(model.parameters(), lr=cfg.lr)
    vw = world.vertex_map.weights
    n = len(train_clips)
    val_windows = windows_from_clips(val_clips, np.random.default_rng([seed, 0xAE, 3])) if val_clips else []

    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = data_rng.permutation(n)
        windows = windows_from_clips([train_clips[i] for i in order], data_rng)
        losses, rec_mses = [], []
        for s in range(0, n, cfg.batch_size):
            chunk = windows[s : s + cfg.batch_size]
            x = np.stack([w.motion for w in chunk])
            opt.zero_grad()
            with GradTape() as tape:
                out = model.forward(Tensor(x), rng=noise_rng)
                loss, parts = vae_loss(model, x, out, vw)
            tape.backward(loss)
            clip_grad_norm(model.parameters(), 5.0)
            lr = cfg.lr * min(1.0, (step + 1) / max(1, cfg.warmup_steps))
            opt.step(lr=lr)
            losses.append(loss.item())
            rec_mses.append(parts["rec_vertex_mse"])
            step += 1
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "rec_vertex_mse": float(np.mean(rec_mses))}
        if val_windows and (epoch % 10 == 9 or epoch == cfg.epochs - 1):
            from .prior import eval_reconstruction

            entry["val_vertex_mse"] = eval_reconstruction(model, world, val_windows)
        history.append(entry)
        if log:
            log(entry)
    return model, history


def train_single_vqvae(world: SynthWorld, train_clips: list[Clip], val_clips: list[Clip], cfg: PriorConfig, seed: int, log=None):
    model = SingleVqvae(np.random.default_rng([seed, 0x51, 0]), world.params.d_motion, cfg)
    data_rng = np.random.default_rng([seed, 0x51, 1])
    reseed_rng = np.random.default_rng([seed, 0x51, 2])
    opt = Adam(model.parameters(), lr=cfg.lr)
    vw = world.vertex_map.weights
    n = len(train_clips)
    val_windows = windows_from_clips(val_clips, np.random.default_rng([seed, 0x51, 3])) if val_clips else []

    history = []
    step = 0
    for epoch in range(cfg.epochs):
        order = data_rng.permutation(n)
        windows = windows_from_clips([train_clips[i] for i in order], data_rng)
        losses, rec_mses, idx_pool = [], [], []
        last_feats = None
        for s in range(0, n, cfg.batch_size):
            chunk = windows[s : s + cfg.batch_size]
            x = np.stack([w.motion for w in chunk])
            opt.zero_grad()
            with GradTape() as tape:
                out = model.forward(Tensor(x))
                loss, parts = single_vq_loss(model, x, out, vw)
            tape.backward(loss)
            clip_grad_norm(model.parameters(), 5.0)
            lr = cfg.lr * min(1.0, (step + 1) / max(1, cfg.warmup_steps))
            opt.step(lr=lr)
            model.book.ema_update(out["z_hat"].data, out["idx"])
            losses.append(loss.item())
            rec_mses.append(parts["rec_vertex_mse"])
            idx_pool.append(out["idx"])
            last_feats = out["z_hat"].data
            step += 1
        reseeded = model.book.reseed_dead(reseed_rng, last_feats)
        entry = {
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "rec_vertex_mse": float(np.mean(rec_mses)),
            "perplexity": model.book.perplexity(np.concatenate([i.reshape(-1) for i in idx_pool])),
            "reseeded": reseeded,
        }
        if val_windows and (epoch % 10 == 9 or epoch == cfg.epochs - 1):
            from .prior import eval_reconstruction

            entry["val_vertex_mse"] = eval_reconstruction(model, world, val_windows)
        history.append(entry)
        if log:
            log(entry)
    return model, history
