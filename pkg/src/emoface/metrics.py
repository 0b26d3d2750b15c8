"""Distribution distances, retrieval, diversity and lip-sync measures.

All functions are pure numpy over float64; the feature-space distances take
an injectable frozen encoder so tests can substitute identity features.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MinSamplesError(ValueError):
    """Too few samples to estimate the statistic."""


class NonPsdError(ValueError):
    """A covariance matrix has a significantly negative eigenvalue."""


class ConstantInputError(ValueError):
    """Correlation is undefined for an input with zero variance."""


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int = 2


def gaussian_stats(x: np.ndarray) -> GaussianStats:
    """Sample mean and unbiased covariance of rows."""
    x = np.asarray(x, np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected (n, d) samples, got shape {x.shape}")
    if x.shape[0] < 2:
        raise MinSamplesError(f"need at least 2 samples, got {x.shape[0]}")
    mean = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False, ddof=1))
    return GaussianStats(mean=mean, cov=cov, n=x.shape[0])


def _psd_sqrt_trace(m: np.ndarray) -> float:
    """Trace of the PSD square root via eigendecomposition of (M + M^T)/2."""
    sym = (m + m.T) / 2.0
    eig = np.linalg.eigvalsh(sym)
    floor = -1e-6 * max(1.0, float(np.max(np.abs(eig), initial=0.0)))
    if np.any(eig < floor):
        raise NonPsdError(f"matrix has negative eigenvalue {float(eig.min()):g}")
    return float(np.sum(np.sqrt(np.clip(eig, 0.0, None))))


def _psd_sqrt(m: np.ndarray) -> np.ndarray:
    sym = (m + m.T) / 2.0
    eig, vec = np.linalg.eigh(sym)
    floor = -1e-6 * max(1.0, float(np.max(np.abs(eig), initial=0.0)))
    if np.any(eig < floor):
        raise NonPsdError(f"matrix has negative eigenvalue {float(eig.min()):g}")
    return (vec * np.sqrt(np.clip(eig, 0.0, None))) @ vec.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """Squared 2-Wasserstein distance between Gaussians.

    |mu1-mu2|^2 + tr(S1 + S2 - 2 (S1^{1/2} S2 S1^{1/2})^{1/2}), computed via
    symmetric eigendecompositions with small negative eigenvalues clamped.
    """
    for s in (a, b):
        if not np.allclose(s.cov, s.cov.T, atol=1e-8):
            raise ValueError("covariance matrix is not symmetric")
    mu_term = float(np.sum((a.mean - b.mean) ** 2))
    root_a = _psd_sqrt(a.cov)
    cross = _psd_sqrt_trace(root_a @ b.cov @ root_a)
    val = mu_term + float(np.trace(a.cov) + np.trace(b.cov)) - 2.0 * cross
    return max(val, 0.0)


def feature_frechet(real: np.ndarray, generated: np.ndarray, encoder) -> float:
    """Frechet distance between encoder features of two motion-window sets.

    Each side needs at least d+1 windows (d = feature dimension) so the
    covariance estimate has full possible rank.
    """
    f_real = encoder.features(real)
    f_gen = encoder.features(generated)
    d = f_real.shape[1]
    for name, f in (("real", f_real), ("generated", f_gen)):
        if f.shape[0] < d + 1:
            raise MinSamplesError(f"{name} set has {f.shape[0]} samples; need at least {d + 1} for {d}-dim features")
    return frechet_distance(gaussian_stats(f_real), gaussian_stats(f_gen))


def diversity(samples: np.ndarray) -> float:
    """Mean L2 distance between all unordered pairs of flattened samples."""
    x = np.asarray(samples, np.float64)
    k = x.shape[0]
    if k < 2:
        raise MinSamplesError(f"diversity needs at least 2 samples, got {k}")
    flat = x.reshape(k, -1)
    sq = np.sum(flat**2, axis=1)
    d2 = np.clip(sq[:, None] + sq[None, :] - 2.0 * flat @ flat.T, 0.0, None)
    iu = np.triu_indices(k, 1)
    return float(np.mean(np.sqrt(d2[iu])))


def retrieval_top1(query: np.ndarray, gallery: np.ndarray, labels: np.ndarray) -> float:
    """Label accuracy of nearest-cosine retrieval from query rows into gallery."""
    q = np.asarray(query, np.float64)
    g = np.asarray(gallery, np.float64)
    labels = np.asarray(labels)
    if len(q) == 0:
        raise MinSamplesError("retrieval needs a non-empty embedding set")
    if len(q) != len(g) or len(q) != len(labels):
        raise ValueError("query, gallery and labels must align")
    qn = q / np.maximum(np.linalg.norm(q, axis=1, keepdims=True), 1e-12)
    gn = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-12)
    hit = labels[np.argmax(qn @ gn.T, axis=1)] == labels
    return float(np.mean(hit))


def retrieval_by_emotion(emb_a: np.ndarray, emb_m: np.ndarray, labels: np.ndarray) -> dict:
    """Both retrieval directions overall and per emotion label."""
    labels = np.asarray(labels)
    out = {
        "audio_to_motion": retrieval_top1(emb_a, emb_m, labels),
        "motion_to_audio": retrieval_top1(emb_m, emb_a, labels),
        "per_emotion": {},
    }
    qn = emb_a / np.maximum(np.linalg.norm(emb_a, axis=1, keepdims=True), 1e-12)
    gn = emb_m / np.maximum(np.linalg.norm(emb_m, axis=1, keepdims=True), 1e-12)
    hit = labels[np.argmax(qn @ gn.T, axis=1)] == labels
    for e in np.unique(labels):
        out["per_emotion"][int(e)] = float(np.mean(hit[labels == e]))
    return out


def cosine_histograms(emb_a: np.ndarray, emb_m: np.ndarray, labels: np.ndarray, bins: int = 40) -> dict:
    """Cosine similarity histograms of same- vs different-emotion cross pairs."""
    a = np.asarray(emb_a, np.float64)
    m = np.asarray(emb_m, np.float64)
    labels = np.asarray(labels)
    if len(a) == 0:
        raise MinSamplesError("histograms need a non-empty embedding set")
    an = a / np.maximum(np.linalg.norm(a, axis=1, keepdims=True), 1e-12)
    mn = m / np.maximum(np.linalg.norm(m, axis=1, keepdims=True), 1e-12)
    cos = np.clip(an @ mn.T, -1.0, 1.0)
    same_mask = labels[:, None] == labels[None, :]
    edges = np.linspace(-1.0, 1.0, bins + 1)
    same = cos[same_mask]
    diff = cos[~same_mask]
    return {
        "edges": edges,
        "same_hist": np.histogram(same, bins=edges)[0],
        "diff_hist": np.histogram(diff, bins=edges)[0],
        "same_mean": float(same.mean()) if same.size else float("nan"),
        "diff_mean": float(diff.mean()) if diff.size else float("nan"),
    }


def lip_content_correlation(motion: np.ndarray, content: np.ndarray, fast_dims: np.ndarray, max_lag: int = 2) -> float:
    """Lip-sync proxy: fast motion dims against the ground-truth content curve.

    Per channel i, Pearson correlation of motion[:, fast_dims[i]] with
    content[:, i]; the per-lag mean over channels is maximized over time lags
    in [-max_lag, max_lag].
    """
    motion = np.asarray(motion, np.float64)
    content = np.asarray(content, np.float64)
    if motion.ndim != 2 or content.ndim != 2:
        raise ValueError("expected single (T, d) sequences")
    if motion.shape[0] != content.shape[0]:
        raise ValueError(f"length mismatch {motion.shape[0]} vs {content.shape[0]}")
    fast_dims = np.asarray(fast_dims)
    if content.shape[1] != fast_dims.size:
        raise ValueError(f"content has {content.shape[1]} channels, expected {fast_dims.size}")
    m = motion[:, fast_dims]
    t = m.shape[0]
    best = -1.0
    for lag in range(-max_lag, max_lag + 1):
        if lag >= 0:
            ms, cs = m[lag:], content[: t - lag]
        else:
            ms, cs = m[:lag], content[-lag:]
        mc = ms - ms.mean(axis=0)
        cc = cs - cs.mean(axis=0)
        denom = np.sqrt(np.sum(mc**2, axis=0) * np.sum(cc**2, axis=0))
        if np.any(denom == 0.0):
            raise ConstantInputError("a channel has zero variance; correlation undefined")
        best = max(best, float(np.mean(np.sum(mc * cc, axis=0) / denom)))
    return best


def mean_lip_content_correlation(motions: np.ndarray, contents: np.ndarray, fast_dims: np.ndarray, max_lag: int = 2) -> float:
    """Mean of the per-window lip-content correlation over a batch."""
    return float(np.mean([lip_content_correlation(m, c, fast_dims, max_lag) for m, c in zip(motions, contents)]))
