"""Stage orchestration over one output directory.

Each stage reads the artifacts of earlier stages, fails fast with the name of
the command that produces a missing prerequisite, and writes its own outputs
atomically. Every stage snapshots the resolved configuration; a differing
snapshot from an earlier stage produces a warning, never silent reuse.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import replace

import numpy as np

from . import report as rpt
from .baselines import SingleVqvae, VaePrior, train_single_vqvae, train_vae
from .config import RunConfig, config_hash, config_text, parse_config
from .dataio import load_checkpoint, read_dataset, save_checkpoint, write_array, write_dataset
from .embedding import EmotionEmbedder, encode_windows, train_dee
from .features import EmotionClassifier, MotionVae, train_emotion_classifier, train_feature_encoder
from .generator import (
    ContinuousGenerator,
    GenConfig,
    Generator,
    SingleVqGenerator,
    train_generator_stage1,
    train_generator_stage2,
)
from .metrics import (
    cosine_histograms,
    diversity,
    feature_frechet,
    lip_content_correlation,
    mean_lip_content_correlation,
    retrieval_by_emotion,
)
from .prior import ThvqvaeModel, eval_reconstruction, train_thvqvae
from .synth import SynthWorld, window_content_curve, windows_from_clips


class MissingPrerequisiteError(RuntimeError):
    """A required artifact is absent; the message names the producing command."""


class NumericalFailureError(RuntimeError):
    """A stage produced non-finite numbers."""


class Paths:
    """Artifact layout inside one run directory."""

    def __init__(self, root: str):
        self.root = os.path.abspath(os.fspath(root))
        self.config_snapshot = os.path.join(self.root, "config.resolved.txt")
        self.dataset_train = os.path.join(self.root, "dataset", "train")
        self.dataset_val = os.path.join(self.root, "dataset", "val")
        self.checkpoints = os.path.join(self.root, "checkpoints")
        self.logs = os.path.join(self.root, "logs")
        self.reports = os.path.join(self.root, "reports")
        self.samples = os.path.join(self.root, "samples")

    def ckpt(self, name: str) -> str:
        return os.path.join(self.checkpoints, name + ".ckpt")

    def log(self, name: str) -> str:
        return os.path.join(self.logs, name + ".json")


def _require(path: str, command: str, what: str):
    if not os.path.exists(path):
        raise MissingPrerequisiteError(f"{what} not found at {path}; run '{command}' first")


def snapshot_config(cfg: RunConfig, paths: Paths):
    """Write the resolved config; warn if a previous stage used a different one."""
    os.makedirs(paths.root, exist_ok=True)
    text = config_text(cfg)
    if os.path.exists(paths.config_snapshot):
        with open(paths.config_snapshot, "r", encoding="utf-8") as fh:
            old = fh.read()
        if old != text:
            old_hash = config_hash(parse_config(old))
            warnings.warn(
                f"config hash mismatch with earlier stages ({old_hash} vs {config_hash(cfg)}); "
                "artifacts in this directory mix configurations",
                stacklevel=2,
            )
    tmp = paths.config_snapshot + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, paths.config_snapshot)


# ---------------------------------------------------------------------------
# checkpoint helpers for models that carry EMA codebooks

_BOOK_ATTRS = ("book", "book_top", "book_bottom")
_BOOK_KEYS = ("codes", "ema_counts", "ema_sums")


def save_full_model(path: str, model, meta: dict | None = None):
    arrays = {f"p{i:04d}": a for i, a in enumerate(model.state_arrays())}
    for attr in _BOOK_ATTRS:
        if hasattr(model, attr):
            state = getattr(model, attr).state_arrays()
            for key in _BOOK_KEYS:
                arrays[f"{attr}.{key}"] = state[key]
    save_checkpoint(path, arrays, meta)


def load_full_model(path: str, model) -> dict:
    arrays, meta = load_checkpoint(path)
    params = [v for k, v in arrays.items() if k.startswith("p")]
    model.load_state_arrays(params)
    for attr in _BOOK_ATTRS:
        if hasattr(model, attr):
            getattr(model, attr).load_state_arrays({key: arrays[f"{attr}.{key}"] for key in _BOOK_KEYS})
    return meta


# ---------------------------------------------------------------------------
# stages

def stage_gen_data(cfg: RunConfig, paths: Paths) -> dict:
    from .synth import make_clips

    snapshot_config(cfg, paths)
    world = SynthWorld(cfg.seed)
    d = cfg.data
    dur = (d.duration_min, d.duration_max)
    inten = (d.intensity_min, d.intensity_max)
    train_clips = make_clips(world, d.n_train, seed=1, duration_range=dur, intensity_range=inten)
    val_clips = make_clips(world, d.n_val, seed=2, duration_range=dur, intensity_range=inten)
    write_dataset(paths.dataset_train, world, train_clips)
    write_dataset(paths.dataset_val, world, val_clips)
    return {"train_clips": len(train_clips), "val_clips": len(val_clips)}


def load_data(paths: Paths):
    _require(os.path.join(paths.dataset_train, "manifest.json"), "gen-data", "training dataset")
    _require(os.path.join(paths.dataset_val, "manifest.json"), "gen-data", "validation dataset")
    world, train_clips = read_dataset(paths.dataset_train)
    _, val_clips = read_dataset(paths.dataset_val)
    return world, train_clips, val_clips


def _write_history(paths: Paths, name: str, history: list[dict]):
    os.makedirs(paths.logs, exist_ok=True)
    rpt.write_json(paths.log(name), history)


def stage_train_dee(cfg: RunConfig, paths: Paths, log=None) -> dict:
    snapshot_config(cfg, paths)
    world, train_clips, val_clips = load_data(paths)
    model, history = train_dee(world, train_clips, val_clips, cfg.dee, cfg.seed, log=log)
    os.makedirs(paths.checkpoints, exist_ok=True)
    save_full_model(paths.ckpt("dee"), model, {"stage": "dee", "config_hash": config_hash(cfg)})
    _write_history(paths, "dee", history)
    return {"final": history[-1] if history else {}}


def stage_train_vqvae(cfg: RunConfig, paths: Paths, log=None) -> dict:
    snapshot_config(cfg, paths)
    world, train_clips, val_clips = load_data(paths)
    model, history = train_thvqvae(world, train_clips, val_clips, cfg.prior, cfg.seed, log=log)
    os.makedirs(paths.checkpoints, exist_ok=True)
    save_full_model(paths.ckpt("thvqvae"), model, {"stage": "thvqvae", "config_hash": config_hash(cfg)})
    _write_history(paths, "thvqvae", history)
    return {"final": history[-1] if history else {}}


def _load_dee(cfg: RunConfig, paths: Paths, world: SynthWorld) -> EmotionEmbedder:
    _require(paths.ckpt("dee"), "train-dee", "emotion embedder checkpoint")
    model = EmotionEmbedder(np.random.default_rng(0), world.params, cfg.dee)
    load_full_model(paths.ckpt("dee"), model)
    return model


def _load_prior(cfg: RunConfig, paths: Paths, world: SynthWorld) -> ThvqvaeModel:
    _require(paths.ckpt("thvqvae"), "train-vqvae", "motion prior checkpoint")
    model = ThvqvaeModel(np.random.default_rng(0), world.params.d_motion, cfg.prior)
    load_full_model(paths.ckpt("thvqvae"), model)
    return model


def stage_train_gen(cfg: RunConfig, paths: Paths, log=None) -> dict:
    snapshot_config(cfg, paths)
    world, train_clips, _ = load_data(paths)
    dee = _load_dee(cfg, paths, world)
    prior = _load_prior(cfg, paths, world)
    model = Generator(np.random.default_rng([cfg.seed, 0x6E, 0]), world, dee, prior, cfg.gen)
    hist1 = train_generator_stage1(model, world, dee, train_clips, cfg.gen, cfg.seed, log=log)
    os.makedirs(paths.checkpoints, exist_ok=True)
    save_full_model(paths.ckpt("generator_stage1"), model, {"stage": "generator_stage1"})
    hist2 = train_generator_stage2(model, world, dee, train_clips, cfg.gen, cfg.seed, log=log)
    save_full_model(paths.ckpt("generator_full"), model, {"stage": "generator_full", "config_hash": config_hash(cfg)})
    _write_history(paths, "generator", hist1 + hist2)
    return {"final": (hist1 + hist2)[-1] if hist1 + hist2 else {}}


def ensure_eval_encoders(cfg: RunConfig, paths: Paths, world: SynthWorld, train_clips) -> tuple[MotionVae, EmotionClassifier]:
    """Train-or-load the frozen feature encoders shared by every evaluation."""
    os.makedirs(paths.checkpoints, exist_ok=True)
    feat_path = paths.ckpt("feature_vae")
    clf_path = paths.ckpt("emotion_clf")
    if os.path.exists(feat_path):
        feat = MotionVae(np.random.default_rng(0), world.params.d_motion, 50, cfg.feat)
        load_full_model(feat_path, feat)
    else:
        feat, hist = train_feature_encoder(world, train_clips, cfg.feat, cfg.seed)
        save_full_model(feat_path, feat, {"stage": "feature_vae"})
        _write_history(paths, "feature_vae", hist)
    if os.path.exists(clf_path):
        clf = EmotionClassifier(np.random.default_rng(0), world.params.d_motion, world.params.n_emotions, cfg.feat)
        load_full_model(clf_path, clf)
    else:
        clf, hist = train_emotion_classifier(world, train_clips, cfg.feat, cfg.seed)
        save_full_model(clf_path, clf, {"stage": "emotion_clf"})
        _write_history(paths, "emotion_clf", hist)
    return feat, clf


def _eval_windows(cfg: RunConfig, world: SynthWorld, val_clips):
    rng = np.random.default_rng([cfg.seed, 0xEB, 0])
    windows = windows_from_clips(val_clips, rng)
    audio = np.stack([w.audio for w in windows])
    motion = np.stack([w.motion for w in windows])
    ids = np.array([w.spec.identity_id for w in windows])
    labels = np.array([w.spec.emotion_id for w in windows])
    contents = np.stack([window_content_curve(world, w) for w in windows])
    return windows, audio, motion, ids, labels, contents


def _generate_chunked(gen, audio, ids, rng, batch: int = 64, **kw) -> np.ndarray:
    out = []
    for s in range(0, len(audio), batch):
        out.append(gen.generate_batch(audio[s : s + batch], ids[s : s + batch], rng=rng, **kw))
    return np.concatenate(out, axis=0)


def _check_finite(name: str, arr: np.ndarray):
    if not np.isfinite(arr).all():
        raise NumericalFailureError(f"{name} contains non-finite values")


def evaluate_generator_metrics(cfg, world, gen, feat, clf, audio, motion, ids, labels, contents) -> dict:
    """Distribution, classifier and lip metrics for one generator."""
    e = cfg.eval
    rng = np.random.default_rng([cfg.seed, 0xEB, 1])
    generated = _generate_chunked(
        gen, audio, ids, rng, alpha=e.alpha, tau_t=e.tau_t, tau_b=e.tau_b, mode="categorical"
    )
    _check_finite("generated motion", generated)
    return {
        "ffd": feature_frechet(motion, generated, feat),
        "emo_fid": feature_frechet(motion, generated, clf),
        "classifier_acc": clf.accuracy(generated, labels),
        "lip_corr": mean_lip_content_correlation(generated, contents, world.fast_dims),
    }


def diversity_sweep(cfg, world, gen, audio, ids, contents) -> list[dict]:
    """Diversity and lip correlation across sampling settings."""
    e = cfg.eval
    n = min(e.diversity_inputs, len(audio))
    settings = [
        {"setting": "deterministic", "alpha": "mean", "tau_t": e.tau_t, "tau_b": e.tau_b, "mode": "argmax"},
        {"setting": "sampled tau_t=0.1", "alpha": e.alpha, "tau_t": 0.1, "tau_b": 1.0, "mode": "categorical"},
        {"setting": "sampled tau_t=1.0", "alpha": e.alpha, "tau_t": 1.0, "tau_b": 1.0, "mode": "categorical"},
        {"setting": "sampled tau_t=4.5", "alpha": e.alpha, "tau_t": 4.5, "tau_b": 1.0, "mode": "categorical"},
    ]
    rows = []
    for si, s in enumerate(settings):
        rng = np.random.default_rng([cfg.seed, 0xEB, 2, si])
        divs, lips = [], []
        for i in range(n):
            rep_audio = np.repeat(audio[i : i + 1], e.diversity_k, axis=0)
            rep_ids = np.repeat(ids[i : i + 1], e.diversity_k, axis=0)
            draws = gen.generate_batch(
                rep_audio, rep_ids, alpha=s["alpha"], tau_t=s["tau_t"], tau_b=s["tau_b"], mode=s["mode"], rng=rng
            )
            divs.append(diversity(draws))
            lips.append(np.mean([lip_content_correlation(d, contents[i], world.fast_dims) for d in draws]))
        rows.append(
            {
                "setting": s["setting"],
                "alpha": str(s["alpha"]),
                "tau_t": s["tau_t"],
                "tau_b": s["tau_b"],
                "diversity": float(np.mean(divs)),
                "lip_corr": float(np.mean(lips)),
            }
        )
    return rows


def swap_eval(cfg, world, gen, dee, clf, audio, ids, labels, contents) -> dict:
    """Emotion transfer by embedding swap between different-emotion pairs."""
    rng = np.random.default_rng([cfg.seed, 0xEB, 3])
    n = len(audio)
    pairs = []
    tries = 0
    while len(pairs) < cfg.eval.swap_pairs and tries < 50 * cfg.eval.swap_pairs:
        i, j = rng.integers(n), rng.integers(n)
        if labels[i] != labels[j]:
            pairs.append((int(i), int(j)))
        tries += 1
    if not pairs:
        raise NumericalFailureError("no different-emotion pairs available for swap evaluation")
    recv = np.array([p[0] for p in pairs])
    donor = np.array([p[1] for p in pairs])
    mu_donor = dee.encode_audio(audio[donor]).mu.data
    base = _generate_chunked(gen, audio[recv], ids[recv], None, alpha="mean", mode="argmax")
    swapped = _generate_chunked(gen, audio[recv], ids[recv], None, alpha="mean", mode="argmax", style_override=mu_donor)
    pred = clf.predict(swapped)
    flip = float(np.mean(pred == labels[donor]))
    lip_base = mean_lip_content_correlation(base, contents[recv], world.fast_dims)
    lip_swap = mean_lip_content_correlation(swapped, contents[recv], world.fast_dims)
    return {
        "n_pairs": len(pairs),
        "flip_rate": flip,
        "lip_corr_unswapped": lip_base,
        "lip_corr_swapped": lip_swap,
        "lip_corr_delta": abs(lip_base - lip_swap),
    }


def retrieval_block(cfg, dee, windows, audio, motion, labels) -> tuple[dict, dict]:
    emb_a, _ = encode_windows(dee, windows, "audio")
    emb_m, _ = encode_windows(dee, windows, "motion")
    table = retrieval_by_emotion(emb_a, emb_m, labels)
    hists = cosine_histograms(emb_a, emb_m, labels)
    return table, hists


def stage_eval(cfg: RunConfig, paths: Paths) -> dict:
    snapshot_config(cfg, paths)
    world, train_clips, val_clips = load_data(paths)
    dee = _load_dee(cfg, paths, world)
    prior = _load_prior(cfg, paths, world)
    _require(paths.ckpt("generator_full"), "train-gen", "generator checkpoint")
    gen = Generator(np.random.default_rng(0), world, dee, prior, cfg.gen)
    load_full_model(paths.ckpt("generator_full"), gen)
    feat, clf = ensure_eval_encoders(cfg, paths, world, train_clips)

    windows, audio, motion, ids, labels, contents = _eval_windows(cfg, world, val_clips)
    generation = evaluate_generator_metrics(cfg, world, gen, feat, clf, audio, motion, ids, labels, contents)
    recon_mse = eval_reconstruction(prior, world, windows)
    table, hists = retrieval_block(cfg, dee, windows, audio, motion, labels)
    sweep = diversity_sweep(cfg, world, gen, audio, ids, contents)
    swap = swap_eval(cfg, world, gen, dee, clf, audio, ids, labels, contents)
    generation["real_classifier_acc"] = clf.accuracy(motion, labels)
    generation["real_lip_corr"] = mean_lip_content_correlation(motion, contents, world.fast_dims)

    report = {
        "config_hash": config_hash(cfg),
        "n_eval_windows": len(windows),
        "reconstruction": {"thvqvae_vertex_mse": recon_mse},
        "generation": generation,
        "retrieval": table,
        "cosine": {"same_mean": hists["same_mean"], "diff_mean": hists["diff_mean"]},
        "diversity": sweep,
        "swap": swap,
    }

    os.makedirs(paths.reports, exist_ok=True)
    rpt.write_json(os.path.join(paths.reports, "eval.json"), report)
    rpt.write_csv(
        os.path.join(paths.reports, "cosine_histograms.csv"),
        ["bin_left", "bin_right", "same_count", "diff_count"],
        [
            [float(hists["edges"][i]), float(hists["edges"][i + 1]), int(hists["same_hist"][i]), int(hists["diff_hist"][i])]
            for i in range(len(hists["same_hist"]))
        ],
    )
    rpt.write_csv(
        os.path.join(paths.reports, "diversity_sweep.csv"),
        ["setting", "alpha", "tau_t", "tau_b", "diversity", "lip_corr"],
        [[r["setting"], r["alpha"], r["tau_t"], r["tau_b"], r["diversity"], r["lip_corr"]] for r in sweep],
    )
    rpt.write_csv(
        os.path.join(paths.reports, "retrieval.csv"),
        ["direction_or_emotion", "top1_accuracy"],
        [["audio_to_motion", table["audio_to_motion"]], ["motion_to_audio", table["motion_to_audio"]]]
        + [[f"emotion_{e}", v] for e, v in sorted(table["per_emotion"].items())],
    )
    rpt.fig_cosine_histograms(hists, os.path.join(paths.reports, "cosine_histograms.png"))
    rpt.fig_retrieval_bars(table, os.path.join(paths.reports, "retrieval.png"))
    rpt.fig_diversity_sweep(sweep, os.path.join(paths.reports, "diversity_sweep.png"))
    for name, keys, title in (
        ("dee", ["loss"], "embedder training"),
        ("thvqvae", ["loss", "rec_vertex_mse"], "prior training"),
        ("generator", ["total", "rec"], "generator training"),
    ):
        if os.path.exists(paths.log(name)):
            import json

            with open(paths.log(name)) as fh:
                hist = json.load(fh)
            rpt.fig_training_curves(hist, keys, os.path.join(paths.reports, f"curves_{name}.png"), title)
    sample_rng = np.random.default_rng([cfg.seed, 0xEB, 4])
    demo = gen.generate_batch(audio[:1], ids[:1], alpha=cfg.eval.alpha, mode="categorical", rng=sample_rng)
    rpt.fig_motion_traces(demo[0], os.path.join(paths.reports, "sample_motion.png"), "generated motion sample")
    return report


# ---------------------------------------------------------------------------
# ablation

ABLATE_VARIANTS = ("full", "vae", "vqvae", "no-emo", "no-lip")


def _variant_generator(cfg: RunConfig, paths: Paths, world, dee, variant: str, train_clips, val_clips, log=None):
    """Train (or load) the requested generator variant; returns (gen, recon_mse)."""
    gen_cfg = cfg.gen
    seed = cfg.seed
    windows = windows_from_clips(val_clips, np.random.default_rng([seed, 0xEB, 0]))

    if variant in ("no-emo", "no-lip"):
        prior = _load_prior(cfg, paths, world)
        _require(paths.ckpt("generator_stage1"), "train-gen", "stage-1 generator checkpoint")
        model = Generator(np.random.default_rng([seed, 0x6E, 0]), world, dee, prior, gen_cfg)
        ckpt = paths.ckpt(f"generator_{variant}")
        if os.path.exists(ckpt):
            load_full_model(ckpt, model)
        else:
            load_full_model(paths.ckpt("generator_stage1"), model)
            stage_cfg = replace(gen_cfg, lambda_emo=0.0) if variant == "no-emo" else replace(gen_cfg, lambda_lip=0.0)
            hist = train_generator_stage2(model, world, dee, train_clips, stage_cfg, seed, log=log)
            save_full_model(ckpt, model, {"stage": f"generator_{variant}"})
            _write_history(paths, f"generator_{variant}", hist)
        return model, eval_reconstruction(_load_prior(cfg, paths, world), world, windows)

    if variant == "vae":
        prior_ckpt = paths.ckpt("vae_prior")
        if os.path.exists(prior_ckpt):
            prior = VaePrior(np.random.default_rng(0), world.params.d_motion, cfg.prior)
            load_full_model(prior_ckpt, prior)
        else:
            prior, hist = train_vae(world, train_clips, val_clips, cfg.prior, seed)
            save_full_model(prior_ckpt, prior, {"stage": "vae_prior"})
            _write_history(paths, "vae_prior", hist)
        model_cls = ContinuousGenerator
    elif variant == "vqvae":
        prior_ckpt = paths.ckpt("single_vq_prior")
        if os.path.exists(prior_ckpt):
            prior = SingleVqvae(np.random.default_rng(0), world.params.d_motion, cfg.prior)
            load_full_model(prior_ckpt, prior)
        else:
            prior, hist = train_single_vqvae(world, train_clips, val_clips, cfg.prior, seed)
            save_full_model(prior_ckpt, prior, {"stage": "single_vq_prior"})
            _write_history(paths, "single_vq_prior", hist)
        model_cls = SingleVqGenerator
    else:
        raise ValueError(f"unknown variant {variant!r}")

    recon = eval_reconstruction(prior, world, windows)
    model = model_cls(np.random.default_rng([seed, 0x6E, 0]), world, dee, prior, gen_cfg)
    ckpt = paths.ckpt(f"generator_{variant}")
    if os.path.exists(ckpt):
        load_full_model(ckpt, model)
    else:
        h1 = train_generator_stage1(model, world, dee, train_clips, gen_cfg, seed, log=log)
        h2 = train_generator_stage2(model, world, dee, train_clips, gen_cfg, seed, log=log)
        save_full_model(ckpt, model, {"stage": f"generator_{variant}"})
        _write_history(paths, f"generator_{variant}", h1 + h2)
    return model, recon


def _ablation_row(cfg, world, gen, feat, clf, eval_data, recon_mse) -> dict:
    windows, audio, motion, ids, labels, contents = eval_data
    row = evaluate_generator_metrics(cfg, world, gen, feat, clf, audio, motion, ids, labels, contents)
    row["recon_vertex_mse"] = recon_mse
    return row


def stage_ablate(cfg: RunConfig, paths: Paths, variant: str, log=None) -> dict:
    if variant not in ABLATE_VARIANTS:
        raise ValueError(f"variant must be one of {ABLATE_VARIANTS}, got {variant!r}")
    snapshot_config(cfg, paths)
    world, train_clips, val_clips = load_data(paths)
    dee = _load_dee(cfg, paths, world)
    feat, clf = ensure_eval_encoders(cfg, paths, world, train_clips)
    eval_data = _eval_windows(cfg, world, val_clips)

    table_path = os.path.join(paths.reports, "ablation.json")
    rows: dict[str, dict] = {}
    if os.path.exists(table_path):
        import json

        with open(table_path) as fh:
            rows = json.load(fh).get("rows", {})

    prior = _load_prior(cfg, paths, world)
    if "full" not in rows or variant == "full":
        _require(paths.ckpt("generator_full"), "train-gen", "generator checkpoint")
        full_gen = Generator(np.random.default_rng(0), world, dee, prior, cfg.gen)
        load_full_model(paths.ckpt("generator_full"), full_gen)
        windows = eval_data[0]
        rows["full"] = _ablation_row(cfg, world, full_gen, feat, clf, eval_data, eval_reconstruction(prior, world, windows))

    if variant != "full":
        gen, recon = _variant_generator(cfg, paths, world, dee, variant, train_clips, val_clips, log=log)
        rows[variant] = _ablation_row(cfg, world, gen, feat, clf, eval_data, recon)

    out = {"config_hash": config_hash(cfg), "rows": rows}
    os.makedirs(paths.reports, exist_ok=True)
    rpt.write_json(table_path, out)
    metric_names = ["ffd", "emo_fid", "classifier_acc", "lip_corr", "recon_vertex_mse"]
    rpt.write_csv(
        os.path.join(paths.reports, "ablation.csv"),
        ["variant"] + metric_names,
        [[name] + [rows[name][m] for m in metric_names] for name in sorted(rows)],
    )
    for metric in ("ffd", "emo_fid"):
        rpt.fig_metric_bars(rows, metric, os.path.join(paths.reports, f"ablation_{metric}.png"))
    return out


# ---------------------------------------------------------------------------
# sampling and swapping

def _load_generation_stack(cfg: RunConfig, paths: Paths):
    world, _, _ = load_data(paths)
    dee = _load_dee(cfg, paths, world)
    prior = _load_prior(cfg, paths, world)
    _require(paths.ckpt("generator_full"), "train-gen", "generator checkpoint")
    gen = Generator(np.random.default_rng(0), world, dee, prior, cfg.gen)
    load_full_model(paths.ckpt("generator_full"), gen)
    return world, dee, gen


def _head_window(audio: np.ndarray, frames: int = 100) -> np.ndarray:
    if audio.shape[0] < frames:
        pad = np.zeros((frames - audio.shape[0], audio.shape[1]), audio.dtype)
        return np.concatenate([audio, pad], axis=0)
    return audio[:frames]


def stage_sample(cfg: RunConfig, paths: Paths, audio_path: str, out_path: str, alpha, tau_t: float, tau_b: float, seed: int, identity: int = 0) -> str:
    from .dataio import read_array

    world, dee, gen = _load_generation_stack(cfg, paths)
    _require(audio_path, "gen-data", "audio file")
    audio = _head_window(read_array(audio_path))[None]
    mode = "argmax" if alpha == "mean" else "categorical"
    rng = None if alpha == "mean" else np.random.default_rng(seed)
    motion = gen.generate_batch(audio, np.array([identity]), alpha=alpha, tau_t=tau_t, tau_b=tau_b, mode=mode, rng=rng)
    _check_finite("sampled motion", motion)
    os.makedirs(os.path.dirname(os.path.abspath(out_path)) or ".", exist_ok=True)
    write_array(out_path, motion[0].astype(np.float32))
    return out_path


def stage_swap(cfg: RunConfig, paths: Paths, audio_a: str, audio_b: str, out_dir: str, identity: int = 0) -> tuple[str, str]:
    """Generate each clip's motion with the other clip's emotion embedding."""
    from .dataio import read_array

    world, dee, gen = _load_generation_stack(cfg, paths)
    for p in (audio_a, audio_b):
        _require(p, "gen-data", "audio file")
    a = _head_window(read_array(audio_a))[None]
    b = _head_window(read_array(audio_b))[None]
    mu_a = dee.encode_audio(a).mu.data
    mu_b = dee.encode_audio(b).mu.data
    ids = np.array([identity])
    out_a = gen.generate_batch(a, ids, alpha="mean", mode="argmax", style_override=mu_b)
    out_b = gen.generate_batch(b, ids, alpha="mean", mode="argmax", style_override=mu_a)
    _check_finite("swapped motion", out_a)
    _check_finite("swapped motion", out_b)
    os.makedirs(out_dir, exist_ok=True)
    path_a = os.path.join(out_dir, "content_a_emotion_b.mot")
    path_b = os.path.join(out_dir, "content_b_emotion_a.mot")
    write_array(path_a, out_a[0].astype(np.float32))
    write_array(path_b, out_b[0].astype(np.float32))
    return path_a, path_b
