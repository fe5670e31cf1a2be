"""Training, evaluation, robustness sweeps, latency bench and ablations."""
import csv
import hashlib
import os
import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from . import config as config_mod
from . import degrade, metrics, nn, residual, synth
from .errors import CheckpointError, ConfigurationError, InvalidParameterError, NumericError
from .model import Detector, param_census

LOSS_LOG_HEADER = ("epoch", "L_main", "L_mil", "L_tv", "L_rca", "w", "m", "L_total")


@dataclass
class RunReport:
    epochs: list = field(default_factory=list)  # dicts with the loss-log columns
    metrics: dict = None
    census: dict = None
    timing: dict = None
    seconds: float = 0.0
    steps: int = 0


def frozen_checksum(store):
    h = hashlib.sha256()
    for p in store.frozen():
        h.update(p.name.encode())
        h.update(np.ascontiguousarray(p.data).tobytes())
    return h.hexdigest()


# ----------------------------------------------------------------- data

def load_split(cfg, split):
    manifest = cfg.data.train_manifest if split == "train" else cfg.data.test_manifest
    if manifest:
        return synth.load_manifest(manifest)
    if split == "train":
        return synth.make_split(cfg.synth, "train")
    n = cfg.data.n_val if split == "val" else cfg.data.n_test
    return synth.make_split(cfg.synth, split, n, n)


def curriculum_batch(images, cfg, epoch, rng):
    """Stochastic noise / JPEG degradations plus per-image smoothing sigmas."""
    cur = cfg.curriculum
    sched = degrade.CurriculumSchedule(cfg.optim.epochs, cur.p_noise_max, cur.p_jpeg_max)
    p_noise, p_jpeg = degrade.curriculum_probability(sched, min(epoch, cfg.optim.epochs - 1))
    out = np.empty_like(images)
    for i, img in enumerate(images):
        if rng.random() < p_noise:
            try:
                img = degrade.apply_noise_snr(img, rng.uniform(*cur.snr_db_range), rng)
            except ValueError:
                pass  # all-black image: no defined SNR, leave it clean
        if rng.random() < p_jpeg:
            lo, hi = cur.jpeg_quality_range
            img = degrade.apply_jpeg_like(img, int(rng.integers(lo, hi + 1)))
        out[i] = img
    sigmas = rng.uniform(*cur.sigma_range, size=len(images))
    return out, sigmas


# ---------------------------------------------------------------- train

def train(cfg, train_set=None, out_dir=None, log=None, max_steps=None, detector=None):
    """Train a detector; returns ``(detector, RunReport)``.

    One optimiser step is taken every ``grad_accum`` micro-batches of
    ``batch_size`` images (and once more for a trailing partial group).
    """
    cfg.validate()
    t0 = time.perf_counter()
    det = detector if detector is not None else Detector(cfg)
    store = det.store
    data = train_set if train_set is not None else load_split(cfg, "train")
    opt = cfg.optim
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2]))
    checksum = frozen_checksum(store)
    nn.ema_init(store)
    report = RunReport(census=param_census(det))
    n = len(data)
    n_micro = -(-n // opt.batch_size)
    total_steps = opt.epochs * -(-n_micro // opt.grad_accum)
    steps = 0
    log_rows = []
    for epoch in range(opt.epochs):
        order = rng.permutation(n)
        sums, count = {}, 0
        store.zero_grad()
        pending = 0
        for mb in range(n_micro):
            idx = order[mb * opt.batch_size:(mb + 1) * opt.batch_size]
            imgs, sigmas = curriculum_batch(data.images[idx], cfg, epoch, rng)
            loss, info = det.loss(imgs, data.labels[idx], epoch=epoch, sigmas=sigmas)
            if not np.isfinite(info["total"]):
                raise NumericError(f"non-finite loss at epoch {epoch}: {info}")
            (loss * (1.0 / opt.grad_accum)).backward()
            pending += 1
            for k, v in info.items():
                sums[k] = sums.get(k, 0.0) + v
            count += 1
            if pending == opt.grad_accum or mb == n_micro - 1:
                lr = opt.lr
                if opt.cosine:
                    lr = 0.5 * opt.lr * (1.0 + np.cos(np.pi * steps / max(1, total_steps)))
                nn.adam_step(store, lr, weight_decay=opt.weight_decay)
                nn.ema_update(store, opt.ema_tau)
                store.zero_grad()
                pending = 0
                steps += 1
                if max_steps is not None and steps >= max_steps:
                    break
        row = {
            "epoch": epoch,
            "L_main": sums.get("main", 0.0) / count,
            "L_mil": sums.get("mil", 0.0) / count,
            "L_tv": sums.get("tv", 0.0) / count,
            "L_rca": sums.get("rca", 0.0) / count,
            "w": sums.get("w", 0.0) / count,
            "m": sums.get("m", float("nan")) / count,
            "L_total": sums.get("total", 0.0) / count,
        }
        log_rows.append(row)
        if log:
            log(f"epoch {epoch:3d}  " + "  ".join(f"{k}={row[k]:.4f}" for k in LOSS_LOG_HEADER[1:]))
        if max_steps is not None and steps >= max_steps:
            break
    if frozen_checksum(store) != checksum:
        raise RuntimeError("frozen backbone parameters changed during training")
    report.epochs = log_rows
    report.steps = steps
    report.seconds = time.perf_counter() - t0
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        write_loss_log(os.path.join(out_dir, "loss_log.csv"), log_rows)
        save(os.path.join(out_dir, "model.ckpt"), det)
    return det, report


def write_loss_log(path, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=LOSS_LOG_HEADER)
        wr.writeheader()
        for row in rows:
            wr.writerow({k: f"{row[k]:.8g}" if k != "epoch" else row[k] for k in LOSS_LOG_HEADER})


# ------------------------------------------------------------ checkpoints

def save(path, det):
    nn.save_checkpoint(path, det.store, config_mod.to_text(det.cfg))


def load(path, expected=None):
    """Rebuild a Detector from a checkpoint; ``expected`` must match its model sections."""
    store, text = nn.load_checkpoint(path)
    cfg = config_mod.from_text(text)
    if expected is not None and config_mod.model_signature(expected) != config_mod.model_signature(cfg):
        raise CheckpointError(f"{path}: checkpoint model configuration differs from the requested one")
    det = Detector(cfg, store=store)
    fresh = Detector(cfg).store
    want = {p.name: (p.shape, p.trainable) for p in fresh}
    have = {p.name: (p.shape, p.trainable) for p in store}
    if want != have:
        raise CheckpointError(f"{path}: parameter layout does not match its configuration")
    return det


# ------------------------------------------------------------ evaluation

def eval_store(det, use_ema=True):
    if use_ema and det.store.ema:
        return det.store.ema_view()
    return det.store


def score_dataset(det, dataset, use_ema=True, images=None):
    images = dataset.images if images is None else images
    s = det.score(images, store=eval_store(det, use_ema))
    return metrics.ScoreSet(s, dataset.labels, dataset.types, list(dataset.ids))


def evaluate(det, dataset, use_ema=True, out_dir=None):
    """Score with the inference path; returns ``(ScoreSet, summary)``."""
    scores = score_dataset(det, dataset, use_ema)
    summary = metrics.summarize(scores)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        metrics.write_scores(os.path.join(out_dir, "scores.tsv"), scores)
        metrics.det_export(scores, os.path.join(out_dir, "det.csv"))
    return scores, summary


def format_summary(summary):
    lines = [f"pooled D-EER {summary['pooled_eer']:.4f}", f"D-EER over types {summary['eer_ci']}"]
    for tag, v in summary["per_type"].items():
        bs = "  ".join(f"BSCER@{t:g}={b:.4f}" for t, b in v["bscer"].items())
        lines.append(f"  {tag:<10} D-EER {v['eer']:.4f}  {bs}")
    for t, ci in summary["bscer_ci"].items():
        lines.append(f"BSCER@MACER={t:g} over types {ci}")
    return "\n".join(lines)


def robustness_sweep(det, dataset, blur_sigmas=degrade.DEFAULT_BLUR_SIGMAS, snrs_db=degrade.DEFAULT_SNRS_DB,
                     jpeg_qualities=degrade.DEFAULT_JPEG_QUALITIES, use_ema=True, seed=0, out_path=None):
    """One row per condition (clean first): label, mean EER over types, CI, pooled EER."""
    conds = degrade.sweep_conditions(blur_sigmas, snrs_db, jpeg_qualities)
    rows = []
    for ci, spec in enumerate(conds):
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7, ci]))
        images = np.stack([degrade.apply(spec, img, rng) for img in dataset.images])
        scores = score_dataset(det, dataset, use_ema, images=images)
        summ = metrics.summarize(scores)
        rows.append({
            "condition": spec.label, "kind": spec.kind,
            "value": {"blur": spec.blur_sigma, "noise": spec.snr_db, "jpeg": spec.jpeg_quality}.get(spec.kind, 0.0),
            "eer_mean": summ["eer_ci"].mean, "ci_low": summ["eer_ci"].low, "ci_high": summ["eer_ci"].high,
            "pooled_eer": summ["pooled_eer"], "scores": scores.scores,
        })
    if out_path:
        with open(out_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["condition", "eer_mean", "ci_low", "ci_high", "pooled_eer"])
            for r in rows:
                wr.writerow([r["condition"], f"{r['eer_mean']:.6f}", f"{r['ci_low']:.6f}",
                             f"{r['ci_high']:.6f}", f"{r['pooled_eer']:.6f}"])
    return rows


# ----------------------------------------------------------------- bench

def _summ(ts):
    ts = np.asarray(ts)
    return {"mean_ms": float(ts.mean() * 1e3), "median_ms": float(np.median(ts) * 1e3)}


def bench_latency(det, n_warmup=30, n_timed=300, image=None, use_ema=True):
    """Batch-size-1 wall time split into residual pre-processing and model inference."""
    cfg = det.cfg
    if image is None:
        image = synth.gen_bona_fide(cfg.synth, 0).image
    store = eval_store(det, use_ema)
    res_t, model_t = [], []
    with nn.no_grad():
        for i in range(n_warmup + n_timed):
            t0 = time.perf_counter()
            desc = det.descriptors(image[None], [residual.EVAL_SIGMA])
            t1 = time.perf_counter()
            det.forward(image[None], training=False, store=store, descriptors=desc)
            t2 = time.perf_counter()
            if i >= n_warmup:
                res_t.append(t1 - t0)
                model_t.append(t2 - t1)
    total = np.asarray(res_t) + np.asarray(model_t)
    out = {"residual": _summ(res_t), "model": _summ(model_t), "total": _summ(total)}
    out["residual_share"] = out["residual"]["median_ms"] / out["total"]["median_ms"]
    return out


def residual_scaling(sizes=(56, 112), n_timed=200, p=14, seed=0):
    """Median residual-path time per image side length."""
    rng = np.random.default_rng(seed)
    out = {}
    for s in sizes:
        img = rng.random((s, s, 3))
        for _ in range(20):
            residual.describe(img, p)
        ts = []
        for _ in range(n_timed):
            t0 = time.perf_counter()
            residual.describe(img, p)
            ts.append(time.perf_counter() - t0)
        out[s] = statistics.median(ts)
    return out


# -------------------------------------------------------------- ablation

ABLATION_TOGGLES = ("full", "no_residual", "q_only", "v_only", "rca_off", "fusion_only",
                    "no_adapters", "no_film", "no_gate", "k0", "k2", "k3", "k6", "k12")


def apply_toggles(base, toggles):
    """Copy of ``base`` with the named ablation toggles applied."""
    cfg = config_mod.from_text(config_mod.to_text(base))
    toggles = set(toggles) - {"full"}
    unknown = toggles - set(ABLATION_TOGGLES)
    if unknown:
        raise ConfigurationError(f"unknown ablation toggles {sorted(unknown)}")
    ks = [t for t in toggles if t.startswith("k")]
    no_adapt = {"no_adapters", "fusion_only"} & toggles
    if len(ks) > 1 or ({"q_only", "v_only"} <= toggles):
        raise ConfigurationError(f"contradictory toggles {sorted(toggles)}")
    if no_adapt and (({"q_only", "v_only", "no_gate"} & toggles) or [k for k in ks if k != "k0"]):
        raise ConfigurationError(f"contradictory toggles {sorted(toggles)}")
    if "no_residual" in toggles and ({"fusion_only", "no_film"} & toggles):
        raise ConfigurationError(f"contradictory toggles {sorted(toggles)}")
    for k in ks:
        cfg.lora.k = int(k[1:])
    if no_adapt:
        cfg.lora.k = 0
    if "q_only" in toggles:
        cfg.lora.projections = "q"
    if "v_only" in toggles:
        cfg.lora.projections = "v"
    if "no_gate" in toggles:
        cfg.lora.gate = False
    if "rca_off" in toggles:
        cfg.loss.rca = False
    if "no_film" in toggles:
        cfg.fusion.film = False
        cfg.loss.rca = False
    if "no_residual" in toggles:
        cfg.fusion.residual = False
        cfg.fusion.film = False
        cfg.loss.rca = False
    return cfg.validate()


def ablate(base, toggle_sets, seeds=(0,), train_set=None, test_set=None, log=None):
    """Train and evaluate every toggle set under each seed; one row per (toggles, seed)."""
    rows = []
    for toggles in toggle_sets:
        if isinstance(toggles, str):
            toggles = (toggles,)
        for seed in seeds:
            cfg = apply_toggles(base, toggles)
            cfg.seed = seed
            tr = train_set if train_set is not None else load_split(cfg, "train")
            te = test_set if test_set is not None else load_split(cfg, "test")
            det, rep = train(cfg, tr)
            _, summ = evaluate(det, te, cfg.optim.eval_ema)
            row = {"toggles": "+".join(toggles), "seed": seed, "eer": summ["pooled_eer"],
                   "eer_types": summ["eer_ci"].mean, "trainable": rep.census["trainable"],
                   "seconds": rep.seconds}
            for t, ci in summ["bscer_ci"].items():
                row[f"bscer@{t:g}"] = ci.mean
            rows.append(row)
            if log:
                log(f"{row['toggles']:<14} seed {seed}: D-EER {row['eer']:.4f}  ({rep.seconds:.1f}s)")
    return rows


def write_rows(path, rows, keys=None):
    keys = keys or [k for k in rows[0] if not isinstance(rows[0][k], np.ndarray)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(keys)
        for r in rows:
            wr.writerow([f"{r[k]:.6g}" if isinstance(r[k], float) else r[k] for k in keys])

