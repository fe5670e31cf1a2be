"""Deterministic synthetic bona fide / pseudo-morph images.

Every sample is a pure function of ``(SynthConfig, index)``. Randomness comes
from numpy's PCG64 seeded through ``SeedSequence([seed, stream, index])``:

==========  ======================================
stream      use
==========  ======================================
0           bona fide images
1, 2        the two morph sources
3           artefact placement (tag code appended)
==========  ======================================

Split indices are offset by ``SPLIT_OFFSETS`` so train/val/test never share
a sample.
"""
import os
from dataclasses import dataclass

import numpy as np

from . import imageio
from .config import SynthConfig
from .errors import InvalidInputError, InvalidParameterError

BONA_FIDE = 0
MORPH = 1
MORPH_TYPES = ("seam", "hf_patch", "block")
SPLIT_OFFSETS = {"train": 0, "val": 1_000_000, "test": 2_000_000}
_TAG_CODE = {t: i + 1 for i, t in enumerate(MORPH_TYPES)}


def _rng(cfg, stream, index, *extra):
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, stream, index, *extra])))


@dataclass
class LabeledSample:
    image: np.ndarray
    label: int
    morph_type: str  # "" for bona fide
    seed: tuple


def _smooth_field(cfg, rng):
    s = cfg.image_size
    yy, xx = np.mgrid[0:s, 0:s] / (s - 1.0)
    img = np.empty((s, s, 3))
    img[...] = rng.uniform(0.25, 0.75, size=3)
    # low-order shading
    c = rng.normal(0.0, 0.08, size=(5, 3))
    for k, term in enumerate((xx - 0.5, yy - 0.5, (xx - 0.5) ** 2, (yy - 0.5) ** 2, (xx - 0.5) * (yy - 0.5))):
        img += term[..., None] * c[k]
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0.0, 1.0, size=2)
        width = rng.uniform(0.12, 0.3)
        amp = rng.normal(0.0, 0.18, size=3)
        blob = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * width * width))
        img += blob[..., None] * amp
    return img


def _grain(cfg, rng):
    return rng.normal(0.0, cfg.grain, size=(cfg.image_size, cfg.image_size, 1))


def _bona_fide_image(cfg, stream, index):
    rng = _rng(cfg, stream, index)
    img = _smooth_field(cfg, rng)
    if cfg.grain > 0:
        img = img + _grain(cfg, rng)
    return np.clip(img, 0.0, 1.0)


def gen_bona_fide(cfg: SynthConfig, index):
    return LabeledSample(_bona_fide_image(cfg, 0, index), BONA_FIDE, "", (cfg.seed, 0, index))


def _window(s, rng, half):
    cy, cx = rng.uniform(half, s - half, size=2)
    yy, xx = np.mgrid[0:s, 0:s]
    r2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (half * half)
    return np.clip(1.5 - r2, 0.0, 1.0)


def artefact(cfg, index, tag):
    """Zero-mean-ish (S, S) perturbation of peak magnitude about 1 for one tag."""
    if tag not in _TAG_CODE:
        raise InvalidParameterError(f"unknown morph type {tag!r}; expected one of {MORPH_TYPES}")
    s = cfg.image_size
    rng = _rng(cfg, 3, index, _TAG_CODE[tag])
    yy, xx = np.mgrid[0:s, 0:s].astype(np.float64)
    if tag == "seam":
        theta = rng.uniform(0.0, np.pi)
        offset = rng.uniform(-0.15, 0.15) * s + s / 2.0
        dist = (xx - s / 2.0) * np.cos(theta) + (yy - s / 2.0) * np.sin(theta) + s / 2.0 - offset
        # anti-aliased step with a sub-pixel edge, limited to a band along the line
        step = np.clip(dist + 0.5, 0.0, 1.0) - 0.5
        along = (xx - s / 2.0) * -np.sin(theta) + (yy - s / 2.0) * np.cos(theta)
        band = np.clip(1.5 - np.abs(along) / (0.4 * s), 0.0, 1.0)
        return 2.0 * step * band
    if tag == "hf_patch":
        period = rng.uniform(3.0, 5.0)
        theta = rng.uniform(0.0, np.pi)
        phase = rng.uniform(0.0, 2 * np.pi)
        wave = np.sin(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period + phase)
        return wave * _window(s, rng, 8.0)
    # block: 8x8 blockwise offsets inside a region
    nb = (s + 7) // 8
    offsets = rng.uniform(-1.0, 1.0, size=(nb, nb))
    blocks = np.kron(offsets, np.ones((8, 8)))[:s, :s]
    return blocks * _window(s, rng, 14.0)


def gen_morph(cfg: SynthConfig, index, tag):
    """0.5 (A + B) plus a tag-specific artefact scaled by ``seam_strength``."""
    art = artefact(cfg, index, tag)
    a = _bona_fide_image(cfg, 1, index)
    b = _bona_fide_image(cfg, 2, index)
    img = 0.5 * (a + b)
    if cfg.seam_strength:
        img = np.clip(img + cfg.seam_strength * art[..., None], 0.0, 1.0)
    return LabeledSample(img, MORPH, tag, (cfg.seed, 1, index))


def morph_sources(cfg, index):
    return _bona_fide_image(cfg, 1, index), _bona_fide_image(cfg, 2, index)


@dataclass
class Dataset:
    images: np.ndarray  # (n, S, S, 3)
    labels: np.ndarray  # (n,) 0 = bona fide, 1 = morph
    types: np.ndarray  # (n,) str, "" for bona fide
    ids: list
    seeds: list = None  # "seed:stream:index" per sample, synthetic data only

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        idx = np.asarray(idx)
        seeds = None if self.seeds is None else [self.seeds[i] for i in idx]
        return Dataset(self.images[idx], self.labels[idx], self.types[idx], [self.ids[i] for i in idx], seeds)


def make_split(cfg: SynthConfig, split="train", n_bona=None, n_morph=None):
    """Balanced split; morph types cycle through ``cfg.morph_types``."""
    if split not in SPLIT_OFFSETS:
        raise InvalidParameterError(f"unknown split {split!r}")
    n_bona = cfg.n_bona if n_bona is None else n_bona
    n_morph = cfg.n_morph if n_morph is None else n_morph
    if n_bona < 1 or n_morph < 1:
        raise InvalidParameterError("synthetic splits need at least one sample per class")
    base = SPLIT_OFFSETS[split]
    samples, ids = [], []
    for i in range(n_bona):
        samples.append(gen_bona_fide(cfg, base + i))
        ids.append(f"{split}_bona_{i:06d}")
    for i in range(n_morph):
        tag = cfg.morph_types[i % len(cfg.morph_types)]
        samples.append(gen_morph(cfg, base + i, tag))
        ids.append(f"{split}_morph_{tag}_{i:06d}")
    return Dataset(
        images=np.stack([s.image for s in samples]),
        labels=np.array([s.label for s in samples], dtype=np.int64),
        types=np.array([s.morph_type for s in samples], dtype=object),
        ids=ids,
        seeds=[":".join(str(v) for v in s.seed) for s in samples],
    )


def export(dataset, out_dir):
    """Write PPM files plus ``manifest.tsv`` (path, label, type, seed)."""
    os.makedirs(out_dir, exist_ok=True)
    manifest = os.path.join(out_dir, "manifest.tsv")
    with open(manifest, "w") as fh:
        for i, (img, label, tag, ident) in enumerate(zip(dataset.images, dataset.labels, dataset.types, dataset.ids)):
            name = f"{ident}.ppm"
            imageio.write_ppm(os.path.join(out_dir, name), img)
            seed = "" if dataset.seeds is None else dataset.seeds[i]
            fh.write(f"{name}\t{'morph' if label else 'bona_fide'}\t{tag or '-'}\t{seed}\n")
    return manifest


_LABELS = {"bona_fide": 0, "bona": 0, "0": 0, "morph": 1, "1": 1}


def load_manifest(path):
    """Read a manifest; relative image paths resolve against its directory."""
    root = os.path.dirname(os.path.abspath(path))
    images, labels, types, ids, seeds = [], [], [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) < 2 or fields[1] not in _LABELS:
                raise InvalidInputError(f"{path}:{lineno}: expected 'path<TAB>label[<TAB>type<TAB>seed]'")
            img_path = fields[0] if os.path.isabs(fields[0]) else os.path.join(root, fields[0])
            images.append(imageio.read_ppm(img_path))
            labels.append(_LABELS[fields[1]])
            tag = fields[2] if len(fields) > 2 and fields[2] != "-" else ""
            types.append(tag)
            seeds.append(fields[3] if len(fields) > 3 else "")
            ids.append(os.path.splitext(os.path.basename(fields[0]))[0])
    if not images:
        raise InvalidInputError(f"{path}: empty manifest")
    return Dataset(np.stack(images), np.array(labels, dtype=np.int64), np.array(types, dtype=object), ids, seeds)
