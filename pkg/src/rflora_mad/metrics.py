"""MACER/BSCER error rates, D-EER, BSCER at fixed MACER, DET curves and CIs.

Scores are oriented so that higher means more morph-like and an image is
called a morph when ``score >= threshold``.
"""
import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientDataError, InvalidInputError, InvalidParameterError

MACER_TARGETS = (0.01, 0.05, 0.10)


@dataclass
class ScoreSet:
    scores: np.ndarray
    labels: np.ndarray  # 0 bona fide, 1 morph
    types: np.ndarray = None  # morph-type tag per record ("" for bona fide)
    ids: list = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        n = len(self.scores)
        if len(self.labels) != n:
            raise InvalidInputError("scores and labels differ in length")
        if not np.all(np.isfinite(self.scores)):
            raise InvalidInputError("scores must be finite")
        if not np.isin(self.labels, (0, 1)).all():
            raise InvalidInputError("labels must be 0 (bona fide) or 1 (morph)")
        if self.types is None:
            self.types = np.array(["" if l == 0 else "morph" for l in self.labels], dtype=object)
        self.types = np.asarray(self.types, dtype=object)
        if self.ids is None:
            self.ids = [f"img{i:06d}" for i in range(n)]

    @property
    def bona(self):
        return self.scores[self.labels == 0]

    @property
    def morph(self):
        return self.scores[self.labels == 1]

    def morph_types(self):
        return sorted({str(t) for t, l in zip(self.types, self.labels) if l == 1})

    def for_type(self, tag):
        """All bona fide records plus the morphs of one type."""
        keep = (self.labels == 0) | (self.types == tag)
        idx = np.flatnonzero(keep)
        return ScoreSet(self.scores[idx], self.labels[idx], self.types[idx], [self.ids[i] for i in idx])

    def require_both(self):
        if not (self.labels == 0).any() or not (self.labels == 1).any():
            raise InsufficientDataError("need at least one bona fide and one morph score")


def error_rates(scores: ScoreSet, threshold):
    """(MACER, BSCER) at one threshold."""
    scores.require_both()
    macer = float(np.mean(scores.morph < threshold))
    bscer = float(np.mean(scores.bona >= threshold))
    return macer, bscer


def operating_points(scores: ScoreSet):
    """Thresholds min-1, every distinct-score midpoint and max+1, ascending.

    Returns arrays ``(thresholds, macer, bscer)``; MACER rises and BSCER
    falls along the sweep.
    """
    scores.require_both()
    u = np.unique(scores.scores)
    thr = np.concatenate(([u[0] - 1.0], 0.5 * (u[:-1] + u[1:]), [u[-1] + 1.0]))
    morph = np.sort(scores.morph)
    bona = np.sort(scores.bona)
    macer = np.searchsorted(morph, thr, side="left") / len(morph)
    bscer = (len(bona) - np.searchsorted(bona, thr, side="left")) / len(bona)
    return thr, macer, bscer


def d_eer(scores: ScoreSet):
    """Equal error rate and its threshold.

    The first sweep point with MACER >= BSCER is located and the crossing is
    interpolated linearly against the previous point.
    """
    thr, macer, bscer = operating_points(scores)
    diff = bscer - macer
    i = int(np.argmax(diff <= 0))
    if diff[i] == 0 or i == 0:
        return float(macer[i]), float(thr[i])
    frac = diff[i - 1] / (diff[i - 1] - diff[i])
    eer = macer[i - 1] + frac * (macer[i] - macer[i - 1])
    t = thr[i - 1] + frac * (thr[i] - thr[i - 1])
    return float(eer), float(t)


def bscer_at_macer_detail(scores: ScoreSet, target):
    """(BSCER, unreachable_flag) at a MACER target.

    Among sweep points with MACER <= target the largest MACER (and the
    lowest BSCER there) is the lower bracket; the first point past the
    target is the upper bracket and the result is read off the segment
    joining them.
    """
    if not 0.0 <= target <= 1.0:
        raise InvalidParameterError(f"MACER target must be in [0, 1], got {target}")
    _, macer, bscer = operating_points(scores)
    ok = macer <= target + 1e-15
    m_lo = macer[ok].max()
    b_lo = bscer[ok & (macer == m_lo)].min()
    above = macer > m_lo
    if m_lo >= target or not above.any():
        value = float(b_lo)
    else:
        m_hi = macer[above].min()
        b_hi = bscer[macer == m_hi].max()
        value = float(b_lo + (target - m_lo) / (m_hi - m_lo) * (b_hi - b_lo))
    return value, value >= 1.0


def bscer_at_macer(scores: ScoreSet, target):
    value, flagged = bscer_at_macer_detail(scores, target)
    if flagged:
        warnings.warn(f"MACER target {target} not reachable with any bona fide acceptance; BSCER reported as 1",
                      RuntimeWarning, stacklevel=2)
    return value


def det_export(scores: ScoreSet, path=None):
    """Full DET staircase as (threshold, macer, bscer) rows; optionally written to CSV."""
    thr, macer, bscer = operating_points(scores)
    rows = list(zip(thr.tolist(), macer.tolist(), bscer.tolist()))
    if path is not None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["threshold", "macer", "bscer"])
            for t, m, b in rows:
                wr.writerow([repr(t), repr(m), repr(b)])
    return rows


@dataclass
class CIStat:
    mean: float
    half_width: float
    n: int
    degenerate: bool = False

    @property
    def low(self):
        return self.mean - self.half_width

    @property
    def high(self):
        return self.mean + self.half_width

    def __str__(self):
        return f"{self.mean:.4f} [{self.low:.4f}, {self.high:.4f}]"


def ci95_over_types(values):
    """Normal-approximation 95% interval over per-type values (sample std)."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise InsufficientDataError("no values to aggregate")
    if v.size == 1:
        return CIStat(float(v[0]), 0.0, 1, True)
    return CIStat(float(v.mean()), 1.96 * float(v.std(ddof=1)) / math.sqrt(v.size), int(v.size))


def summarize(scores: ScoreSet, targets=MACER_TARGETS):
    """Per-type and pooled D-EER and BSCER@MACER with CIs across morph types."""
    per_type = {}
    for tag in scores.morph_types():
        sub = scores.for_type(tag)
        eer, thr = d_eer(sub)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            bs = {t: bscer_at_macer(sub, t) for t in targets}
        per_type[tag] = {"eer": eer, "threshold": thr, "bscer": bs}
    pooled_eer, pooled_thr = d_eer(scores)
    return {
        "per_type": per_type,
        "pooled_eer": pooled_eer,
        "pooled_threshold": pooled_thr,
        "eer_ci": ci95_over_types(v["eer"] for v in per_type.values()),
        "bscer_ci": {t: ci95_over_types(v["bscer"][t] for v in per_type.values()) for t in targets},
    }


def write_scores(path, scores: ScoreSet):
    with open(path, "w") as fh:
        for ident, s, l, t in zip(scores.ids, scores.scores, scores.labels, scores.types):
            fh.write(f"{ident}\t{float(s)!r}\t{'morph' if l else 'bona_fide'}\t{t or '-'}\n")


def read_scores(path):
    ids, s, labels, types = [], [], [], []
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            ident, score, label, tag = line.rstrip("\n").split("\t")
            ids.append(ident)
            s.append(float(score))
            labels.append(1 if label in ("morph", "1") else 0)
            types.append("" if tag == "-" else tag)
    return ScoreSet(np.array(s), np.array(labels), np.array(types, dtype=object), ids)
