import csv
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import metric_oracle as oracle
from rflora_mad import metrics
from rflora_mad.errors import InsufficientDataError, InvalidInputError
from rflora_mad.metrics import ScoreSet


def scoreset(bona, morph):
    return ScoreSet(np.r_[bona, morph], np.r_[np.zeros(len(bona)), np.ones(len(morph))])


def random_set(rng, n_max=200):
    n = int(rng.integers(2, n_max + 1))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    if rng.random() < 0.5:
        scores = rng.integers(0, 8, n) / 8.0  # ties
    else:
        scores = rng.random(n) + 0.3 * labels
    return ScoreSet(scores, labels)


def test_error_rate_examples():
    s = scoreset([0.1, 0.2], [0.8, 0.9])
    assert metrics.error_rates(s, 0.5) == (0.0, 0.0)
    assert metrics.error_rates(s, 0.1) == (0.0, 1.0)
    assert metrics.error_rates(s, 0.95) == (1.0, 0.0)


def test_missing_class_raises():
    with pytest.raises(InsufficientDataError):
        metrics.d_eer(ScoreSet([0.1, 0.2], [0, 0]))
    with pytest.raises(InsufficientDataError):
        metrics.error_rates(ScoreSet([0.1], [1]), 0.5)


def test_scoreset_validation():
    with pytest.raises(InvalidInputError):
        ScoreSet([0.1, float("nan")], [0, 1])
    with pytest.raises(InvalidInputError):
        ScoreSet([0.1, 0.2], [0, 2])


def test_eer_extremes():
    assert metrics.d_eer(scoreset([0.1, 0.2, 0.3], [0.7, 0.8]))[0] == 0.0
    vals = [0.1, 0.4, 0.4, 0.9]
    assert metrics.d_eer(scoreset(vals, vals))[0] == pytest.approx(0.5)


def test_eer_hand_set_20():
    bona = [0.05, 0.1, 0.15, 0.2, 0.3, 0.35, 0.5, 0.55, 0.62, 0.8]
    morph = [0.25, 0.4, 0.45, 0.6, 0.65, 0.7, 0.75, 0.85, 0.9, 0.95]
    s = scoreset(bona, morph)
    want = oracle.eer(s.scores.tolist(), s.labels.tolist())
    assert abs(metrics.d_eer(s)[0] - want) < 1e-9
    # by hand: at t=0.5125 MACER 0.3 BSCER 0.4, at t=0.575 MACER 0.3 BSCER 0.3
    assert metrics.d_eer(s)[0] == pytest.approx(0.3)


def test_bscer_examples():
    s = scoreset([0.1, 0.2], [0.8, 0.9])
    assert all(metrics.bscer_at_macer(s, t) == 0.0 for t in metrics.MACER_TARGETS)


def test_bscer_ten_morph_relaxation():
    bona = [0.1 + 0.04 * i for i in range(10)]
    morph = [0.05] + [0.55 + 0.04 * i for i in range(9)]
    s = scoreset(bona, morph)
    assert metrics.bscer_at_macer(s, 0.10) == 0.0
    with pytest.warns(RuntimeWarning):
        assert metrics.bscer_at_macer(s, 0.05) == 1.0
    assert metrics.bscer_at_macer_detail(s, 0.05) == (1.0, True)


def test_bscer_monotone_in_target(rng):
    for _ in range(50):
        s = random_set(rng, 60)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            v = [metrics.bscer_at_macer(s, t) for t in (0.01, 0.05, 0.10)]
        assert v[0] >= v[1] - 1e-12 and v[1] >= v[2] - 1e-12


def test_ci_examples():
    c = metrics.ci95_over_types([4, 4, 4])
    assert (c.mean, c.half_width, c.n) == (4.0, 0.0, 3)
    c = metrics.ci95_over_types([0, 10])
    assert c.mean == 5.0 and c.half_width == pytest.approx(9.80, abs=5e-3)
    assert c.half_width == pytest.approx(1.96 * np.sqrt(50) / np.sqrt(2), rel=1e-12)
    c = metrics.ci95_over_types([0.3])
    assert (c.mean, c.half_width, c.degenerate) == (0.3, 0.0, True)
    with pytest.raises(InsufficientDataError):
        metrics.ci95_over_types([])


def test_det_endpoints_and_staircase(tmp_path, rng):
    s = random_set(rng, 50)
    rows = metrics.det_export(s, tmp_path / "det.csv")
    assert rows[0][1:] == (0.0, 1.0) and rows[-1][1:] == (1.0, 0.0)
    m = np.array([r[1] for r in rows])
    b = np.array([r[2] for r in rows])
    assert np.all(np.diff(m) >= 0) and np.all(np.diff(b) <= 0)
    with open(tmp_path / "det.csv") as fh:
        read = list(csv.reader(fh))
    assert read[0] == ["threshold", "macer", "bscer"] and len(read) == len(rows) + 1


def test_det_hand_set_of_six():
    s = ScoreSet([0.2, 0.4, 0.6, 0.3, 0.7, 0.9], [0, 0, 0, 1, 1, 1])
    got = [(t, m, b) for t, m, b in metrics.det_export(s)]
    assert got == oracle.sweep(s.scores.tolist(), s.labels.tolist())


@settings(max_examples=150, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_matches_oracle(seed):
    s = random_set(np.random.default_rng(seed), 80)
    sc, lb = s.scores.tolist(), s.labels.tolist()
    assert abs(metrics.d_eer(s)[0] - oracle.eer(sc, lb)) < 1e-9
    for t in metrics.MACER_TARGETS:
        v, _ = metrics.bscer_at_macer_detail(s, t)
        assert abs(v - oracle.bscer_at(sc, lb, t)) < 1e-9


def test_monotone_transform_invariance(rng):
    for _ in range(30):
        s = random_set(rng, 100)
        t = ScoreSet(np.exp(3 * s.scores) ** 3 - 7.0, s.labels)
        assert metrics.d_eer(t)[0] == pytest.approx(metrics.d_eer(s)[0], abs=1e-12)
        for q in metrics.MACER_TARGETS:
            assert metrics.bscer_at_macer_detail(t, q) == metrics.bscer_at_macer_detail(s, q)


def test_eer_in_unit_interval(rng):
    for _ in range(100):
        e, _ = metrics.d_eer(random_set(rng, 40))
        assert 0.0 <= e <= 1.0


def test_summarize_per_type():
    types = np.array(["", "", "", "a", "a", "b", "b", "c"], dtype=object)
    s = ScoreSet([0.1, 0.2, 0.3, 0.9, 0.8, 0.25, 0.7, 0.6], [0, 0, 0, 1, 1, 1, 1, 1], types)
    out = metrics.summarize(s)
    assert sorted(out["per_type"]) == ["a", "b", "c"]
    assert out["eer_ci"].n == 3
    assert out["per_type"]["a"]["eer"] == 0.0


def test_score_file_roundtrip(tmp_path, rng):
    s = ScoreSet(rng.random(6), [0, 1, 0, 1, 1, 0], np.array(["", "x", "", "y", "x", ""], dtype=object))
    metrics.write_scores(tmp_path / "s.tsv", s)
    back = metrics.read_scores(tmp_path / "s.tsv")
    np.testing.assert_array_equal(back.scores, s.scores)
    assert back.ids == s.ids and list(back.types) == list(s.types)
