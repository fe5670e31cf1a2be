import numpy as np
import pytest

from rflora_mad import residual, synth
from rflora_mad.config import SynthConfig
from rflora_mad.errors import InvalidInputError, InvalidParameterError

# Measured on seeds 0..99 at the defaults: bona fide mean 3.5e-6 (max 7.7e-6),
# lowest morph-type mean 5.6e-5.
TAU_B = 1e-5


@pytest.fixture
def scfg():
    return SynthConfig()


def test_bona_fide_deterministic_and_in_range(scfg):
    a = synth.gen_bona_fide(scfg, 17)
    b = synth.gen_bona_fide(scfg, 17)
    np.testing.assert_array_equal(a.image, b.image)
    assert a.image.shape == (56, 56, 3) and a.label == synth.BONA_FIDE
    assert a.image.min() >= 0.0 and a.image.max() <= 1.0
    assert not np.array_equal(a.image, synth.gen_bona_fide(scfg, 18).image)


def test_seed_changes_output(scfg):
    other = SynthConfig(seed=1)
    assert not np.array_equal(synth.gen_bona_fide(scfg, 0).image, synth.gen_bona_fide(other, 0).image)


def test_bona_fide_low_energy(scfg):
    e = [residual.residual_energy(synth.gen_bona_fide(scfg, i).image) for i in range(100)]
    assert np.mean(e) < TAU_B


@pytest.mark.parametrize("tag", synth.MORPH_TYPES)
def test_morph_energy_exceeds_sources(scfg, tag):
    wins = 0
    energies = []
    for i in range(100):
        m = synth.gen_morph(scfg, i, tag)
        assert m.label == synth.MORPH and m.morph_type == tag
        assert m.image.min() >= 0.0 and m.image.max() <= 1.0
        a, b = synth.morph_sources(scfg, i)
        e = residual.residual_energy(m.image)
        energies.append(e)
        wins += e > 0.5 * (residual.residual_energy(a) + residual.residual_energy(b))
    assert wins >= 95
    assert np.mean(energies) > TAU_B


def test_zero_strength_is_plain_average():
    cfg = SynthConfig(seam_strength=0.0)
    for i in range(20):
        m = synth.gen_morph(cfg, i, "seam").image
        a, b = synth.morph_sources(cfg, i)
        np.testing.assert_array_equal(m, 0.5 * (a + b))
        # averaging cannot raise the Laplacian energy above the larger source
        ea, eb = residual.residual_energy(a), residual.residual_energy(b)
        assert residual.residual_energy(m) <= max(ea, eb) * (1 + 1e-12)


def test_tags_give_distinct_artefacts(scfg):
    arts = [synth.artefact(scfg, 5, t) for t in synth.MORPH_TYPES]
    for i in range(3):
        for j in range(i + 1, 3):
            assert not np.allclose(arts[i], arts[j])


def test_unknown_tag(scfg):
    with pytest.raises(InvalidParameterError):
        synth.gen_morph(scfg, 0, "gan")


def test_splits_disjoint(scfg):
    tr = synth.make_split(scfg, "train", 4, 4)
    te = synth.make_split(scfg, "test", 4, 4)
    assert not set(tr.seeds) & set(te.seeds)
    for img in tr.images:
        assert not any(np.array_equal(img, other) for other in te.images)


def test_split_shape_and_type_cycle(scfg):
    ds = synth.make_split(scfg, "val", 3, 6)
    assert len(ds) == 9 and ds.labels.tolist() == [0] * 3 + [1] * 6
    assert list(ds.types[3:]) == list(synth.MORPH_TYPES) * 2
    sub = ds.subset([0, 4])
    assert sub.ids == [ds.ids[0], ds.ids[4]]


def test_split_errors(scfg):
    with pytest.raises(InvalidParameterError):
        synth.make_split(scfg, "holdout", 2, 2)
    with pytest.raises(InvalidParameterError):
        synth.make_split(scfg, "train", 0, 2)


def test_export_roundtrip(tmp_path, scfg):
    ds = synth.make_split(scfg, "test", 2, 3)
    manifest = synth.export(ds, tmp_path)
    back = synth.load_manifest(manifest)
    assert back.ids == ds.ids and back.labels.tolist() == ds.labels.tolist()
    assert list(back.types) == list(ds.types) and back.seeds == ds.seeds
    assert np.abs(back.images - ds.images).max() <= 0.5 / 255 + 1e-12
    line = open(manifest).readline().rstrip("\n").split("\t")
    assert line[1] == "bona_fide" and line[2] == "-" and line[3] == ds.seeds[0]


def test_bad_manifest(tmp_path):
    p = tmp_path / "m.tsv"
    p.write_text("a.ppm\tmaybe\n")
    with pytest.raises(InvalidInputError):
        synth.load_manifest(p)
    p.write_text("# nothing\n")
    with pytest.raises(InvalidInputError):
        synth.load_manifest(p)
