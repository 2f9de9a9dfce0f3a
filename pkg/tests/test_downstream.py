import json

import numpy as np
import pytest

from nervesynth import datagen as G
from nervesynth import downstream as DS
from nervesynth.errors import ConfigError, DataError
from nervesynth.metrics import class_iou


def _procedural(n, offset):
    S = [G.make_sample(c, offset + i) for c in range(3) for i in range(n)]
    return DS.ArraySet(np.stack([s.image for s in S]), np.stack([s.mask for s in S]),
                       np.array([s.class_id for s in S]))


@pytest.fixture(scope="module")
def real():
    return _procedural(6, 0)


@pytest.fixture(scope="module")
def test_set():
    return _procedural(10, 9000)


@pytest.fixture(scope="module")
def synth():
    return _procedural(6, 5000)


def _constant_set(n_per_class, rng):
    levels = np.array([0.1, 0.5, 0.9])
    labels = np.repeat(np.arange(3), n_per_class)
    imgs = levels[labels][:, None, None] + rng.normal(0, 0.01, (len(labels), 16, 16))
    return DS.ArraySet(imgs, np.zeros_like(imgs, dtype=np.uint8), labels)


def test_regime_validation(real):
    with pytest.raises(ConfigError):
        DS.Regime("D_other", real)
    with pytest.raises(ConfigError):
        DS.Regime("B_hybrid", real)
    with pytest.raises(ConfigError):
        DS.Regime("B_hybrid", real, real, hybrid_ratio=-1)


def test_hybrid_mix(real, synth):
    reg = DS.Regime("B_hybrid", real, synth, real_test=real)
    tr = reg.train_set(0)
    assert len(tr) == 2 * len(real)
    half = DS.Regime("B_hybrid", real, synth, hybrid_ratio=0.5, real_test=real).train_set(0)
    assert len(half) == len(real) + 9
    assert len(DS.Regime("C_synthetic_only", real, synth, real_test=real).train_set(0)) == len(synth)
    capped = DS.Regime("A_real_only", real, real_test=real, n_real_per_class=2).train_set(0)
    assert len(capped) == 6 and np.bincount(capped.labels).tolist() == [2, 2, 2]


def test_separable_classes(rng):
    data = _constant_set(10, rng)
    reg = DS.Regime("A_real_only", data, real_test=_constant_set(5, rng))
    _, res = DS.train_classifier(reg, 0, epochs=40)
    assert res.metric == 1.0


def test_shuffled_labels_chance(real, test_set):
    reg = DS.Regime("A_real_only", real, real_test=test_set)
    accs = [DS.train_classifier(reg, s, epochs=20, shuffle_labels=True)[1].metric for s in range(3)]
    assert np.mean(accs) == pytest.approx(1 / 3, abs=0.1)


def test_empty_training_set(real):
    empty = DS.ArraySet(np.zeros((0, 32, 32)), np.zeros((0, 32, 32)), np.zeros(0, int))
    with pytest.raises(DataError):
        DS.train_classifier(DS.Regime("A_real_only", empty, real_test=real), 0, epochs=1)


def test_all_background_iou(real):
    assert class_iou(np.zeros_like(real.masks), real.masks) == 0.0


def test_segmenter_overfits_single_image(real):
    one = real.take([0])
    _, res = DS.train_segmenter(DS.Regime("A_real_only", one, real_test=one), 0, epochs=300, batch=1, lr=1e-2)
    assert res.metric > 0.95


def test_seed_determinism(real, test_set):
    reg = DS.Regime("B_hybrid", real, real, real_test=test_set)
    a = DS.train_segmenter(reg, 3, epochs=2)[1]
    b = DS.train_segmenter(reg, 3, epochs=2)[1]
    assert a.metric == b.metric and a.test_hash == b.test_hash == test_set.digest()
    c = DS.train_classifier(reg, 3, epochs=2)[1]
    d = DS.train_classifier(reg, 3, epochs=2)[1]
    assert c.metric == d.metric


def test_models_are_small():
    rng = np.random.default_rng(0)
    assert DS.Classifier(rng).num_parameters() < 100_000
    assert DS.Segmenter(rng).num_parameters() < 100_000


def test_regimes_from_manifests(tmp_path):
    G.gen_dataset(4, 1, tmp_path / "real", test_fraction=0.5)
    G.gen_dataset(2, 2, tmp_path / "gen", test_fraction=0.0)
    man = G.load_manifest(tmp_path / "real")
    regs = [DS.Regime(k, man, None if k == "A_real_only" else G.load_manifest(tmp_path / "gen"))
            for k in DS.KINDS]
    assert len(regs[0].test_set()) == 6
    rows = DS.run_regimes(regs, [0, 1], cls_epochs=1, seg_epochs=1)
    assert [r["regime"] for r in rows] == list(DS.KINDS)
    for r in rows:
        assert len(r["accuracy"]) == 2 and 0 <= r["accuracy_mean"] <= 1 and r["miou_sd"] >= 0
    text = DS.format_rows(rows)
    assert "B_hybrid" in text and "±" in text
    DS.write_rows(rows, tmp_path / "rows.json")
    assert json.loads((tmp_path / "rows.json").read_text()) == rows
