import logging
import math

import numpy as np
import pytest

from aafm import evaluation, fm, stats
from aafm.dataset import FeatureSchema, SampleTable
from aafm.errors import UndefinedMetricError

from .oracles import auc_pairs
from .test_fm import random_model


def test_auc_matches_pairwise_with_ties():
    rng = np.random.default_rng(0)
    for _ in range(300):
        n = int(rng.integers(2, 60))
        labels = rng.integers(0, 2, n)
        if labels.min() == labels.max():
            labels[0] = 1 - labels[0]
        scores = rng.integers(0, 5, n) / 4.0
        assert math.isclose(evaluation.auc(scores, labels), auc_pairs(scores, labels), rel_tol=1e-12)


def test_auc_hand_examples():
    assert evaluation.auc([0.9, 0.8, 0.3, 0.1], [1, 1, 0, 0]) == 1.0
    assert evaluation.auc([0.1, 0.2, 0.8, 0.9], [1, 1, 0, 0]) == 0.0
    assert evaluation.auc([0.5] * 4, [1, 0, 1, 0]) == 0.5


def test_auc_invariant_to_monotone_transform():
    rng = np.random.default_rng(1)
    s = rng.random(100)
    y = rng.integers(0, 2, 100)
    assert evaluation.auc(s, y) == evaluation.auc(np.exp(3 * s) - 7, y)


def test_auc_single_class_raises():
    with pytest.raises(UndefinedMetricError):
        evaluation.auc([0.1, 0.2], [1, 1])


def test_logloss_exact_values():
    assert evaluation.logloss(np.full(4715, 0.5), np.r_[np.ones(943), np.zeros(3772)]) == math.log(2)
    assert math.isclose(evaluation.logloss([0.9, 0.2], [1, 0]), (-math.log(0.9) - math.log(0.8)) / 2, rel_tol=1e-15)


@pytest.mark.parametrize("n, sizes", [(12, [2] * 6), (13, [3, 2, 2, 2, 2, 2]), (17, [3, 3, 3, 3, 3, 2])])
def test_bucket_sizes(n, sizes):
    b = evaluation.bucketize_keys(np.arange(n, dtype=float))
    assert [len(x) for x in b.buckets] == sizes


def test_buckets_descending_with_index_tiebreak():
    keys = np.array([1.0, 3.0, 3.0, 2.0, 0.0, 3.0, 2.0, 1.0, 5.0, 0.5])
    b = evaluation.bucketize_keys(keys)
    np.testing.assert_array_equal(b.order, [8, 1, 2, 5, 3, 6, 0, 7, 9, 4])
    np.testing.assert_array_equal(b.top, [8])
    np.testing.assert_array_equal(b.bottom, [4])


def test_fewer_than_ten_refused():
    with pytest.raises(UndefinedMetricError):
        evaluation.bucketize_keys(np.arange(9.0))


def test_population_std_example():
    # six buckets of 11 with prescribed AUCs
    scores, labels, groups = [], [], []
    targets = [0.9, 0.9, 0.9, 0.9, 0.9, 0.8]
    for g, t in enumerate(targets):
        # 1 positive vs 10 negatives: AUC = fraction of negatives below the positive
        below = int(round(t * 10))
        neg = np.r_[np.zeros(below), np.full(10 - below, 2.0)]
        scores += [1.0, *neg]
        labels += [1] + [0] * 10
        groups.append(np.arange(11) + 11 * g)
    buckets = evaluation.Buckets(np.arange(66), groups, groups[0], groups[-1])
    res = evaluation.fairness_metrics(np.array(scores), np.array(labels), buckets)
    np.testing.assert_allclose(res.bucket_auc, targets)
    assert math.isclose(res.std, float(np.std(targets)), rel_tol=1e-12)
    assert round(res.std, 4) == 0.0373
    assert math.isclose(res.efgd, 0.1, rel_tol=1e-12)


def test_homogeneous_buckets_have_zero_gaps():
    rng = np.random.default_rng(3)
    s, y = rng.random(20), np.r_[np.ones(5), np.zeros(15)]
    scores, labels = np.tile(s, 6), np.tile(y, 6)
    groups = [np.arange(20) + 20 * g for g in range(6)]
    res = evaluation.fairness_metrics(scores, labels, evaluation.Buckets(np.arange(120), groups, groups[0], groups[-1]))
    assert res.std == 0.0 and res.efgd == 0.0


def test_single_class_bucket_dropped(caplog):
    labels = np.r_[np.zeros(10), np.tile([1, 0], 25)]
    scores = np.linspace(0, 1, 60)
    b = evaluation.bucketize_keys(-np.arange(60.0))
    with caplog.at_level(logging.WARNING):
        res = evaluation.fairness_metrics(scores, labels, b)
    assert res.dropped == [1]
    assert math.isnan(res.bucket_auc[0])
    assert math.isclose(res.std, float(np.std(res.bucket_auc[1:])))
    assert "left out of STD" in caplog.text


def test_bucket_partition_fuzz():
    rng = np.random.default_rng(4)
    for _ in range(500):
        n = int(rng.integers(10, 300))
        keys = rng.integers(0, 6, n).astype(float)
        b = evaluation.bucketize_keys(keys)
        flat = np.concatenate(b.buckets)
        np.testing.assert_array_equal(np.sort(flat), np.arange(n))
        sizes = [len(x) for x in b.buckets]
        assert max(sizes) - min(sizes) <= 1 and sizes == sorted(sizes, reverse=True)
        assert len(b.top) == len(b.bottom) == n // 10
        assert (np.diff(keys[b.order]) <= 0).all()
        perm = rng.permutation(n)
        again = evaluation.bucketize_keys(keys[perm])
        np.testing.assert_array_equal(keys[perm][again.order], keys[b.order])


def _probe_setup(seed=5):
    rng = np.random.default_rng(seed)
    _, p = random_model(rng, n=3, d=4, card=6, scale=0.3)
    values = rng.integers(0, 6, size=(200, 3))
    scores = fm.predict(p, values)
    labels = (rng.random(200) < scores).astype(np.int8)
    return p, SampleTable(values, labels)


def test_probe_level_zero_is_zero():
    p, test = _probe_setup()
    assert evaluation.robustness_probe(p, test, [0.0])[0.0] == 0.0


def test_table_perturbation_has_requested_row_norms():
    p, test = _probe_setup()
    noisy = evaluation.perturb_tables(p, test, 0.7, "adversarial")
    touched = [np.unique(test.values[:, d]) for d in range(3)]
    for d in range(3):
        diff = np.linalg.norm(noisy.embeddings[d] - p.embeddings[d], axis=1)
        np.testing.assert_allclose(diff[touched[d]], 0.7, rtol=1e-12)
    noisy = evaluation.perturb_tables(p, test, 0.7, "random", np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(noisy.embeddings[0] - p.embeddings[0], axis=1), 0.7, rtol=1e-12)


def test_adversarial_table_noise_raises_test_loss():
    p, test = _probe_setup()
    base = fm.loss(fm.forward(p, test.values), test.labels)
    for level in (0.01, 0.1, 0.5):
        noisy = evaluation.perturb_tables(p, test, level, "adversarial")
        assert fm.loss(fm.forward(noisy, test.values), test.labels) > base


def test_probe_is_seeded():
    p, test = _probe_setup()
    a = evaluation.robustness_probe(p, test, [0.5, 1.0], trials=3, rng_seed=1, mode="random")
    b = evaluation.robustness_probe(p, test, [0.5, 1.0], trials=3, rng_seed=1, mode="random")
    assert a == b
    with pytest.raises(ValueError):
        evaluation.robustness_probe(p, test, [0.5], mode="gaussian")


def test_sample_mode_is_the_stronger_attack():
    p, test = _probe_setup()
    table = evaluation.robustness_probe(p, test, [0.3], mode="adversarial")[0.3]
    sample = evaluation.robustness_probe(p, test, [0.3], mode="sample-adversarial")[0.3]
    assert sample >= table > 0


def test_report_fields_are_stable():
    p, test = _probe_setup()
    st = stats.compute_stats(test, FeatureSchema((("a", 6), ("b", 6), ("c", 6)), 0, 1))
    rep = evaluation.evaluate(p, test, st, probe_levels=[0.5, 1.0])
    keys = [k for k, _ in rep.fields()]
    assert keys[:8] == ["n_samples", "n_positive", "auc", "logloss", "efgd", "std", "top_decile_auc",
                        "bottom_decile_auc"]
    assert keys[-2:] == ["drop_pct@0.5", "drop_pct@1"]
    assert rep.to_tsv(["seed=0"]).startswith("# seed=0\nkey\tvalue\n")

