"""Metric tests against pairwise and per-threshold scan oracles."""

import numpy as np
import pytest

from desatnet.metrics import (MetricError, PredictionSet, alarms_per_10h,
                              pr_auc, report, rmse, roc_auc,
                              sensitivity_precision,
                              threshold_for_sensitivity)
from oracles import alarms_oracle, ap_oracle, roc_oracle, threshold_oracle

RNG = np.random.default_rng


def make_ps(scores, labels, masks=None):
    scores = np.asarray(scores, dtype=float)
    n = scores.shape[0]
    if masks is None:
        masks = np.ones(n)
    return PredictionSet(scores=scores, labels=np.asarray(labels),
                         masks=np.asarray(masks),
                         surgery_ids=np.array(["s0"] * n),
                         minutes=np.arange(n))


def random_ps(rng, n, prevalence=0.1, tie_fraction=0.0):
    labels = (rng.uniform(size=n) < prevalence).astype(int)
    if labels.sum() == 0:
        labels[0] = 1
    if labels.sum() == n:
        labels[-1] = 0
    scores = rng.uniform(size=n) + 0.3 * labels
    if tie_fraction:
        scores = np.round(scores / tie_fraction) * tie_fraction
    return make_ps(scores, labels)


def test_prediction_set_validation():
    with pytest.raises(MetricError):
        make_ps([0.1, 0.2], [0, 2])
    with pytest.raises(MetricError):
        PredictionSet(scores=np.zeros(3), labels=np.zeros(2), masks=np.ones(3),
                      surgery_ids=np.array(["a"] * 3), minutes=np.arange(3))
    ps = make_ps([0.5, 0.2, 0.9], [1, 0, 1], [1, 1, 0])
    s, y = ps.labeled()
    assert s.shape == (2,) and y.tolist() == [1, 0]


def test_roc_auc_known_values():
    assert roc_auc(make_ps([0.9, 0.1], [1, 0])) == 1.0
    assert roc_auc(make_ps([0.1, 0.9], [1, 0])) == 0.0
    # all scores tied: chance level from the tie correction
    assert roc_auc(make_ps([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0])) == 0.5


def test_roc_auc_matches_pairwise_oracle():
    rng = RNG(0)
    for trial in range(20):
        ps = random_ps(rng, int(rng.integers(10, 120)),
                       tie_fraction=0.2 if trial % 2 else 0.0)
        s, y = ps.labeled()
        assert np.isclose(roc_auc(ps), roc_oracle(s, y), atol=1e-12), trial


def test_roc_auc_single_class_raises():
    with pytest.raises(MetricError):
        roc_auc(make_ps([0.1, 0.2], [1, 1]))
    with pytest.raises(MetricError):
        roc_auc(make_ps([0.1, 0.2], [0, 0]))
    # masked-out positives do not count
    with pytest.raises(MetricError):
        roc_auc(make_ps([0.5, 0.6, 0.7], [1, 0, 0], [0, 1, 1]))


def test_pr_auc_hand_example():
    # ranked 0.9 (pos), 0.8 (neg), 0.1 (pos):
    # AP = 0.5 * 1 + 0.5 * (2/3) = 5/6
    got = pr_auc(make_ps([0.9, 0.8, 0.1], [1, 0, 1]))
    assert np.isclose(got, 5.0 / 6.0, atol=1e-12)


def test_pr_auc_perfect_and_ties():
    assert pr_auc(make_ps([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0])) == 1.0
    # all scores equal: single threshold group, AP = prevalence
    ps = make_ps([0.5] * 10, [1, 0, 0, 0, 1, 0, 0, 0, 0, 0])
    assert np.isclose(pr_auc(ps), 0.2, atol=1e-12)


def test_pr_auc_matches_scan_oracle():
    rng = RNG(1)
    for trial in range(20):
        ps = random_ps(rng, int(rng.integers(8, 100)),
                       prevalence=0.2, tie_fraction=0.25 if trial % 2 else 0.0)
        s, y = ps.labeled()
        assert np.isclose(pr_auc(ps), ap_oracle(s, y), atol=1e-12), trial


def test_pr_auc_random_scores_near_prevalence():
    rng = RNG(2)
    vals = []
    for t in range(30):
        labels = (rng.uniform(size=2000) < 0.05).astype(int)
        labels[0] = 1
        scores = rng.uniform(size=2000)
        vals.append(pr_auc(make_ps(scores, labels)))
    prev = 0.05
    assert abs(np.mean(vals) - prev) < 0.01


def test_threshold_for_sensitivity_examples():
    ps = make_ps([0.9, 0.7, 0.5, 0.3, 0.2, 0.1],
                 [1, 0, 1, 1, 0, 1])
    # 4 positives at scores .9 .5 .3 .1; ceil(0.8*4)=4 -> 4th largest = .1
    assert threshold_for_sensitivity(ps, 0.8) == pytest.approx(0.1)
    # ceil(0.5*4)=2 -> 0.5
    assert threshold_for_sensitivity(ps, 0.5) == pytest.approx(0.5)
    assert threshold_for_sensitivity(ps, 1.0) == pytest.approx(0.1)
    with pytest.raises(MetricError):
        threshold_for_sensitivity(ps, 0.0)
    with pytest.raises(MetricError):
        threshold_for_sensitivity(make_ps([0.5], [0]), 0.8)


def test_threshold_achieves_target_and_is_maximal():
    rng = RNG(3)
    for trial in range(25):
        ps = random_ps(rng, int(rng.integers(10, 200)), prevalence=0.3,
                       tie_fraction=0.1 if trial % 3 == 0 else 0.0)
        s, y = ps.labeled()
        for target in (0.5, 0.8, 0.95):
            th = threshold_for_sensitivity(ps, target)
            sens, _ = sensitivity_precision(ps, th)
            assert sens >= target
            assert th == threshold_oracle(s, y, target)
            # any strictly larger threshold drops below target: bumping
            # past the next representable score must lose sensitivity
            bumped = np.nextafter(th, np.inf)
            sens_up, _ = sensitivity_precision(ps, bumped)
            if sens_up >= target:
                # only allowed if no positive sits exactly at th
                assert not np.any((s == th) & (y == 1))


def test_alarms_per_10h_arithmetic():
    ps = make_ps([0.9, 0.2, 0.8, 0.6], [1, 0, 0, 1])
    # 3 crossings at 0.5 over 4 minutes -> 3 * 600 / 4
    assert alarms_per_10h(ps, 0.5) == pytest.approx(450.0)
    assert alarms_per_10h(ps, 0.95) == 0.0
    assert alarms_per_10h(ps, 0.5) == alarms_oracle(ps.scores, 0.5, 4)


def test_alarms_count_unlabeled_minutes_by_default():
    ps = make_ps([0.9, 0.9, 0.1, 0.9], [1, 0, 0, 0], [1, 0, 1, 1])
    # all four minutes count: 3 alarms / 4 min
    assert alarms_per_10h(ps, 0.5) == pytest.approx(3 * 600.0 / 4)
    # labeled_only drops the masked minute: 2 alarms / 3 min
    assert alarms_per_10h(ps, 0.5, labeled_only=True) == pytest.approx(2 * 600.0 / 3)


def test_alarms_match_scan_oracle():
    rng = RNG(4)
    for _ in range(20):
        ps = random_ps(rng, int(rng.integers(5, 300)))
        th = float(rng.uniform(0.2, 1.0))
        assert alarms_per_10h(ps, th) == alarms_oracle(ps.scores, th, ps.n_minutes)


def test_sensitivity_precision_values():
    ps = make_ps([0.9, 0.8, 0.3, 0.1], [1, 0, 1, 0])
    sens, prec = sensitivity_precision(ps, 0.5)
    assert sens == 0.5 and prec == 0.5
    sens, prec = sensitivity_precision(ps, 0.05)
    assert sens == 1.0 and prec == 0.5
    # nothing fires: precision defined as zero
    sens, prec = sensitivity_precision(ps, 2.0)
    assert sens == 0.0 and prec == 0.0


def test_monotone_transform_invariance():
    rng = RNG(5)
    ps = random_ps(rng, 150, prevalence=0.2)
    squashed = make_ps(1.0 / (1.0 + np.exp(-5.0 * ps.scores)), ps.labels)
    assert np.isclose(roc_auc(ps), roc_auc(squashed), atol=1e-12)
    assert np.isclose(pr_auc(ps), pr_auc(squashed), atol=1e-12)


def test_rmse():
    assert rmse([1.0, 2.0], [1.0, 4.0]) == pytest.approx(np.sqrt(2.0))
    assert rmse(np.zeros((2, 3)), np.zeros((2, 3))) == 0.0
    with pytest.raises(MetricError):
        rmse([1.0], [1.0, 2.0])
    with pytest.raises(MetricError):
        rmse([], [])


def test_report_schema_and_consistency():
    rng = RNG(6)
    n = 400
    labels = (rng.uniform(size=n) < 0.08).astype(int)
    labels[:4] = 1
    masks = (rng.uniform(size=n) < 0.9).astype(int)
    scores = rng.uniform(size=n) + 0.4 * labels
    ps = PredictionSet(scores=scores, labels=labels * masks, masks=masks,
                       surgery_ids=np.repeat([f"s{i}" for i in range(8)], n // 8),
                       minutes=np.tile(np.arange(n // 8), 8))
    rep = report(ps, "general")
    keys = {"outcome", "roc_auc", "pr_auc", "threshold_at_0.8_sens",
            "sens_target", "sensitivity_at_threshold", "precision_at_threshold",
            "alarms_per_10h", "n_surgeries", "n_samples", "n_minutes", "prevalence"}
    assert set(rep) == keys
    assert rep["outcome"] == "general"
    assert rep["n_surgeries"] == 8
    assert rep["n_minutes"] == n
    assert rep["n_samples"] == int(masks.sum())
    assert rep["sensitivity_at_threshold"] >= 0.8
    assert 0.0 < rep["prevalence"] < 0.2
    assert rep["roc_auc"] == roc_auc(ps)
    assert rep["alarms_per_10h"] == alarms_per_10h(ps, rep["threshold_at_0.8_sens"])
