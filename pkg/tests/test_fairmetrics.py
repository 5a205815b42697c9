import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairaug import fairmetrics
from fairaug._common import canonical_json
from fairaug.errors import (
    BootstrapFailure,
    JoinFailure,
    SingleClass,
    TooFewGroups,
    UndefinedRateWarning,
    ValidationError,
)
from fairaug.fairmetrics import (
    PredictionSet,
    auroc,
    bacc,
    bootstrap_ci,
    confusion,
    eod_gap,
    fairness_report,
    group_rates,
    read_predictions,
    youden_threshold,
)
from fairaug.manifest import DatasetManifest
from fairaug.phantom import fuzz_records

from helpers import rec


def brute_auroc(scores, labels):
    """Oracle: compare every positive/negative pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def sex_predictions(f_hits, f_pos, m_hits, m_pos, n_neg=5):
    """Positives per sex with a given number scored above 0.5, plus some negatives."""
    recs, ids, scores, labels = [], [], [], []
    for sex, hits, n_pos in (("F", f_hits, f_pos), ("M", m_hits, m_pos)):
        for i in range(n_pos + n_neg):
            sid = f"{sex}{i:03d}"
            recs.append(rec(sid, sex=sex))
            ids.append(sid)
            positive = i < n_pos
            labels.append(int(positive))
            scores.append(0.9 if positive and i < hits else 0.1)
    p = PredictionSet(tuple(ids), np.array(scores), np.array(labels))
    return p, DatasetManifest(tuple(recs))


# -- AUROC --------------------------------------------------------------------------

def test_auroc_small_example():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auroc_matches_pair_count_on_500_instances():
    rng = np.random.default_rng(0)
    for _ in range(500):
        n = int(rng.integers(2, 40))
        y = rng.integers(0, 2, size=n)
        y[0], y[1] = 0, 1
        s = np.round(rng.random(n), 1)  # coarse rounding forces ties
        assert auroc(s, y) == pytest.approx(brute_auroc(s, y), abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31))
def test_auroc_invariant_to_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    s = rng.random(50)
    y = np.r_[0, 1, rng.integers(0, 2, size=48)]
    assert auroc(s, y) == auroc(np.exp(3 * s) - 7, y)


def test_all_ties_give_one_half():
    assert auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auroc_needs_both_classes():
    with pytest.raises(SingleClass):
        auroc([0.1, 0.2], [1, 1])


# -- BACC -----------------------------------------------------------------------------

def test_bacc_always_negative_at_one_percent_prevalence():
    y = np.r_[np.ones(10), np.zeros(990)]
    assert bacc(np.zeros(1000), y) == 0.5


def test_bacc_constructed_case():
    # 10 positives with 6 hits, 10 negatives with 8 correct rejections
    s = np.r_[[0.9] * 6, [0.1] * 4, [0.1] * 8, [0.7] * 2]
    y = np.r_[np.ones(10), np.zeros(10)]
    assert bacc(s, y) == pytest.approx(0.7)


def test_threshold_is_inclusive():
    c = confusion([0.5, 0.49], [1, 1], 0.5)
    assert (c.tp, c.fn) == (1, 1)


def test_random_predictor_is_near_one_half():
    rng = np.random.default_rng(4)
    y = rng.integers(0, 2, size=20_000)
    assert abs(bacc(rng.random(20_000), y) - 0.5) < 0.03


def test_youden_on_separable_scores():
    s = np.array([0.1, 0.2, 0.3, 0.6, 0.7, 0.8])
    y = np.array([0, 0, 0, 1, 1, 1])
    assert youden_threshold(s, y) == 0.6


# -- groups / EOD -----------------------------------------------------------------------

def test_group_rates_and_eod():
    p, m = sex_predictions(9, 10, 6, 10)
    rates = group_rates(p.join(m), "sex")
    assert rates.tprs() == {"F": 0.9, "M": 0.6}
    assert eod_gap(rates) == 0.3  # exact, not 0.30000000000000004


def test_eod_is_order_free():
    assert eod_gap({"a": 0.6, "b": 0.9}) == eod_gap({"b": 0.9, "a": 0.6})


def test_eod_needs_two_defined_groups():
    with pytest.raises(TooFewGroups):
        eod_gap({"a": 0.5, "b": None})


def test_group_without_positives_warns():
    p, m = sex_predictions(3, 4, 0, 0)
    with pytest.warns(UndefinedRateWarning):
        rates = group_rates(p.join(m), "sex")
    assert rates.undefined() == ["M"]


def test_prediction_validation(tmp_path):
    with pytest.raises(ValidationError):
        PredictionSet(("a",), np.array([1.5]), np.array([1]))
    with pytest.raises(ValidationError):
        PredictionSet(("a",), np.array([0.5]), np.array([2]))
    path = tmp_path / "p.csv"
    path.write_text("subject_id,score,label\na,0.25,1\nb,0.75,0\n")
    p = read_predictions(path)
    assert p.subject_ids == ("a", "b") and p.scores.tolist() == [0.25, 0.75]
    path.write_text("id,prob\na,0.2\n")
    with pytest.raises(ValidationError):
        read_predictions(path)


# -- bootstrap ------------------------------------------------------------------------------

def test_bootstrap_is_deterministic():
    rng = np.random.default_rng(1)
    y = rng.integers(0, 2, size=200)
    s = np.clip(0.3 * y + rng.random(200) * 0.7, 0, 1)
    a = bootstrap_ci("auroc", s, y, n_resamples=200, seed=7)
    assert a == bootstrap_ci("auroc", s, y, n_resamples=200, seed=7)
    assert a != bootstrap_ci("auroc", s, y, n_resamples=200, seed=8)
    assert a[0] <= auroc(s, y) <= a[1]


def test_bootstrap_ci_is_narrow_for_large_samples():
    rng = np.random.default_rng(2)
    y = rng.integers(0, 2, size=2000)
    s = np.clip(0.4 * y + rng.random(2000) * 0.6, 0, 1)
    lo, hi = bootstrap_ci("auroc", s, y, n_resamples=300, seed=1)
    assert hi - lo < 0.05


def test_constant_accuracy_has_degenerate_ci():
    y = np.array([0, 1] * 20)
    assert bootstrap_ci("accuracy", y.astype(float), y, n_resamples=100) == (1.0, 1.0)


def test_bootstrap_failure_when_metric_mostly_undefined():
    def fragile(s, y):
        if y.sum() != 5:
            raise SingleClass("fragile")
        return 0.0

    y = np.r_[np.ones(5), np.zeros(5)]
    # label-stratified resampling keeps the class counts, so this never fails
    assert bootstrap_ci(fragile, np.zeros(10), y, n_resamples=20) == (0.0, 0.0)

    def flaky(s, y):
        # defined only when the single 0.0 score is drawn: (4/5)^5 = 33% of resamples miss it
        if s.min() > 0:
            raise SingleClass("flaky")
        return 1.0

    with pytest.raises(BootstrapFailure):
        bootstrap_ci(flaky, np.r_[0.0, np.full(9, 0.5)], np.r_[np.ones(5), np.zeros(5)], n_resamples=50)


# -- report ---------------------------------------------------------------------------------

def report_inputs(n=300, seed=3):
    recs = fuzz_records(n, seed=seed)
    rng = np.random.default_rng(seed)
    y = np.array([int(r.diagnosis.value == "HF") for r in recs])
    s = np.clip(0.35 * y + 0.65 * rng.random(n), 0, 1)
    return PredictionSet(tuple(r.subject_id for r in recs), s, y), DatasetManifest(tuple(recs))


def test_report_is_byte_identical_across_runs():
    p, m = report_inputs()
    a = canonical_json(fairness_report(p, m, n_resamples=50, seed=4))
    b = canonical_json(fairness_report(p, m, n_resamples=50, seed=4))
    assert a == b


def test_attribute_average_is_unweighted_group_mean():
    p, m = report_inputs()
    r = fairness_report(p, m, n_resamples=20)
    for attr in ("sex", "age", "bmi"):
        block = r["attributes"][attr]
        vals = [g["AUROC"]["value"] for g in block["groups"].values()]
        assert block["average"]["AUROC"]["value"] == pytest.approx(np.mean(vals))
        tprs = [g["TPR"]["value"] for g in block["groups"].values()]
        assert block["EOD"]["value"] == pytest.approx(max(tprs) - min(tprs))
    assert [row["group"] for row in r["table"]][-1] == "Overall"
    assert r["settings"]["sha256"]


def test_report_join_failure():
    p, m = report_inputs(40)
    with pytest.raises(JoinFailure):
        fairness_report(p, DatasetManifest(m.records[1:]), n_resamples=5)


def test_percent_scaling():
    p, m = sex_predictions(9, 10, 6, 10)
    r = fairness_report(p, m, n_resamples=10)
    eod = r["attributes"]["sex"]["EOD"]
    assert eod["x100"] == 30.0
    # 0.326 * 100 is 32.599999999999994 in binary floating point
    assert fairmetrics._entry(0.326, (0.3, 0.35))["x100"] == 32.6
    assert fairmetrics._entry(None, None) == {"value": None, "x100": None, "ci": None, "ci_x100": None}
