import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fairaug.errors import DegenerateRange, EmptyStructure, InvariantViolation, MaskTooSmall, NoValidPairs
from fairaug.phantom import cardiac_mask
from fairaug.preprocess import StackedImage
from fairaug.radiomics import (
    FEATURE_NAMES,
    FIRST_ORDER_NAMES,
    GLCM_NAMES,
    ExtractionSettings,
    FeatureVector,
    discretize,
    extract_features,
    first_order_features,
    glcm_features,
    glcm_matrix,
    read_feature_table,
    shape_features,
    table_from_vectors,
)


def brute_glcm(q, mask, levels, offsets):
    """Oracle: enumerate every pixel pair explicitly."""
    h, w = q.shape
    mats = []
    for dy, dx in offsets:
        P = np.zeros((levels, levels))
        for y in range(h):
            for x in range(w):
                y2, x2 = y + dy, x + dx
                if 0 <= y2 < h and 0 <= x2 < w and mask[y, x] and mask[y2, x2]:
                    P[q[y, x], q[y2, x2]] += 1
                    P[q[y2, x2], q[y, x]] += 1
        if P.sum():
            mats.append(P / P.sum())
    return np.mean(mats, axis=0) if mats else None


def naive_first_order(values):
    """Oracle: plain Python loops and a sort."""
    xs = sorted(float(v) for v in values)
    n = len(xs)
    mean = sum(xs) / n
    m2 = sum((x - mean) ** 2 for x in xs) / n
    m3 = sum((x - mean) ** 3 for x in xs) / n
    m4 = sum((x - mean) ** 4 for x in xs) / n

    def pct(q):
        pos = q / 100 * (n - 1)
        lo = math.floor(pos)
        hi = min(lo + 1, n - 1)
        return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)

    skew = m3 / m2 ** 1.5 if m2 > 0 else 0.0
    kurt = m4 / m2 ** 2 - 3 if m2 > 0 else 0.0
    energy = sum(x * x for x in xs)
    return [mean, pct(50), xs[0], xs[-1], pct(10), pct(90), pct(75) - pct(25), m2, skew, kurt,
            energy, math.sqrt(energy / n), sum(abs(x - mean) for x in xs) / n]


def phantom_pair(seed=0, size=48):
    rng = np.random.default_rng(seed)
    mask = cardiac_mask(rng, size)
    img = np.array([0.0, 900.0, 420.0, 700.0])[mask] + rng.normal(0, 25, mask.shape)
    return img, mask


def test_feature_names_are_fixed():
    assert len(FEATURE_NAMES) == 26
    assert len(FIRST_ORDER_NAMES) == 13 and len(GLCM_NAMES) == 6
    assert len(set(FEATURE_NAMES)) == 26


# -- discretize -----------------------------------------------------------------

def test_uniform_values_into_four_bins():
    vals = np.linspace(0, 1, 16).reshape(4, 4)
    q = discretize(vals, np.ones((4, 4), bool), levels=4)
    expected = np.minimum(np.floor(vals * 4), 3)
    assert np.array_equal(q, expected)
    assert q.max() == 3


def test_two_levels():
    img = np.array([[0.1, 0.9] * 8])
    q = discretize(img, np.ones_like(img, bool), levels=2)
    assert q.tolist() == [[0, 1] * 8]


def test_constant_region_quantizes_to_zero():
    with pytest.warns(DegenerateRange):
        q = discretize(np.full((4, 4), 0.3), np.ones((4, 4), bool))
    assert np.all(q == 0)


def test_too_few_pixels():
    with pytest.raises(MaskTooSmall):
        discretize(np.zeros((4, 4)), np.eye(4, dtype=bool))


# -- first order ----------------------------------------------------------------

def test_first_order_1234():
    f = dict(zip(FIRST_ORDER_NAMES, first_order_features(np.array([[1.0, 2.0], [3.0, 4.0]]),
                                                           np.ones((2, 2), bool), min_pixels=4)))
    assert f["fo_mean"] == 2.5
    assert f["fo_variance"] == 1.25
    assert f["fo_skewness"] == 0.0
    assert f["fo_energy"] == 30.0


def test_first_order_constant():
    f = dict(zip(FIRST_ORDER_NAMES, first_order_features(np.full((4, 4), 0.7), np.ones((4, 4), bool))))
    assert f["fo_variance"] == 0 and f["fo_skewness"] == 0 and f["fo_kurtosis"] == 0
    assert f["fo_rms"] == pytest.approx(0.7, abs=1e-15)


def test_symmetric_values_have_zero_skew():
    img = np.array([0.0, 0.5, 1.0] * 6).reshape(3, 6)
    f = dict(zip(FIRST_ORDER_NAMES, first_order_features(img, np.ones_like(img, bool))))
    assert f["fo_skewness"] == pytest.approx(0.0, abs=1e-15)


def test_first_order_matches_naive_oracle_on_1000_images():
    rng = np.random.default_rng(123)
    for _ in range(1000):
        img = rng.gamma(2.0, 1.0, size=(7, 7))
        mask = rng.random((7, 7)) < 0.7
        if mask.sum() < 16:
            mask[:4, :4] = True
        got = first_order_features(img, mask)
        want = np.array(naive_first_order(img[mask]))
        assert np.allclose(got, want, rtol=1e-10, atol=1e-12)


# -- GLCM -------------------------------------------------------------------------

def test_glcm_two_rows_horizontal():
    q = np.array([[0, 0], [1, 1]])
    P = glcm_matrix(q, None, levels=2, offsets=((0, 1),))
    assert P.tolist() == [[0.5, 0.0], [0.0, 0.5]]
    f = dict(zip(GLCM_NAMES, glcm_features(q, None, levels=2, offsets=((0, 1),))))
    assert f["glcm_contrast"] == 0.0 and f["glcm_homogeneity"] == 1.0


def test_glcm_checkerboard():
    q = np.indices((6, 6)).sum(axis=0) % 2
    f = dict(zip(GLCM_NAMES, glcm_features(q, None, levels=2, offsets=((0, 1),))))
    assert f["glcm_contrast"] == 1.0 and f["glcm_asm"] == 0.5


def test_glcm_constant_region():
    f = dict(zip(GLCM_NAMES, glcm_features(np.zeros((5, 5), int), None, levels=8)))
    assert f["glcm_entropy"] == 0.0 and f["glcm_correlation"] == 1.0 and f["glcm_asm"] == 1.0


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 7), st.integers(2, 7), st.integers(2, 5), st.integers(0, 2**31))
def test_glcm_matches_pair_enumeration(h, w, levels, seed):
    rng = np.random.default_rng(seed)
    q = rng.integers(0, levels, size=(h, w))
    mask = rng.random((h, w)) < 0.8
    mask[0, :2] = True
    offsets = ((0, 1), (1, 0), (1, 1), (1, -1))
    want = brute_glcm(q, mask, levels, offsets)
    if want is None:
        with pytest.raises(NoValidPairs):
            glcm_matrix(q, mask, levels, offsets)
        return
    got = glcm_matrix(q, mask, levels, offsets)
    assert np.allclose(got, want, atol=1e-15)
    assert np.array_equal(got, got.T)
    assert abs(got.sum() - 1) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_glcm_feature_ranges(seed):
    rng = np.random.default_rng(seed)
    q = rng.integers(0, 32, size=(12, 12))
    f = dict(zip(GLCM_NAMES, glcm_features(q, None)))
    assert f["glcm_entropy"] >= 0
    assert 0 < f["glcm_asm"] <= 1 and 0 < f["glcm_homogeneity"] <= 1
    assert -1 <= f["glcm_correlation"] <= 1


# -- shape ------------------------------------------------------------------------

def test_square():
    m = np.zeros((14, 14), np.uint8)
    m[2:12, 2:12] = 2
    f = dict(zip(FEATURE_NAMES[19:], shape_features(m)))
    assert f["shape_area"] == 100 and f["shape_perimeter"] == 40
    assert f["shape_elongation"] == pytest.approx(1.0)
    assert f["shape_compactness"] == pytest.approx(4 * math.pi * 100 / 1600)


def test_line():
    m = np.zeros((3, 24), np.uint8)
    m[1, 2:22] = 1
    f = dict(zip(FEATURE_NAMES[19:], shape_features(m)))
    # lambda1 = var of 0..19 = 33.25, lambda2 = 0
    assert f["shape_elongation"] == 0.0
    assert f["shape_major_axis"] == pytest.approx(4 * math.sqrt(33.25))
    assert f["shape_minor_axis"] == 0.0


def test_empty_structure():
    with pytest.raises(EmptyStructure):
        shape_features(np.zeros((5, 5), np.uint8))


# -- full vector --------------------------------------------------------------------

def test_vector_is_deterministic_and_finite():
    img, mask = phantom_pair(1)
    s = StackedImage(np.stack([img] * 3))
    a, b = extract_features(s, mask), extract_features(s, mask)
    assert np.array_equal(a.values, b.values)
    assert a.names == FEATURE_NAMES and np.all(np.isfinite(a.values))


def test_global_scaling_invariance():
    img, mask = phantom_pair(2)
    a = extract_features(StackedImage(np.stack([img] * 3)), mask)
    b = extract_features(StackedImage(np.stack([2 * img] * 3)), mask)
    assert np.allclose(a.values, b.values, rtol=1e-12, atol=1e-12)


def test_translation_invariance():
    img, mask = phantom_pair(3, size=56)
    a = extract_features(StackedImage(np.stack([img] * 3)), mask)
    shifted_img = np.roll(img, (3, 3), axis=(0, 1))
    shifted_mask = np.roll(mask, (3, 3), axis=(0, 1))
    b = extract_features(StackedImage(np.stack([shifted_img] * 3)), shifted_mask)
    assert np.allclose(a.values, b.values, rtol=1e-12, atol=1e-12)


def test_rotation_by_90_degrees():
    img, mask = phantom_pair(4)
    a = extract_features(StackedImage(np.stack([img] * 3)), mask)
    b = extract_features(StackedImage(np.stack([np.rot90(img)] * 3)), np.rot90(mask))
    assert np.allclose(a.values, b.values, rtol=1e-10, atol=1e-12)


def test_es_channel_doubles_intensity_block():
    img, mask = phantom_pair(5)
    settings_ = ExtractionSettings(channels=("ed", "es"))
    v = extract_features(StackedImage(np.stack([img, img * 0.5, img])), mask, settings_)
    assert len(v.values) == 2 * 19 + 7
    assert np.allclose(v.values[:19], v.values[19:38])


def test_nonfinite_vector_is_rejected():
    with pytest.raises(InvariantViolation):
        FeatureVector(np.full(26, np.nan))


def test_table_csv_round_trip(tmp_path):
    vecs, ids = [], ["b", "a", "c"]
    for i in range(3):
        img, mask = phantom_pair(10 + i)
        vecs.append(extract_features(StackedImage(np.stack([img] * 3)), mask))
    t = table_from_vectors(ids, vecs)
    assert t.ids == ("a", "b", "c")
    t.write(tmp_path / "f.csv")
    back = read_feature_table(tmp_path / "f.csv")
    assert back.ids == t.ids and back.names == t.names
    assert np.array_equal(back.values, t.values)
