"""Similarity metrics against brute-force reference implementations."""

import math

import numpy as np
import pytest

from fieldreg import (
    GridError,
    GridGeometry,
    JointHistogram,
    LabelVolume,
    MetricValue,
    ScalarVolume,
    UndefinedMetricError,
    VectorField,
    mean_dot_product,
    ncc,
    ngf_metric,
    nmi,
    ssd,
    vector_field_similarity,
)

from conftest import random_field, random_volume


# ---------------------------------------------------------------- oracles
#
# Scalar loops over voxels, no vectorization, no shared helpers with the
# package: these freeze the metric definitions independently.

def ssd_oracle(a, b):
    total = 0.0
    n = 0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
        n += 1
    return total / n


def ncc_oracle(a, b):
    xs = list(a.ravel())
    ys = list(b.ravel())
    n = len(xs)
    mx = sum(xs) / n
    my = sum(ys) / n
    sxy = sum((x - mx) * (y - my) for x, y in zip(xs, ys))
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    return sxy / math.sqrt(sxx * syy)


def nmi_oracle(a, b, bins):
    """Equal-width binning over each input's own range, then entropies."""
    av = a.ravel()
    bv = b.ravel()

    def bin_of(x, lo, hi):
        if hi <= lo:
            return 0
        i = int((x - lo) / (hi - lo) * bins)
        return min(max(i, 0), bins - 1)

    counts = {}
    for x, y in zip(av, bv):
        key = (bin_of(x, av.min(), av.max()), bin_of(y, bv.min(), bv.max()))
        counts[key] = counts.get(key, 0) + 1
    n = len(av)
    pa = {}
    pb = {}
    for (i, j), c in counts.items():
        pa[i] = pa.get(i, 0) + c / n
        pb[j] = pb.get(j, 0) + c / n
    h = lambda ps: -sum(p * math.log(p) for p in ps if p > 0)
    h_ab = h([c / n for c in counts.values()])
    return (h(pa.values()) + h(pb.values())) / h_ab


def mdp_oracle(f, g):
    n_comp = f.shape[-1]
    total = 0.0
    count = 0
    for fv, gv in zip(f.reshape(-1, n_comp), g.reshape(-1, n_comp)):
        total += float(np.dot(fv, gv))
        count += 1
    return -total / count


# ---------------------------------------------------------------- ssd

def test_ssd_identical_is_zero(rng):
    v = random_volume(rng, (4, 4, 4))
    m = ssd(v, v)
    assert m.value == 0.0
    assert m.orientation == "minimize"


def test_ssd_constant_difference():
    g = GridGeometry((3, 3))
    a = ScalarVolume(g, np.zeros((3, 3)))
    b = ScalarVolume(g, np.full((3, 3), 1.5))
    assert ssd(a, b).value == pytest.approx(2.25)


def test_ssd_hand_sum():
    g = GridGeometry((2, 2))
    a = ScalarVolume(g, np.array([[0.0, 1.0], [2.0, 3.0]]))
    b = ScalarVolume(g, np.array([[1.0, 1.0], [2.0, 3.0]]))
    assert ssd(a, b).value == pytest.approx(0.25)


def test_ssd_geometry_mismatch():
    a = ScalarVolume(GridGeometry((3, 3)), np.zeros((3, 3)))
    b = ScalarVolume(GridGeometry((3, 3), spacing=(2.0, 1.0)), np.zeros((3, 3)))
    with pytest.raises(GridError):
        ssd(a, b)


# ---------------------------------------------------------------- ncc

def test_ncc_self_is_one(rng):
    v = random_volume(rng, (5, 5))
    m = ncc(v, v)
    assert m.value == pytest.approx(1.0)
    assert m.orientation == "maximize"


def test_ncc_negated_is_minus_one(rng):
    v = random_volume(rng, (5, 5))
    w = ScalarVolume(v.geometry, -v.values)
    assert ncc(v, w).value == pytest.approx(-1.0)


def test_ncc_affine_invariance(rng):
    v = random_volume(rng, (5, 5))
    w = ScalarVolume(v.geometry, 3.0 * v.values + 7.0)
    assert ncc(v, w).value == pytest.approx(1.0, abs=1e-9)
    neg = ScalarVolume(v.geometry, -2.0 * v.values + 1.0)
    assert ncc(v, neg).value == pytest.approx(-1.0, abs=1e-9)


def test_ncc_zero_variance_rejected(rng):
    v = random_volume(rng, (4, 4))
    flat = ScalarVolume(v.geometry, np.full((4, 4), 2.0))
    with pytest.raises(UndefinedMetricError):
        ncc(v, flat)


# ---------------------------------------------------------------- nmi

def test_nmi_self_is_two(rng):
    v = random_volume(rng, (6, 6, 6))
    assert nmi(v, v).value == pytest.approx(2.0, abs=1e-9)


def test_nmi_permutation_scores_below_aligned(rng):
    v = random_volume(rng, (8, 8, 8))
    shuffled = v.values.ravel().copy()
    rng.shuffle(shuffled)
    w = ScalarVolume(v.geometry, shuffled.reshape(v.values.shape))
    aligned = nmi(v, v).value
    scrambled = nmi(v, w).value
    assert scrambled < aligned
    assert 1.0 <= scrambled <= 2.0


def test_nmi_constant_input_rejected(rng):
    v = random_volume(rng, (4, 4))
    flat = ScalarVolume(v.geometry, np.zeros((4, 4)))
    with pytest.raises(UndefinedMetricError):
        nmi(v, flat)


def test_nmi_symmetry(rng):
    a = random_volume(rng, (6, 6))
    b = random_volume(rng, (6, 6))
    assert nmi(a, b).value == pytest.approx(nmi(b, a).value, abs=1e-9)


def test_joint_histogram_counts_sum(rng):
    av = rng.uniform(0, 1, 100)
    bv = rng.uniform(0, 1, 100)
    h = JointHistogram.from_values(av, bv, bins=8)
    assert h.counts.sum() == pytest.approx(100.0)
    assert h.bins_fixed == 8 and h.bins_moving == 8


# ---------------------------------------------------------------- dot products

def unit_field(g, direction):
    vals = np.zeros(g.dims + (g.ndim,))
    vals[...] = np.asarray(direction, dtype=np.float64)
    return VectorField(g, vals)


def test_mdp_aligned_unit_fields():
    g = GridGeometry((4, 4))
    f = unit_field(g, (1.0, 0.0))
    m = mean_dot_product(f, f)
    assert m.value == pytest.approx(-1.0)
    assert m.orientation == "minimize"


def test_mdp_anti_aligned():
    g = GridGeometry((4, 4))
    f = unit_field(g, (0.0, 1.0))
    r = unit_field(g, (0.0, -1.0))
    assert mean_dot_product(f, r).value == pytest.approx(1.0)


def test_mdp_orthogonal():
    g = GridGeometry((4, 4))
    assert mean_dot_product(
        unit_field(g, (1.0, 0.0)), unit_field(g, (0.0, 1.0))
    ).value == pytest.approx(0.0)


def test_mdp_bilinear(rng):
    f = random_field(rng, (5, 5))
    g = random_field(rng, (5, 5))
    base = mean_dot_product(f, g).value
    scaled = VectorField(g.geometry, 2.5 * g.values)
    assert mean_dot_product(f, scaled).value == pytest.approx(2.5 * base, rel=1e-12)


def test_ngf_metric_values():
    g = GridGeometry((4, 4))
    f = unit_field(g, (1.0, 0.0))
    assert ngf_metric(f, f).value == pytest.approx(-0.5)
    r = unit_field(g, (-1.0, 0.0))
    assert ngf_metric(f, r).value == pytest.approx(0.5)
    z = VectorField(g, np.zeros((4, 4, 2)))
    assert ngf_metric(z, f).value == pytest.approx(0.0)


# ---------------------------------------------------------------- Eq-6 style average

def test_vfs_identical_ssd_zero(rng):
    f = random_field(rng, (4, 4, 4))
    assert vector_field_similarity(f, f, inner="ssd").value == 0.0


def test_vfs_identical_ncc_one(rng):
    f = random_field(rng, (4, 4, 4))
    m = vector_field_similarity(f, f, inner="ncc")
    assert m.value == pytest.approx(1.0)
    assert m.orientation == "maximize"


def test_vfs_component_mean_exact():
    # component SSDs of 0.2 and 0.4 must average to 0.3
    g = GridGeometry((5, 5))
    a = np.zeros((5, 5, 2))
    b = np.zeros((5, 5, 2))
    b[..., 0] = np.sqrt(0.2)
    b[..., 1] = np.sqrt(0.4)
    m = vector_field_similarity(VectorField(g, a), VectorField(g, b), inner="ssd")
    assert abs(m.value - 0.3) <= 1e-12


def test_vfs_degenerate_component_fails_whole_metric(rng):
    g = GridGeometry((4, 4))
    a = rng.normal(0.0, 1.0, (4, 4, 2))
    b = a.copy()
    b[..., 1] = 3.0  # constant component: ncc undefined
    with pytest.raises(UndefinedMetricError):
        vector_field_similarity(VectorField(g, a), VectorField(g, b), inner="ncc")


# ---------------------------------------------------------------- masks

def region_mask(geometry, lo, hi):
    vals = np.zeros(geometry.dims, dtype=np.int32)
    vals[tuple(slice(a, b) for a, b in zip(lo, hi))] = 1
    return LabelVolume(geometry, vals)


@pytest.mark.parametrize("metric", [ssd, ncc, nmi])
def test_masked_equals_cropped(rng, metric):
    a = random_volume(rng, (8, 8))
    b = random_volume(rng, (8, 8))
    mask = region_mask(a.geometry, (2, 3), (7, 8))
    sub = GridGeometry((5, 5))
    a_crop = ScalarVolume(sub, a.values[2:7, 3:8].copy())
    b_crop = ScalarVolume(sub, b.values[2:7, 3:8].copy())
    got = metric(a, b, mask=mask).value
    want = metric(a_crop, b_crop).value
    assert got == pytest.approx(want, abs=1e-12)


def test_mdp_masked_equals_cropped(rng):
    f = random_field(rng, (8, 8))
    g = random_field(rng, (8, 8))
    mask = region_mask(f.geometry, (1, 1), (6, 5))
    sub = GridGeometry((5, 4))
    f_crop = VectorField(sub, f.values[1:6, 1:5].copy())
    g_crop = VectorField(sub, g.values[1:6, 1:5].copy())
    got = mean_dot_product(f, g, mask=mask).value
    want = mean_dot_product(f_crop, g_crop).value
    assert got == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------- randomized oracle sweep

def test_metrics_match_oracles_100_trials():
    rng = np.random.default_rng(99)
    for trial in range(100):
        a = rng.uniform(0.0, 1.0, (4, 4, 4))
        b = rng.uniform(0.0, 1.0, (4, 4, 4))
        g = GridGeometry((4, 4, 4))
        va = ScalarVolume(g, a)
        vb = ScalarVolume(g, b)
        assert ssd(va, vb).value == pytest.approx(ssd_oracle(a, b), abs=1e-9)
        assert ncc(va, vb).value == pytest.approx(ncc_oracle(a, b), abs=1e-9)
        assert nmi(va, vb, bins=8).value == pytest.approx(
            nmi_oracle(a, b, bins=8), abs=1e-6
        )
        fa = rng.normal(0.0, 1.0, (4, 4, 4, 3))
        fb = rng.normal(0.0, 1.0, (4, 4, 4, 3))
        assert mean_dot_product(
            VectorField(g, fa), VectorField(g, fb)
        ).value == pytest.approx(mdp_oracle(fa, fb), abs=1e-9)


def test_metric_value_orientation_checked():
    with pytest.raises(Exception):
        MetricValue(1.0, "sideways")
