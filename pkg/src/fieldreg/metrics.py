"""Similarity metrics over volumes and vector fields.

Scalar metrics (ssd, ncc, nmi) compare two volumes voxel-wise or via a
joint histogram. Field metrics compare vector-valued representations:
``mean_dot_product`` scores directional agreement directly, while
``vector_field_similarity`` averages a scalar metric over components so
any conventional metric applies to vector data unchanged.

Each metric returns a MetricValue carrying its optimization direction;
``oriented_minimize`` converts to a value an optimizer can always
descend on. A mask restricts every metric to the labeled voxels and is
equivalent to evaluating on inputs cropped to exactly those voxels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, ParameterError, UndefinedMetricError
from .grid import LabelVolume

_ORIENTATIONS = ("maximize", "minimize")


@dataclass(frozen=True)
class MetricValue:
    value: float
    orientation: str

    def __post_init__(self):
        if self.orientation not in _ORIENTATIONS:
            raise ParameterError(f"orientation must be one of {_ORIENTATIONS}")
        v = float(self.value)
        if not np.isfinite(v):
            raise UndefinedMetricError(f"metric value is not finite: {v}")
        object.__setattr__(self, "value", v)

    def oriented_minimize(self):
        """The value negated if this metric is maximized."""
        return self.value if self.orientation == "minimize" else -self.value


def _check_geometry(a, b):
    if not a.geometry.close_to(b.geometry):
        raise GridError(
            f"geometry mismatch: {a.geometry.dims}/{a.geometry.spacing} vs "
            f"{b.geometry.dims}/{b.geometry.spacing}"
        )


def _mask_values(arr, mask, geometry):
    """Flatten ``arr`` restricted to the mask (or all voxels)."""
    if mask is None:
        return arr.reshape(-1, *arr.shape[geometry.ndim :])
    if isinstance(mask, LabelVolume):
        if not mask.geometry.close_to(geometry):
            raise GridError("mask geometry does not match volume geometry")
        sel = mask.foreground()
    else:
        sel = np.asarray(mask, dtype=bool)
        if sel.shape != tuple(geometry.dims):
            raise GridError("mask shape does not match volume dims")
    if not sel.any():
        raise UndefinedMetricError("mask selects no voxels")
    return arr[sel]


def ssd(a, b, mask=None):
    """Mean squared intensity difference. Lower is better."""
    _check_geometry(a, b)
    av = _mask_values(a.values, mask, a.geometry)
    bv = _mask_values(b.values, mask, b.geometry)
    return MetricValue(float(np.mean((av - bv) ** 2)), "minimize")


def ncc(a, b, mask=None):
    """Global Pearson correlation of intensities, in [-1, 1]. Higher is better.

    Invariant to affine intensity maps of either input (up to the sign
    of the scale). Either input constant over the mask is an error.
    """
    _check_geometry(a, b)
    av = _mask_values(a.values, mask, a.geometry).astype(np.float64)
    bv = _mask_values(b.values, mask, b.geometry).astype(np.float64)
    ac = av - av.mean()
    bc = bv - bv.mean()
    denom = np.sqrt(np.sum(ac * ac) * np.sum(bc * bc))
    if denom == 0.0:
        raise UndefinedMetricError("ncc undefined: an input has zero variance")
    v = float(np.sum(ac * bc) / denom)
    return MetricValue(min(1.0, max(-1.0, v)), "maximize")


@dataclass(frozen=True)
class JointHistogram:
    """2-D intensity histogram with the ranges that binned it.

    Contributions may carry fractional weights (partial-volume style,
    e.g. interpolation weights of warped samples); a plain pair of
    volumes bins each voxel pair into exactly one cell, so counts sum
    to the number of contributing pairs within weighting rounding.
    """

    counts: np.ndarray = field(repr=False)
    range_fixed: tuple
    range_moving: tuple

    @property
    def bins_fixed(self):
        return self.counts.shape[0]

    @property
    def bins_moving(self):
        return self.counts.shape[1]

    @classmethod
    def from_values(cls, av, bv, bins, range_a=None, range_b=None, weights=None):
        if bins < 2:
            raise ParameterError(f"bins must be >= 2, got {bins}")
        range_a = (float(av.min()), float(av.max())) if range_a is None else tuple(range_a)
        range_b = (float(bv.min()), float(bv.max())) if range_b is None else tuple(range_b)
        ia = _bin_indices(av, range_a, bins)
        ib = _bin_indices(bv, range_b, bins)
        counts = np.zeros((bins, bins))
        np.add.at(counts, (ia, ib), 1.0 if weights is None else weights)
        return cls(counts=counts, range_fixed=range_a, range_moving=range_b)

    def marginal_fixed(self):
        return self.counts.sum(axis=1)

    def marginal_moving(self):
        return self.counts.sum(axis=0)


def _bin_indices(values, vrange, bins):
    lo, hi = vrange
    if hi <= lo:
        # constant data: everything lands in bin 0
        return np.zeros(values.shape, dtype=np.intp)
    t = (values - lo) / (hi - lo) * bins
    return np.clip(np.floor(t).astype(np.intp), 0, bins - 1)


def _entropy(p):
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def nmi(a, b, bins=32, mask=None, range_a=None, range_b=None):
    """Normalized mutual information (H(A)+H(B))/H(A,B), in [1, 2].

    Higher is better; identical non-degenerate inputs score exactly 2.
    Explicit ranges keep the histogram stationary when one input is
    re-warped between evaluations; values outside a given range clip
    into the edge bins. A constant input has zero marginal entropy and
    is rejected.
    """
    _check_geometry(a, b)
    av = _mask_values(a.values, mask, a.geometry)
    bv = _mask_values(b.values, mask, b.geometry)
    hist = JointHistogram.from_values(av, bv, bins, range_a=range_a, range_b=range_b)
    n = hist.counts.sum()
    p = hist.counts / n
    h_a = _entropy(hist.marginal_fixed() / n)
    h_b = _entropy(hist.marginal_moving() / n)
    if h_a == 0.0 or h_b == 0.0:
        raise UndefinedMetricError("nmi undefined: an input occupies a single bin")
    h_ab = _entropy(p.ravel())
    return MetricValue((h_a + h_b) / h_ab, "maximize")


def mean_dot_product(f, g, mask=None):
    """Negated mean inner product of two vector fields. Lower is better.

    On unit-magnitude fields, perfect alignment gives -1 and perfect
    anti-alignment +1; the sign convention makes good alignment a
    minimum like the other distance-style metrics.
    """
    _check_geometry(f, g)
    fv = _mask_values(f.values, mask, f.geometry)
    gv = _mask_values(g.values, mask, g.geometry)
    return MetricValue(-float(np.mean(np.sum(fv * gv, axis=-1))), "minimize")


def ngf_metric(f, g, mask=None):
    """Alignment metric for NGF fields: -1/2 times the mean dot product."""
    inner = mean_dot_product(f, g, mask=mask)
    return MetricValue(0.5 * inner.value, "minimize")


_SCALAR_METRICS = {"ssd": ssd, "ncc": ncc, "nmi": nmi}


def vector_field_similarity(df, dg, inner="ssd", mask=None, **inner_kwargs):
    """Average a scalar metric over the components of two vector fields.

    ``inner`` is 'ssd', 'ncc' or 'nmi' (or a compatible callable). The
    per-component values are averaged arithmetically and the orientation
    is inherited. A degenerate component (e.g. zero variance under ncc)
    aborts the whole metric rather than being skipped, since skipping
    would silently change what the average means.
    """
    _check_geometry(df, dg)
    if df.n_components != dg.n_components:
        raise GridError("fields have different component counts")
    metric = _SCALAR_METRICS.get(inner, inner)
    if not callable(metric):
        raise ParameterError(f"inner metric must be one of {sorted(_SCALAR_METRICS)}")
    values = []
    orientation = None
    for i in range(df.n_components):
        mv = metric(df.component(i), dg.component(i), mask=mask, **inner_kwargs)
        if orientation is None:
            orientation = mv.orientation
        elif mv.orientation != orientation:
            raise ParameterError("inner metric changed orientation between components")
        values.append(mv.value)
    return MetricValue(float(np.mean(values)), orientation)
