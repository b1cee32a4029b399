"""Registration quality measures and similarity landscape studies.

Target registration error works on corresponding landmark pairs in
world coordinates; Dice on binary label overlap. Translation profiles
probe a metric along whole-voxel shifts of one volume against another
on a shift-independent support window, which keeps every sample of the
profile comparable: representations are computed once on the full
volumes and only sliced afterwards, so boundary effects are identical
across shifts. Basin analysis summarizes such a profile into the number
of local minima and the widest monotone interval around the global one,
a proxy for capture range.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridError, ParameterError, UndefinedMetricError
from .grid import GridGeometry, LabelVolume, ScalarVolume, VectorField
from .metrics import MetricValue, mean_dot_product, ncc, nmi, ssd
from .representations import RepresentationConfig, make_representation


@dataclass(frozen=True)
class LandmarkSet:
    """Point set in world coordinates, one row per landmark (mm)."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).copy()
        if pts.ndim != 2 or pts.shape[1] not in (2, 3):
            raise ParameterError(f"landmarks must be (n, 2) or (n, 3), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ParameterError("landmark coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return self.points.shape[0]

    @classmethod
    def from_indices(cls, indices, geometry):
        """Build from voxel-index coordinates on a given grid."""
        idx = np.asarray(indices, dtype=np.float64)
        return cls(geometry.index_to_world(idx))


@dataclass(frozen=True)
class TreResult:
    distances_mm: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.distances_mm, dtype=np.float64).copy()
        d.setflags(write=False)
        object.__setattr__(self, "distances_mm", d)

    @property
    def mean(self):
        return float(np.mean(self.distances_mm))

    @property
    def std(self):
        return float(np.std(self.distances_mm))

    @property
    def max(self):
        return float(np.max(self.distances_mm))

    @property
    def count(self):
        return int(self.distances_mm.size)


def tre(transform, fixed_landmarks, moving_landmarks):
    """Distance between mapped fixed landmarks and their moving pairs.

    The transform maps fixed-space points into moving space (pull-back
    convention), so a perfect registration sends each fixed landmark
    onto its moving counterpart.
    """
    if len(fixed_landmarks) != len(moving_landmarks):
        raise ParameterError(
            f"landmark sets differ in size: "
            f"{len(fixed_landmarks)} vs {len(moving_landmarks)}"
        )
    if len(fixed_landmarks) == 0:
        raise ParameterError("landmark sets are empty")
    mapped = transform.apply(fixed_landmarks.points)
    d = np.linalg.norm(mapped - moving_landmarks.points, axis=1)
    return TreResult(d)


def dice(a, b, label=None):
    """Dice overlap of two label volumes.

    With ``label`` None the whole foregrounds (any positive label) are
    compared; otherwise only voxels carrying exactly that label.
    """
    if not a.geometry.close_to(b.geometry):
        raise GridError("label volumes live on different grids")
    if label is None:
        fa = a.foreground()
        fb = b.foreground()
    else:
        fa = a.values == int(label)
        fb = b.values == int(label)
    denom = int(fa.sum()) + int(fb.sum())
    if denom == 0:
        raise UndefinedMetricError("dice undefined: both selections are empty")
    return 2.0 * float(np.logical_and(fa, fb).sum()) / denom


def add_gaussian_noise(v, pct, seed=0):
    """Additive Gaussian noise with sigma = pct percent of dynamic range."""
    if pct < 0:
        raise ParameterError(f"noise percentage must be non-negative, got {pct}")
    if pct == 0:
        return v
    lo = float(v.values.min())
    hi = float(v.values.max())
    sigma = pct / 100.0 * (hi - lo)
    rng = np.random.default_rng(seed)
    return ScalarVolume(v.geometry, v.values + rng.normal(0.0, sigma, v.values.shape))


@dataclass(frozen=True)
class SimilarityProfile:
    """Metric values over whole-voxel shifts, oriented so lower is better."""

    shifts: np.ndarray
    values: np.ndarray
    axis: int
    metric: str
    representation: str
    noise_pct: float
    spacing_mm: float

    def __post_init__(self):
        s = np.asarray(self.shifts, dtype=np.int64).copy()
        v = np.asarray(self.values, dtype=np.float64).copy()
        if s.shape != v.shape or s.ndim != 1:
            raise ParameterError("shifts and values must be matching 1-d arrays")
        s.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "shifts", s)
        object.__setattr__(self, "values", v)


def _window_metric(fixed_win, moving_win, metric, geometry, mask_win, ranges, bins):
    if isinstance(fixed_win, tuple):  # vector representation, one array per component
        n = len(fixed_win)
        fv = VectorField(geometry, np.stack(fixed_win, axis=-1))
        mv = VectorField(geometry, np.stack(moving_win, axis=-1))
        if metric == "mean_dot_product":
            return mean_dot_product(fv, mv, mask=mask_win)
        parts = [
            _scalar_metric(fv.component(c), mv.component(c), metric, mask_win, ranges[c], bins)
            for c in range(n)
        ]
        return MetricValue(float(np.mean([p.value for p in parts])), parts[0].orientation)
    return _scalar_metric(
        ScalarVolume(geometry, fixed_win), ScalarVolume(geometry, moving_win),
        metric, mask_win, ranges[0], bins,
    )


def _scalar_metric(a, b, metric, mask, range_pair, bins):
    if metric == "ssd":
        return ssd(a, b, mask=mask)
    if metric == "ncc":
        return ncc(a, b, mask=mask)
    if metric == "nmi":
        return nmi(a, b, bins=bins, mask=mask, range_a=range_pair[0], range_b=range_pair[1])
    raise ParameterError(f"metric {metric!r} not applicable here")


def translation_profile(
    fixed,
    moving,
    axis=0,
    metric="ssd",
    representation=None,
    shift_range=30,
    noise_pct=0.0,
    seed=0,
    mask=None,
    nmi_bins=32,
):
    """Evaluate a metric for every whole-voxel shift along one axis.

    ``representation`` is None for raw intensity, a kind string, or a
    RepresentationConfig. Noise, when requested, is drawn independently
    for the two volumes (seeds ``seed`` and ``seed + 1``), so comparing
    a volume against itself still exercises a realistic noise floor.
    Values are stored oriented so that smaller is better regardless of
    the metric's natural direction.
    """
    if not fixed.geometry.close_to(moving.geometry):
        raise GridError("translation profiles need matching grids")
    n = fixed.geometry.ndim
    if not 0 <= axis < n:
        raise ParameterError(f"axis {axis} out of range for {n}-d volume")
    shift_range = int(shift_range)
    if shift_range < 1:
        raise ParameterError(f"shift_range must be >= 1, got {shift_range}")
    d = fixed.geometry.dims[axis]
    if 2 * shift_range >= d:
        raise ParameterError(
            f"shift_range {shift_range} leaves no support on axis of size {d}"
        )

    fixed = add_gaussian_noise(fixed, noise_pct, seed)
    moving = add_gaussian_noise(moving, noise_pct, seed + 1)

    if representation is None:
        rep_cfg = None
        rep_name = "intensity"
    elif isinstance(representation, RepresentationConfig):
        rep_cfg = representation
        rep_name = representation.kind
    else:
        rep_name = str(representation)
        rep_cfg = None if rep_name == "intensity" else RepresentationConfig(kind=rep_name)
    if rep_cfg is not None:
        fixed_rep = make_representation(fixed, rep_cfg)
        moving_rep = make_representation(moving, rep_cfg)
        f_arrays = tuple(fixed_rep.values[..., c] for c in range(fixed_rep.n_components))
        m_arrays = tuple(moving_rep.values[..., c] for c in range(moving_rep.n_components))
        ranges = [
            (
                (float(f_arrays[c].min()), float(f_arrays[c].max())),
                (float(m_arrays[c].min()), float(m_arrays[c].max())),
            )
            for c in range(len(f_arrays))
        ]
    else:
        f_arrays = fixed.values
        m_arrays = moving.values
        ranges = [
            (
                (float(f_arrays.min()), float(f_arrays.max())),
                (float(m_arrays.min()), float(m_arrays.max())),
            )
        ]

    window = [slice(None)] * n
    window[axis] = slice(shift_range, d - shift_range)
    window = tuple(window)
    win_dims = tuple(
        fixed.geometry.dims[a] if a != axis else d - 2 * shift_range for a in range(n)
    )
    win_geom = GridGeometry(win_dims, fixed.geometry.spacing, fixed.geometry.origin)
    mask_win = None
    if mask is not None:
        mask_win = mask.foreground()[window]

    shifts = np.arange(-shift_range, shift_range + 1)
    values = np.empty(shifts.size)
    for k, s in enumerate(shifts):
        shifted = [slice(None)] * n
        shifted[axis] = slice(shift_range + s, d - shift_range + s)
        shifted = tuple(shifted)
        if rep_cfg is not None:
            f_win = tuple(a[window] for a in f_arrays)
            m_win = tuple(a[shifted] for a in m_arrays)
        else:
            f_win = f_arrays[window]
            m_win = m_arrays[shifted]
        mv = _window_metric(f_win, m_win, metric, win_geom, mask_win, ranges, nmi_bins)
        values[k] = mv.oriented_minimize()
    return SimilarityProfile(
        shifts=shifts,
        values=values,
        axis=axis,
        metric=metric,
        representation=rep_name,
        noise_pct=float(noise_pct),
        spacing_mm=float(fixed.geometry.spacing[axis]),
    )


@dataclass(frozen=True)
class BasinReport:
    n_local_minima: int
    global_min_shift: int
    capture_range: tuple
    capture_width_voxels: int


def basin_analysis(profile):
    """Count local minima and measure the monotone basin of the global one.

    Runs of exactly equal neighboring values collapse to a single
    sample, so a flat plateau is at most one minimum. A boundary run
    below its single neighbor counts: a profile falling off the sampled
    range still has its best point reported. The capture range is the
    widest shift interval containing the global minimum over which the
    profile never decreases while moving away from it.
    """
    v = profile.values
    s = profile.shifts
    # collapse plateaus
    keep = np.ones(v.size, dtype=bool)
    keep[1:] = v[1:] != v[:-1]
    rv = v[keep]
    m = rv.size
    if m == 1:
        n_min = 1
    else:
        n_min = 0
        for i in range(m):
            left_ok = i == 0 or rv[i] < rv[i - 1]
            right_ok = i == m - 1 or rv[i] < rv[i + 1]
            if left_ok and right_ok:
                n_min += 1
    g = int(np.argmin(v))
    lo = g
    while lo > 0 and v[lo - 1] >= v[lo]:
        lo -= 1
    hi = g
    while hi < v.size - 1 and v[hi + 1] >= v[hi]:
        hi += 1
    return BasinReport(
        n_local_minima=n_min,
        global_min_shift=int(s[g]),
        capture_range=(int(s[lo]), int(s[hi])),
        capture_width_voxels=int(s[hi] - s[lo]),
    )
