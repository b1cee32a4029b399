"""Analytic test objects.

Synthetic images with smooth (tanh-profiled) edges, so gradients and
edge maps are well defined at any sampling; deterministic layouts make
them usable as fixtures. The warp generator draws B-spline coefficients
from a seeded generator and rescales them to a requested peak
displacement, giving a known, representable deformation for recovery
studies: synthesize the fixed image by resampling a base volume through
the warp, register the base onto it, and compare transforms directly.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .evaluation import LandmarkSet
from .grid import GridGeometry, ScalarVolume
from .transforms import BSplineTransform


def _edge(profile, width):
    """Soft indicator: 1 well inside (negative profile), 0 outside."""
    return 0.5 * (1.0 - np.tanh(profile / width))


def head_slice(size=128, spacing=(1.0, 1.0)):
    """2-D slice phantom: bright shell, tissue interior, dark cavities.

    All features are concentric-ellipse combinations with smooth edges;
    a small off-center bright insert breaks the symmetry so that pose is
    unambiguous.
    """
    if size < 16:
        raise ParameterError(f"size must be >= 16, got {size}")
    geometry = GridGeometry((size, size), spacing)
    x, y = np.meshgrid(
        np.linspace(-1.0, 1.0, size), np.linspace(-1.0, 1.0, size), indexing="ij"
    )
    w = 2.0 / size  # edge width of about one voxel in normalized units

    def ellipse(cx, cy, rx, ry):
        return np.sqrt(((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2) - 1.0

    outer = ellipse(0.0, 0.0, 0.82, 0.90)
    inner = ellipse(0.0, 0.0, 0.72, 0.80)
    shell = _edge(outer, w) * (1.0 - _edge(inner, w))
    tissue = _edge(inner, w)
    cav_l = ellipse(-0.22, 0.08, 0.16, 0.34)
    cav_r = ellipse(0.22, 0.08, 0.16, 0.34)
    insert = ellipse(0.05, -0.42, 0.10, 0.10)
    values = (
        1.0 * shell
        + 0.55 * tissue
        - 0.45 * tissue * _edge(cav_l, w)
        - 0.45 * tissue * _edge(cav_r, w)
        + 0.40 * _edge(insert, w)
    )
    return ScalarVolume(geometry, values)


_BLOBS = (
    # center (fractions), radii (fractions), intensity
    ((0.50, 0.50, 0.50), (0.30, 0.26, 0.28), 0.60),
    ((0.32, 0.40, 0.58), (0.10, 0.12, 0.10), 1.00),
    ((0.66, 0.60, 0.44), (0.12, 0.09, 0.11), 0.85),
    ((0.56, 0.32, 0.62), (0.07, 0.08, 0.07), 0.45),
)


def blob_volume(size=64, spacing=(1.0, 1.0, 1.0)):
    """3-D phantom: one large body with three asymmetric inclusions."""
    if size < 16:
        raise ParameterError(f"size must be >= 16, got {size}")
    geometry = GridGeometry((size, size, size), spacing)
    coords = np.meshgrid(*(np.arange(size, dtype=np.float64) for _ in range(3)), indexing="ij")
    values = np.zeros((size,) * 3)
    for (center, radii, intensity) in _BLOBS:
        d = np.sqrt(
            sum(((c - fc * size) / (fr * size)) ** 2 for c, fc, fr in zip(coords, center, radii))
        )
        min_r_vox = min(radii) * size
        values = np.maximum(values, intensity * _edge((d - 1.0) * min_r_vox, 1.5))
    return ScalarVolume(geometry, values)


def invert_contrast(v):
    """Map intensities linearly so bright and dark trade places."""
    lo = float(v.values.min())
    hi = float(v.values.max())
    return ScalarVolume(v.geometry, lo + hi - v.values)


def random_smooth_warp(geometry, max_displacement, control_spacing=16.0, seed=0):
    """Random B-spline warp with a prescribed peak displacement (mm).

    ``control_spacing`` is in voxels of the given grid. Coefficients are
    drawn from a seeded generator and rescaled so the largest
    displacement magnitude on the grid equals ``max_displacement``.
    """
    if max_displacement <= 0:
        raise ParameterError(f"max_displacement must be positive, got {max_displacement}")
    spacing_mm = tuple(control_spacing * s for s in geometry.spacing)
    base = BSplineTransform.for_domain(geometry, spacing_mm)
    rng = np.random.default_rng(seed)
    coeff = rng.normal(0.0, 1.0, base.coefficients.shape)
    disp = BSplineTransform(base.control_grid, coeff).displacement_on_grid(geometry)
    peak = float(np.max(np.linalg.norm(disp, axis=-1)))
    if peak == 0.0:
        raise ParameterError("degenerate draw: zero displacement everywhere")
    return BSplineTransform(base.control_grid, coeff * (max_displacement / peak))


def grid_landmarks(geometry, per_axis=4, margin=8):
    """Regular lattice of interior points in world coordinates."""
    axes = []
    for d in geometry.dims:
        if d - 2 * margin < per_axis:
            raise ParameterError(
                f"axis of size {d} cannot hold {per_axis} landmarks with margin {margin}"
            )
        axes.append(np.linspace(margin, d - 1 - margin, per_axis))
    idx = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, geometry.ndim)
    return LandmarkSet.from_indices(idx, geometry)
