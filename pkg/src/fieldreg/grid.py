"""Volumes on regular grids: geometry, sampling, gradients, pyramids.

A grid is rectilinear and axis aligned. Voxel ``(i, j, k)`` sits at the
world position ``origin + index * spacing`` (units are mm throughout).
Arrays are indexed in the same axis order as ``dims``, so component ``a``
of a gradient or displacement always refers to grid axis ``a``.

All volume types are immutable: constructors copy their input array,
cast to the canonical dtype and mark the result read-only. Operations
return new volumes and never mutate their arguments, which makes every
function in this module safe to call from concurrent workers.

>>> geom = GridGeometry(dims=(4, 4, 4), spacing=(1.0, 1.0, 2.5))
>>> vol = ScalarVolume(geom, np.zeros(geom.dims))
>>> vol.values[0, 0, 0] = 1.0
Traceback (most recent call last):
    ...
ValueError: assignment destination is read-only
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import GridError, ParameterError


def _as_float_tuple(x, n, name):
    try:
        t = tuple(float(v) for v in x)
    except TypeError:
        raise ParameterError(f"{name} must be a sequence of numbers") from None
    if len(t) != n:
        raise GridError(f"{name} must have {n} entries, got {len(t)}")
    if not all(np.isfinite(t)):
        raise ParameterError(f"{name} entries must be finite, got {t}")
    return t


@dataclass(frozen=True)
class GridGeometry:
    """Shape, spacing and origin of a regular 2-D or 3-D grid."""

    dims: tuple
    spacing: tuple = None
    origin: tuple = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise GridError(f"grids must be 2-D or 3-D, got {len(dims)} axes")
        if any(d < 1 for d in dims):
            raise GridError(f"all dims must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)
        n = len(dims)
        spacing = (1.0,) * n if self.spacing is None else _as_float_tuple(self.spacing, n, "spacing")
        if any(s <= 0 for s in spacing):
            raise GridError(f"spacing must be positive, got {spacing}")
        origin = (0.0,) * n if self.origin is None else _as_float_tuple(self.origin, n, "origin")
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self):
        return len(self.dims)

    def close_to(self, other, rtol=1e-9):
        return (
            self.dims == other.dims
            and np.allclose(self.spacing, other.spacing, rtol=rtol, atol=0.0)
            and np.allclose(self.origin, other.origin, rtol=rtol, atol=1e-12)
        )

    def index_to_world(self, index):
        """Map (continuous) voxel indices, shape (..., ndim), to mm."""
        index = np.asarray(index, dtype=np.float64)
        return np.asarray(self.origin) + index * np.asarray(self.spacing)

    def world_to_index(self, points):
        points = np.asarray(points, dtype=np.float64)
        return (points - np.asarray(self.origin)) / np.asarray(self.spacing)

    def voxel_centers(self):
        """World coordinates of every voxel center, shape dims + (ndim,)."""
        idx = np.stack(
            np.meshgrid(*[np.arange(d, dtype=np.float64) for d in self.dims], indexing="ij"),
            axis=-1,
        )
        return self.index_to_world(idx)

    def extent(self):
        """Physical span from first to last voxel center per axis, in mm."""
        return tuple((d - 1) * s for d, s in zip(self.dims, self.spacing))


def _freeze_array(values, dims, dtype, name):
    arr = np.ascontiguousarray(values, dtype=dtype)
    if arr.shape[: len(dims)] != tuple(dims):
        raise GridError(f"{name} shape {arr.shape} does not match grid dims {tuple(dims)}")
    arr = arr.copy() if arr is values else arr
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ScalarVolume:
    """One float64 value per voxel."""

    geometry: GridGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _freeze_array(self.values, self.geometry.dims, np.float64, "values")
        if arr.ndim != self.geometry.ndim:
            raise GridError(f"expected {self.geometry.ndim}-D values, got {arr.ndim}-D")
        if not np.all(np.isfinite(arr)):
            raise GridError("volume contains non-finite values")
        object.__setattr__(self, "values", arr)


@dataclass(frozen=True)
class VectorField:
    """One float64 vector per voxel; component a lies along grid axis a."""

    geometry: GridGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = _freeze_array(self.values, self.geometry.dims, np.float64, "values")
        n = self.geometry.ndim
        if arr.ndim != n + 1 or arr.shape[-1] != n:
            raise GridError(
                f"field values must have shape dims + ({n},), got {arr.shape}"
            )
        if not np.all(np.isfinite(arr)):
            raise GridError("field contains non-finite values")
        object.__setattr__(self, "values", arr)

    @property
    def n_components(self):
        return self.values.shape[-1]

    def component(self, i):
        return ScalarVolume(self.geometry, self.values[..., i])

    def magnitude(self):
        """Per-voxel Euclidean norm as a plain array."""
        return np.sqrt(np.sum(self.values**2, axis=-1))


@dataclass(frozen=True)
class LabelVolume:
    """Non-negative integer labels; 0 is background."""

    geometry: GridGeometry
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.values)
        if not np.issubdtype(arr.dtype, np.integer):
            raise GridError(f"labels must be integers, got dtype {arr.dtype}")
        arr = _freeze_array(arr.astype(np.int32), self.geometry.dims, np.int32, "labels")
        if arr.ndim != self.geometry.ndim:
            raise GridError(f"expected {self.geometry.ndim}-D labels, got {arr.ndim}-D")
        if arr.min(initial=0) < 0:
            raise GridError("labels must be non-negative")
        object.__setattr__(self, "values", arr)

    def foreground(self):
        """Boolean mask of non-background voxels."""
        return self.values > 0


def gradient(v, units="physical"):
    """Spatial gradient of a scalar volume as a VectorField.

    Central differences in the interior, one-sided at the boundaries.
    With ``units='physical'`` differences are divided by the voxel
    spacing so components are per-mm; ``units='voxel'`` leaves them in
    per-voxel units.
    """
    if min(v.geometry.dims) < 2:
        raise GridError(f"gradient needs >= 2 voxels per axis, got dims {v.geometry.dims}")
    if units == "physical":
        parts = np.gradient(v.values, *v.geometry.spacing, edge_order=1)
    elif units == "voxel":
        parts = np.gradient(v.values, edge_order=1)
    else:
        raise ParameterError(f"units must be 'physical' or 'voxel', got {units!r}")
    if v.geometry.ndim == 1:
        parts = [parts]
    return VectorField(v.geometry, np.stack(parts, axis=-1))


def sample_linear(v, points, fill=0.0):
    """Multilinear interpolation of ``v`` at world points, shape (..., ndim).

    Points outside the domain spanned by the voxel centers return the
    fill value (blended linearly across the boundary half-voxel).
    """
    points = np.asarray(points, dtype=np.float64)
    if points.shape[-1] != v.geometry.ndim:
        raise GridError(
            f"points have {points.shape[-1]} coordinates, grid is {v.geometry.ndim}-D"
        )
    idx = v.geometry.world_to_index(points)
    flat = idx.reshape(-1, v.geometry.ndim).T
    out = ndimage.map_coordinates(
        v.values, flat, order=1, mode="grid-constant", cval=fill, prefilter=False
    )
    return out.reshape(points.shape[:-1])


def _warp_points(geometry, transform):
    pts = geometry.voxel_centers()
    if transform is None:
        return pts
    return transform.apply(pts)


def resample(v, geometry, transform=None, fill=0.0):
    """Pull-back resampling onto ``geometry``.

    The output voxel at world position x takes the interpolated value of
    ``v`` at ``transform(x)``; with no transform the identity is used.
    """
    warped = _warp_points(geometry, transform)
    return ScalarVolume(geometry, sample_linear(v, warped, fill=fill))


def resample_field(f, geometry, transform=None, fill=0.0):
    """Component-wise pull-back of a vector field.

    Each component is interpolated independently at ``transform(x)``;
    vectors are not reoriented by the transform Jacobian.
    """
    warped = _warp_points(geometry, transform)
    idx = f.geometry.world_to_index(warped).reshape(-1, f.geometry.ndim).T
    comps = [
        ndimage.map_coordinates(
            f.values[..., i], idx, order=1, mode="grid-constant", cval=fill, prefilter=False
        ).reshape(geometry.dims)
        for i in range(f.n_components)
    ]
    return VectorField(geometry, np.stack(comps, axis=-1))


def downsample(v, factor):
    """Anti-aliased decimation by an integer factor.

    Gaussian smoothing with sigma = 0.5 * factor voxels per axis, then
    every factor-th voxel is kept starting at index 0. Spacing scales by
    the factor, the origin is unchanged. Factor 1 returns a smoothed
    copy with identical geometry.
    """
    factor = int(factor)
    if factor < 1:
        raise ParameterError(f"downsample factor must be >= 1, got {factor}")
    out_dims = tuple(-(-d // factor) for d in v.geometry.dims)
    if min(out_dims) < 2:
        raise GridError(
            f"factor {factor} would shrink dims {v.geometry.dims} below 2 voxels"
        )
    smoothed = ndimage.gaussian_filter(v.values, sigma=0.5 * factor, mode="reflect")
    sl = tuple(slice(None, None, factor) for _ in v.geometry.dims)
    geom = GridGeometry(
        dims=out_dims,
        spacing=tuple(s * factor for s in v.geometry.spacing),
        origin=v.geometry.origin,
    )
    return ScalarVolume(geom, smoothed[sl])


def downsample_labels(lv, factor):
    """Nearest-neighbor decimation of labels (no smoothing)."""
    factor = int(factor)
    if factor < 1:
        raise ParameterError(f"downsample factor must be >= 1, got {factor}")
    out_dims = tuple(-(-d // factor) for d in lv.geometry.dims)
    if min(out_dims) < 2:
        raise GridError(
            f"factor {factor} would shrink dims {lv.geometry.dims} below 2 voxels"
        )
    sl = tuple(slice(None, None, factor) for _ in lv.geometry.dims)
    geom = GridGeometry(
        dims=out_dims,
        spacing=tuple(s * factor for s in lv.geometry.spacing),
        origin=lv.geometry.origin,
    )
    return LabelVolume(geom, lv.values[sl])
