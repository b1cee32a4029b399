"""Spatial transform models: translation, affine, cubic B-spline, composite.

All transforms map world points (mm) to world points and are evaluated
in pull-back style: to warp an image, the output grid's voxel centers
are pushed through the transform and the source is sampled there.

Transforms are immutable. The optimizer interface is a flat parameter
vector: ``t.parameters`` returns it and ``t.with_parameters(p)`` builds
a new transform of the same model; the round trip is exact.

The B-spline model follows the free-form-deformation convention used by
elastix: coefficients are displacements in mm attached to a regular
control grid, interpolated by the cubic B-spline basis. Points outside
the grid's valid region get zero displacement so resampling is total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridError, ParameterError
from .grid import GridGeometry


def bspline_weights(u):
    """The four cubic B-spline basis weights at fractional position u.

    ``u`` may be scalar or an array in [0, 1]; returns shape u.shape +
    (4,). The weights are a partition of unity. u=0 gives (1/6, 4/6,
    1/6, 0); u=1 is the same knot seen from the next cell.
    """
    u = np.asarray(u, dtype=np.float64)
    if np.any(u < 0) or np.any(u > 1):
        raise ParameterError("bspline_weights expects u in [0, 1]")
    u2 = u * u
    u3 = u2 * u
    w = np.empty(u.shape + (4,))
    w[..., 0] = (1 - u) ** 3 / 6.0
    w[..., 1] = (3 * u3 - 6 * u2 + 4) / 6.0
    w[..., 2] = (-3 * u3 + 3 * u2 + 3 * u + 1) / 6.0
    w[..., 3] = u3 / 6.0
    return w


def _as_vector(x, n, name):
    v = np.asarray(x, dtype=np.float64).reshape(-1)
    if v.size != n:
        raise ParameterError(f"{name} must have {n} entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ParameterError(f"{name} must be finite")
    v.setflags(write=False)
    return v


@dataclass(frozen=True)
class TranslationTransform:
    offset: np.ndarray

    def __post_init__(self):
        off = np.asarray(self.offset, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "offset", _as_vector(off, off.size, "offset"))

    @property
    def ndim(self):
        return self.offset.size

    @property
    def parameters(self):
        return self.offset.copy()

    def with_parameters(self, p):
        return TranslationTransform(_as_vector(p, self.ndim, "parameters"))

    def apply(self, points):
        return np.asarray(points, dtype=np.float64) + self.offset

    def warp_grid(self, geometry):
        return self.apply(geometry.voxel_centers())


@dataclass(frozen=True)
class AffineTransform:
    """x -> matrix @ (x - center) + center + offset."""

    matrix: np.ndarray
    offset: np.ndarray = None
    center: np.ndarray = None

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ParameterError(f"matrix must be square, got shape {m.shape}")
        n = m.shape[0]
        if not np.all(np.isfinite(m)):
            raise ParameterError("matrix must be finite")
        if abs(np.linalg.det(m)) < 1e-12:
            raise ParameterError("matrix is singular")
        m = m.copy()
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        off = np.zeros(n) if self.offset is None else self.offset
        ctr = np.zeros(n) if self.center is None else self.center
        object.__setattr__(self, "offset", _as_vector(off, n, "offset"))
        object.__setattr__(self, "center", _as_vector(ctr, n, "center"))

    @classmethod
    def identity(cls, ndim, center=None):
        return cls(np.eye(ndim), center=center)

    @property
    def ndim(self):
        return self.matrix.shape[0]

    @property
    def parameters(self):
        return np.concatenate([self.matrix.ravel(), self.offset])

    def with_parameters(self, p):
        n = self.ndim
        p = _as_vector(p, n * n + n, "parameters")
        return AffineTransform(p[: n * n].reshape(n, n), p[n * n :], self.center)

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        return (pts - self.center) @ self.matrix.T + self.center + self.offset

    def warp_grid(self, geometry):
        return self.apply(geometry.voxel_centers())


@dataclass(frozen=True)
class BSplineTransform:
    """Cubic free-form deformation on a regular control grid.

    ``control_grid`` places one control point per grid node; the
    coefficient array (grid dims + (ndim,)) holds the mm displacement
    attached to each node. The displacement at a point interpolates the
    4^n surrounding coefficients with the cubic basis; the valid region
    is where that full support exists, elsewhere the displacement is
    zero (identity fallback).
    """

    control_grid: GridGeometry
    coefficients: np.ndarray = field(repr=False)

    def __post_init__(self):
        if min(self.control_grid.dims) < 4:
            raise GridError("control grid needs >= 4 points per axis for a cubic spline")
        n = self.control_grid.ndim
        c = np.ascontiguousarray(self.coefficients, dtype=np.float64)
        want = tuple(self.control_grid.dims) + (n,)
        if c.shape != want:
            raise GridError(f"coefficients shape {c.shape} != control grid shape {want}")
        if not np.all(np.isfinite(c)):
            raise ParameterError("coefficients must be finite")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    @classmethod
    def for_domain(cls, geometry, spacing_mm):
        """Zero transform whose valid region covers ``geometry``'s extent.

        ``spacing_mm`` is the control-point spacing, scalar or per axis.
        The grid extends one control point beyond the domain on each
        side to provide the cubic support margin.
        """
        n = geometry.ndim
        sp = np.broadcast_to(np.asarray(spacing_mm, dtype=np.float64), (n,))
        if np.any(sp <= 0):
            raise ParameterError(f"control spacing must be positive, got {tuple(sp)}")
        dims = []
        origin = []
        for ext, o, s in zip(geometry.extent(), geometry.origin, sp):
            cells = max(1, int(np.ceil(ext / s - 1e-9)))
            dims.append(cells + 3)
            origin.append(o - s)
        grid = GridGeometry(dims=tuple(dims), spacing=tuple(sp), origin=tuple(origin))
        return cls(grid, np.zeros(tuple(dims) + (n,)))

    @property
    def ndim(self):
        return self.control_grid.ndim

    @property
    def parameters(self):
        return self.coefficients.ravel().copy()

    def with_parameters(self, p):
        shape = tuple(self.control_grid.dims) + (self.ndim,)
        p = _as_vector(p, int(np.prod(shape)), "parameters")
        return BSplineTransform(self.control_grid, p.reshape(shape))

    def _cell_and_frac(self, u, axis):
        n_cp = self.control_grid.dims[axis]
        base = np.floor(u).astype(np.intp)
        # the closed upper edge u == n_cp - 2 belongs to the last cell
        base = np.minimum(base, n_cp - 3)
        return base, u - base

    def axis_weight_matrix(self, positions, axis):
        """Dense (len(positions), n_control_points) basis weight matrix.

        ``positions`` are world coordinates along ``axis``. Rows for
        positions outside the valid interval are zero, which also zeroes
        the tensor-product weight of any point outside the valid region.
        """
        pos = np.asarray(positions, dtype=np.float64)
        o = self.control_grid.origin[axis]
        s = self.control_grid.spacing[axis]
        n_cp = self.control_grid.dims[axis]
        u = (pos - o) / s
        valid = (u >= 1.0) & (u <= n_cp - 2.0)
        base, frac = self._cell_and_frac(np.where(valid, u, 1.0), axis)
        w = bspline_weights(frac)
        mat = np.zeros((pos.size, n_cp))
        rows = np.arange(pos.size)
        for l in range(4):
            np.add.at(mat, (rows, base - 1 + l), np.where(valid, w[:, l], 0.0))
        return mat

    def displacement_on_grid(self, geometry):
        """Displacement at every voxel center of ``geometry``.

        Separable evaluation: one banded weight matrix per axis
        contracted against the coefficient grid, much faster than
        point-wise application for full grids.
        """
        mats = [
            self.axis_weight_matrix(
                geometry.origin[a] + np.arange(geometry.dims[a]) * geometry.spacing[a], a
            )
            for a in range(geometry.ndim)
        ]
        if geometry.ndim == 2:
            return np.einsum("ia,jb,abd->ijd", mats[0], mats[1], self.coefficients, optimize=True)
        return np.einsum(
            "ia,jb,kc,abcd->ijkd", mats[0], mats[1], mats[2], self.coefficients, optimize=True
        )

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        flat = pts.reshape(-1, self.ndim)
        u = self.control_grid.world_to_index(flat)
        n_cp = np.asarray(self.control_grid.dims)
        valid = np.all((u >= 1.0) & (u <= n_cp - 2.0), axis=1)
        disp = np.zeros_like(flat)
        if np.any(valid):
            uv = u[valid]
            bases = []
            weights = []
            for a in range(self.ndim):
                base, frac = self._cell_and_frac(uv[:, a], a)
                bases.append(base)
                weights.append(bspline_weights(frac))
            d = np.zeros((uv.shape[0], self.ndim))
            if self.ndim == 2:
                for l0 in range(4):
                    for l1 in range(4):
                        w = weights[0][:, l0] * weights[1][:, l1]
                        d += w[:, None] * self.coefficients[bases[0] - 1 + l0, bases[1] - 1 + l1]
            else:
                for l0 in range(4):
                    for l1 in range(4):
                        w01 = weights[0][:, l0] * weights[1][:, l1]
                        for l2 in range(4):
                            w = w01 * weights[2][:, l2]
                            d += w[:, None] * self.coefficients[
                                bases[0] - 1 + l0, bases[1] - 1 + l1, bases[2] - 1 + l2
                            ]
            disp[valid] = d
        return (flat + disp).reshape(pts.shape)

    def warp_grid(self, geometry):
        return geometry.voxel_centers() + self.displacement_on_grid(geometry)


@dataclass(frozen=True)
class CompositeTransform:
    """Ordered chain applied last-to-first: apply([a, b], x) = a(b(x))."""

    transforms: tuple

    def __post_init__(self):
        ts = tuple(self.transforms)
        if not ts:
            raise ParameterError("composite transform must not be empty")
        dims = {t.ndim for t in ts}
        if len(dims) != 1:
            raise GridError(f"mixed dimensionalities in composite: {sorted(dims)}")
        object.__setattr__(self, "transforms", ts)

    @property
    def ndim(self):
        return self.transforms[0].ndim

    @property
    def parameters(self):
        return np.concatenate([t.parameters for t in self.transforms])

    def with_parameters(self, p):
        p = np.asarray(p, dtype=np.float64).reshape(-1)
        parts = []
        at = 0
        for t in self.transforms:
            k = t.parameters.size
            parts.append(t.with_parameters(p[at : at + k]))
            at += k
        if at != p.size:
            raise ParameterError(f"expected {at} parameters, got {p.size}")
        return CompositeTransform(tuple(parts))

    def apply(self, points):
        pts = np.asarray(points, dtype=np.float64)
        for t in reversed(self.transforms):
            pts = t.apply(pts)
        return pts

    def warp_grid(self, geometry):
        pts = self.transforms[-1].warp_grid(geometry)
        for t in reversed(self.transforms[:-1]):
            pts = t.apply(pts)
        return pts


def compose(*transforms):
    """Flatten transforms (and nested composites) into one composite."""
    flat = []
    for t in transforms:
        if isinstance(t, CompositeTransform):
            flat.extend(t.transforms)
        else:
            flat.append(t)
    return CompositeTransform(tuple(flat))
