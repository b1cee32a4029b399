"""Multi-resolution, multi-stage registration of structural representations.

A pipeline is a list of stages. Each stage picks a transform model, a
similarity metric, and a representation (raw intensity, edge-based
field, or NGF); per pyramid level the stage downsamples both images,
builds the representations on the level images, and descends the metric
with an adaptive-gain scheme. Switching representation swaps only what
the metric sees: pyramid, transform and optimizer code paths are
identical, so intensity and field registrations are directly
comparable.

Stages chain in fixed space: each new stage's transform is applied to
the output-grid point first and the composition of earlier results
after, so results refine one another and the final composite maps fixed
points into moving space (pull-back convention).

The moving representation is computed once per level on the unwarped
moving image and warped component-wise per iteration; vectors are not
reoriented. Gradients are central finite differences by default; for
transforms with many parameters (B-spline grids) an analytic chain-rule
gradient of the supported metrics (ssd, ncc, mean dot product, and
their component-averaged forms) replaces it, since per-parameter
differencing would be prohibitively slow there.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .errors import ConfigError, FieldregError, NumericalError, UndefinedMetricError
from .grid import (
    GridGeometry,
    LabelVolume,
    ScalarVolume,
    VectorField,
    downsample,
    downsample_labels,
    resample,
    resample_field,
)
from .metrics import MetricValue, mean_dot_product, ncc, nmi, ssd, vector_field_similarity
from .representations import RepresentationConfig, build_vfc_kernel, make_representation
from .transforms import (
    AffineTransform,
    BSplineTransform,
    CompositeTransform,
    TranslationTransform,
    compose,
)

_TRANSFORMS = ("translation", "affine", "bspline")
_METRICS = ("ssd", "ncc", "nmi", "mean_dot_product")
_REPRESENTATIONS = ("intensity", "vfc", "ngf")


@dataclass(frozen=True)
class StageConfig:
    """One registration stage: model, metric, representation, schedule."""

    transform: str
    metric: str = "ssd"
    representation: str = "vfc"
    gamma: float = 3.0
    kernel_radius: int = 50
    epsilon_center: float = 1e-8
    normalize: bool = True
    norm_floor_rel: float = 1e-3
    ngf_eta: float = 0.1
    levels: tuple = (4, 2, 1)
    iterations: object = 250
    grid_spacing: float = None
    mask: LabelVolume = None
    nmi_bins: int = 32
    step_initial: float = None
    step_min: float = 1e-3
    step_grow: float = 1.2
    step_shrink: float = 0.5
    tolerance: float = 1e-6
    tolerance_window: int = 10
    gradient_mode: str = "auto"
    fd_step: float = 0.05

    def __post_init__(self):
        if self.transform not in _TRANSFORMS:
            raise ConfigError(f"transform must be one of {_TRANSFORMS}, got {self.transform!r}")
        if self.metric not in _METRICS:
            raise ConfigError(f"metric must be one of {_METRICS}, got {self.metric!r}")
        if self.representation not in _REPRESENTATIONS:
            raise ConfigError(
                f"representation must be one of {_REPRESENTATIONS}, got {self.representation!r}"
            )
        if self.representation == "intensity" and self.metric == "mean_dot_product":
            raise ConfigError("mean_dot_product requires a vector representation (vfc or ngf)")
        levels = tuple(int(f) for f in self.levels)
        if not levels or any(f < 1 for f in levels):
            raise ConfigError(f"levels must be positive factors, got {levels}")
        if any(a < b for a, b in zip(levels, levels[1:])):
            raise ConfigError(f"levels must be ordered coarse to fine, got {levels}")
        object.__setattr__(self, "levels", levels)
        its = self.iterations
        its = tuple(int(i) for i in its) if np.iterable(its) else (int(its),) * len(levels)
        if len(its) != len(levels) or any(i < 1 for i in its):
            raise ConfigError(f"need >= 1 iterations for each of {len(levels)} levels, got {its}")
        object.__setattr__(self, "iterations", its)
        if self.grid_spacing is not None and not self.grid_spacing > 0:
            raise ConfigError(f"grid_spacing must be positive, got {self.grid_spacing}")
        if self.gradient_mode not in ("auto", "fd", "analytic"):
            raise ConfigError(f"unknown gradient_mode {self.gradient_mode!r}")
        if self.nmi_bins < 2:
            raise ConfigError(f"nmi_bins must be >= 2, got {self.nmi_bins}")

    def representation_config(self):
        return RepresentationConfig(
            kind=self.representation,
            gamma=self.gamma,
            kernel_radius=self.kernel_radius,
            epsilon_center=self.epsilon_center,
            normalize=self.normalize,
            norm_floor_rel=self.norm_floor_rel,
            ngf_eta=self.ngf_eta,
        )


@dataclass(frozen=True)
class RegistrationResult:
    transform: CompositeTransform
    metric_trace: tuple
    elapsed_seconds: float
    converged: bool


def objective(fixed_rep, moving_rep, t, metric, mask=None, nmi_ranges=None, nmi_bins=32):
    """Warp the moving representation onto the fixed grid and score it.

    Reference implementation used directly by small problems and tests;
    the optimizer evaluates the same quantities through a faster cached
    path. ``metric`` is one of 'ssd', 'ncc', 'nmi', 'mean_dot_product';
    on vector inputs the scalar metrics average over components.
    """
    geom = fixed_rep.geometry
    if isinstance(fixed_rep, VectorField):
        warped = resample_field(moving_rep, geom, t)
        if metric == "mean_dot_product":
            return mean_dot_product(fixed_rep, warped, mask=mask)
        if metric == "nmi":
            values = []
            for i in range(fixed_rep.n_components):
                ra, rb = (None, None) if nmi_ranges is None else nmi_ranges[i]
                values.append(
                    nmi(
                        fixed_rep.component(i),
                        warped.component(i),
                        bins=nmi_bins,
                        mask=mask,
                        range_a=ra,
                        range_b=rb,
                    ).value
                )
            return MetricValue(float(np.mean(values)), "maximize")
        return vector_field_similarity(fixed_rep, warped, inner=metric, mask=mask)
    warped = resample(moving_rep, geom, t)
    if metric == "ssd":
        return ssd(fixed_rep, warped, mask=mask)
    if metric == "ncc":
        return ncc(fixed_rep, warped, mask=mask)
    if metric == "nmi":
        ra, rb = (None, None) if nmi_ranges is None else nmi_ranges[0]
        return nmi(fixed_rep, warped, bins=nmi_bins, mask=mask, range_a=ra, range_b=rb)
    raise ConfigError(f"metric {metric!r} not applicable to scalar representations")


def _bin_idx(values, lo, hi, bins):
    t = (values - lo) / (hi - lo) * bins
    return np.clip(np.floor(t).astype(np.intp), 0, bins - 1)


def _entropy_from_counts(counts):
    p = counts[counts > 0]
    n = counts.sum()
    p = p / n
    return float(-np.sum(p * np.log(p)))


class _MetricState:
    """Fast evaluation of one metric against a cached fixed representation.

    Works on (n_selected, n_components) arrays; scalar representations
    use one component. evaluate() returns the oriented-minimize value;
    dvalue() returns its gradient with respect to the warped samples, or
    None when no closed form is implemented (nmi), in which case the
    optimizer falls back to finite differences.
    """

    def __init__(self, name, fixed_sel, nmi_bins=32, moving_ranges=None):
        self.name = name
        self.fixed = fixed_sel
        self.n_sel, self.n_comp = fixed_sel.shape
        if name == "ncc":
            self.f_centered = fixed_sel - fixed_sel.mean(axis=0, keepdims=True)
            self.f_ss = np.sum(self.f_centered**2, axis=0)
            if np.any(self.f_ss == 0):
                raise UndefinedMetricError("ncc undefined: fixed input has zero variance")
        elif name == "nmi":
            self.bins = nmi_bins
            self.moving_ranges = moving_ranges
            self.fixed_idx = []
            self.h_fixed = []
            for c in range(self.n_comp):
                vals = fixed_sel[:, c]
                lo, hi = float(vals.min()), float(vals.max())
                if hi <= lo:
                    raise UndefinedMetricError("nmi undefined: fixed input is constant")
                idx = _bin_idx(vals, lo, hi, self.bins)
                self.fixed_idx.append(idx)
                self.h_fixed.append(_entropy_from_counts(np.bincount(idx, minlength=self.bins)))
                mlo, mhi = moving_ranges[c]
                if mhi <= mlo:
                    raise UndefinedMetricError("nmi undefined: moving input is constant")

    def evaluate(self, warped_sel):
        if self.name == "ssd":
            return float(np.mean((warped_sel - self.fixed) ** 2))
        if self.name == "mdp":
            return -float(np.sum(self.fixed * warped_sel) / self.n_sel)
        if self.name == "ncc":
            w_centered = warped_sel - warped_sel.mean(axis=0, keepdims=True)
            w_ss = np.sum(w_centered**2, axis=0)
            if np.any(w_ss == 0):
                raise UndefinedMetricError("ncc undefined: warped input has zero variance")
            corr = np.sum(self.f_centered * w_centered, axis=0) / np.sqrt(self.f_ss * w_ss)
            return -float(np.mean(corr))
        # nmi
        values = []
        for c in range(self.n_comp):
            lo, hi = self.moving_ranges[c]
            ib = _bin_idx(warped_sel[:, c], lo, hi, self.bins)
            joint = np.bincount(
                self.fixed_idx[c] * self.bins + ib, minlength=self.bins * self.bins
            )
            h_b = _entropy_from_counts(np.bincount(ib, minlength=self.bins))
            if h_b == 0.0:
                raise UndefinedMetricError("nmi undefined: warped input occupies a single bin")
            h_ab = _entropy_from_counts(joint)
            values.append((self.h_fixed[c] + h_b) / h_ab)
        return -float(np.mean(values))

    def dvalue(self, warped_sel):
        if self.name == "ssd":
            return 2.0 * (warped_sel - self.fixed) / (self.n_sel * self.n_comp)
        if self.name == "mdp":
            return -self.fixed / self.n_sel
        if self.name == "ncc":
            w_centered = warped_sel - warped_sel.mean(axis=0, keepdims=True)
            w_ss = np.sum(w_centered**2, axis=0)
            if np.any(w_ss == 0):
                raise UndefinedMetricError("ncc undefined: warped input has zero variance")
            s_ab = np.sum(self.f_centered * w_centered, axis=0)
            d = (self.f_centered - w_centered * (s_ab / w_ss)) / np.sqrt(self.f_ss * w_ss)
            return -d / self.n_comp
        return None


def _rep_values(rep):
    """Representation sample array shaped (voxels..., components)."""
    if isinstance(rep, VectorField):
        return rep.values
    return rep.values[..., None]


_kernel_cache = {}


def _shared_kernel(radius, gamma, epsilon_center, n_axes):
    key = (int(radius), float(gamma), float(epsilon_center), int(n_axes))
    k = _kernel_cache.get(key)
    if k is None:
        k = build_vfc_kernel(
            support_radius=radius, gamma=gamma, epsilon_center=epsilon_center, n_axes=n_axes
        )
        _kernel_cache[key] = k
    return k


def _stage_representation(vol, cfg, level_factor=1):
    """Build the stage's representation for one pyramid level.

    The kernel radius is stated in full-resolution voxels; dividing by
    the level factor keeps the field's physical support the same at
    every level, so coarse levels see a coarse version of the same
    operator instead of one with a vastly larger reach.
    """
    if cfg.representation == "intensity":
        return vol
    rep_cfg = cfg.representation_config()
    if cfg.representation == "vfc":
        radius = max(1, int(round(cfg.kernel_radius / level_factor)))
        radius = min(radius, max(vol.geometry.dims) - 1)
        kernel = _shared_kernel(radius, cfg.gamma, cfg.epsilon_center, vol.geometry.ndim)
        return make_representation(vol, rep_cfg, kernel=kernel)
    return make_representation(vol, rep_cfg)


class _LevelProblem:
    """Objective and gradients for one stage at one pyramid level.

    Holds the fixed representation (masked and flattened), the moving
    representation with its sampling geometry, the chain of previously
    solved transforms, and the parameterized template of the transform
    being optimized.
    """

    def __init__(self, cfg, fixed_rep, moving_rep, template, prev=(), mask=None):
        self.cfg = cfg
        self.geometry = fixed_rep.geometry
        self.template = template
        self.prev = tuple(prev)
        n = self.geometry.ndim
        self.centers = self.geometry.voxel_centers().reshape(-1, n)
        self.n_vox = self.centers.shape[0]

        fixed_flat = _rep_values(fixed_rep).reshape(self.n_vox, -1)
        self.n_comp = fixed_flat.shape[1]
        if mask is not None:
            sel = mask.foreground().reshape(-1)
            if not sel.any():
                raise UndefinedMetricError("mask selects no voxels")
            self.sel = np.flatnonzero(sel)
        else:
            self.sel = None
        fixed_sel = fixed_flat if self.sel is None else fixed_flat[self.sel]

        self.moving_geometry = moving_rep.geometry
        mv = _rep_values(moving_rep)
        self.moving_values = mv.reshape(moving_rep.geometry.dims + (self.n_comp,))
        self._moving_grads = None
        self._warp_cache = None

        name = {"mean_dot_product": "mdp"}.get(cfg.metric, cfg.metric)
        moving_ranges = None
        if name == "nmi":
            flat_m = self.moving_values.reshape(-1, self.n_comp)
            moving_ranges = [
                (float(flat_m[:, c].min()), float(flat_m[:, c].max()))
                for c in range(self.n_comp)
            ]
        self.metric = _MetricState(
            name, fixed_sel, nmi_bins=cfg.nmi_bins, moving_ranges=moving_ranges
        )

        if isinstance(template, BSplineTransform):
            self.bspline_mats = [
                template.axis_weight_matrix(
                    self.geometry.origin[a]
                    + np.arange(self.geometry.dims[a]) * self.geometry.spacing[a],
                    a,
                )
                for a in range(n)
            ]
        else:
            self.bspline_mats = None

        # combined linear part of the previously solved chain, if linear
        self.prev_linear = None
        if all(isinstance(t, (TranslationTransform, AffineTransform)) for t in self.prev):
            a_total = np.eye(n)
            for t in self.prev:
                if isinstance(t, AffineTransform):
                    a_total = a_total @ t.matrix
            self.prev_linear = a_total

        self.scales = self._parameter_scales()
        spacing = np.asarray(self.geometry.spacing)
        self.fd_h = cfg.fd_step * float(spacing.mean()) / self.scales

    def _parameter_scales(self):
        t = self.template
        n = self.geometry.ndim
        if isinstance(t, AffineTransform):
            half_diag = 0.5 * float(np.linalg.norm(self.geometry.extent()))
            return np.concatenate([np.full(n * n, half_diag), np.ones(n)])
        return np.ones(t.parameters.size)

    def warp_points(self, t_active):
        if self.bspline_mats is not None:
            coeff = t_active.coefficients
            if self.geometry.ndim == 2:
                disp = np.einsum(
                    "ia,jb,abd->ijd", self.bspline_mats[0], self.bspline_mats[1], coeff,
                    optimize=True,
                )
            else:
                disp = np.einsum(
                    "ia,jb,kc,abcd->ijkd",
                    self.bspline_mats[0], self.bspline_mats[1], self.bspline_mats[2], coeff,
                    optimize=True,
                )
            pts = self.centers + disp.reshape(-1, self.geometry.ndim)
        else:
            pts = t_active.apply(self.centers)
        for t in reversed(self.prev):
            pts = t.apply(pts)
        return pts

    def sample_moving(self, pts):
        idx = self.moving_geometry.world_to_index(pts).T
        out = np.empty((pts.shape[0], self.n_comp))
        for c in range(self.n_comp):
            out[:, c] = ndimage.map_coordinates(
                self.moving_values[..., c], idx, order=1, mode="grid-constant", cval=0.0,
                prefilter=False,
            )
        return out

    def _select(self, flat):
        return flat if self.sel is None else flat[self.sel]

    def _warped_at(self, params):
        # The descent loop differentiates the same point it just
        # evaluated, so one remembered warp covers both calls.
        key = params.tobytes()
        if self._warp_cache is None or self._warp_cache[0] != key:
            t = self.template.with_parameters(params)
            pts = self.warp_points(t)
            self._warp_cache = (key, pts, self.sample_moving(pts))
        return self._warp_cache[1], self._warp_cache[2]

    def value(self, params):
        _, warped = self._warped_at(params)
        v = self.metric.evaluate(self._select(warped))
        if not np.isfinite(v):
            raise NumericalError(f"objective is not finite: {v}")
        return v

    def moving_diffs(self):
        """Per-axis forward differences of the moving representation.

        Sampling diffs[a] at the floor cell along axis a (linear in the
        others) is the exact derivative of the linear interpolant that
        value() evaluates, which matters for oscillatory fields where a
        smoothed central-difference gradient points the wrong way.

        Built on a zero-padded copy so the outermost cells, where the
        sampler blends the edge node against the zero fill, get the
        matching slope instead of a clamped one.
        """
        if self._moving_grads is None:
            pad = [(1, 1)] * self.geometry.ndim + [(0, 0)]
            padded = np.pad(self.moving_values, pad)
            diffs = []
            for a in range(self.geometry.ndim):
                sl_hi = [slice(None)] * padded.ndim
                sl_lo = [slice(None)] * padded.ndim
                sl_hi[a] = slice(1, None)
                sl_lo[a] = slice(None, -1)
                d = padded[tuple(sl_hi)] - padded[tuple(sl_lo)]
                diffs.append(d / self.moving_geometry.spacing[a])
            self._moving_grads = diffs
        return self._moving_grads

    def analytic_supported(self):
        return self.metric.name in ("ssd", "mdp", "ncc") and self.prev_linear is not None

    def analytic_gradient(self, params):
        t = self.template.with_parameters(params)
        pts, warped = self._warped_at(params)
        d_sel = self.metric.dvalue(self._select(warped))
        if d_sel is None:
            raise NumericalError("no analytic gradient for this metric")
        if self.sel is None:
            d_full = d_sel
        else:
            d_full = np.zeros((self.n_vox, self.n_comp))
            d_full[self.sel] = d_sel

        diffs = self.moving_diffs()
        # Diff arrays live on the padded grid, so indices shift by one.
        idx = self.moving_geometry.world_to_index(pts).T + 1.0
        n = self.geometry.ndim
        deriv = np.empty((self.n_vox, self.n_comp, n))
        for a in range(n):
            coords = idx.copy()
            coords[a] = np.floor(idx[a])
            for c in range(self.n_comp):
                deriv[:, c, a] = ndimage.map_coordinates(
                    diffs[a][..., c], coords, order=1, mode="grid-constant", cval=0.0,
                    prefilter=False,
                )
        r = np.einsum("xc,xcb,ba->xa", d_full, deriv, self.prev_linear, optimize=True)

        if isinstance(t, TranslationTransform):
            return r.sum(axis=0)
        if isinstance(t, AffineTransform):
            xc = self.centers - t.center
            return np.concatenate([(r.T @ xc).ravel(), r.sum(axis=0)])
        r_img = r.reshape(self.geometry.dims + (n,))
        comps = []
        for a in range(n):
            if n == 2:
                comps.append(
                    np.einsum(
                        "ij,ia,jb->ab", r_img[..., a], self.bspline_mats[0],
                        self.bspline_mats[1], optimize=True,
                    )
                )
            else:
                comps.append(
                    np.einsum(
                        "ijk,ia,jb,kc->abc", r_img[..., a], self.bspline_mats[0],
                        self.bspline_mats[1], self.bspline_mats[2], optimize=True,
                    )
                )
        return np.stack(comps, axis=-1).ravel()

    def fd_gradient(self, params, rich=False):
        g = np.empty(params.size)
        for j in range(params.size):
            h = self.fd_h[j]
            e = np.zeros(params.size)
            e[j] = h
            if rich:
                f1 = self.value(params + 2 * e)
                f2 = self.value(params + e)
                f3 = self.value(params - e)
                f4 = self.value(params - 2 * e)
                g[j] = (-f1 + 8 * f2 - 8 * f3 + f4) / (12 * h)
            else:
                g[j] = (self.value(params + e) - self.value(params - e)) / (2 * h)
        return g

    def gradient(self, params):
        mode = self.cfg.gradient_mode
        if mode == "auto":
            use_analytic = params.size > 24 and self.analytic_supported()
            mode = "analytic" if use_analytic else "fd"
        if mode == "analytic":
            if not self.analytic_supported():
                raise ConfigError(
                    "analytic gradients need a closed-form metric (not nmi) and a "
                    "linear previously-solved chain"
                )
            return self.analytic_gradient(params)
        return self.fd_gradient(params)


def _descend(problem, p0, cfg, iterations, step_initial, progress=None, level_index=0):
    """Adaptive-gain descent: halve the step on increase, grow on decrease."""
    p = np.asarray(p0, dtype=np.float64).copy()
    v = problem.value(p)
    trace = [v]
    accepted = [v]
    step = step_initial
    direction = None
    converged = False
    for it in range(1, iterations + 1):
        if direction is None:
            g = problem.gradient(p)
            if not np.all(np.isfinite(g)):
                raise NumericalError("gradient is not finite")
            gs = g / problem.scales
            norm = float(np.max(np.abs(gs)))
            if norm == 0.0:
                converged = True
                break
            direction = gs / norm
        cand = p - (step * direction) / problem.scales
        vc = problem.value(cand)
        if vc < v:
            p, v = cand, vc
            step *= cfg.step_grow
            direction = None
            accepted.append(v)
        else:
            step *= cfg.step_shrink
            if step < cfg.step_min:
                trace.append(v)
                converged = True
                break
        trace.append(v)
        if progress is not None:
            _emit_progress(progress, level_index, it, v)
        # the improvement window looks at accepted values only, so a
        # bracketing run of rejections cannot fake convergence
        w = cfg.tolerance_window
        if len(accepted) > w:
            drop = accepted[-w - 1] - accepted[-1]
            if drop <= cfg.tolerance * max(abs(accepted[-w - 1]), 1e-12):
                converged = True
                break
    return p, trace, converged


def _emit_progress(progress, level, it, value):
    if callable(progress):
        progress(level, it, value)
    else:
        progress.write(f"level={level} iter={it} metric={value:.10g}\n")


def _initial_transform(stage, geometry, grid_spacing_vox):
    n = geometry.ndim
    if stage.transform == "translation":
        return TranslationTransform(np.zeros(n))
    if stage.transform == "affine":
        center = np.asarray(geometry.origin) + 0.5 * np.asarray(geometry.extent())
        return AffineTransform.identity(n, center=center)
    spacing_mm = tuple(grid_spacing_vox * s for s in geometry.spacing)
    return BSplineTransform.for_domain(geometry, spacing_mm)


def _nmi_level_ranges(fixed_rep, moving_rep):
    fv = _rep_values(fixed_rep)
    mv = _rep_values(moving_rep)
    return [
        (
            (float(fv[..., c].min()), float(fv[..., c].max())),
            (float(mv[..., c].min()), float(mv[..., c].max())),
        )
        for c in range(fv.shape[-1])
    ]


def optimize_level(cfg, fixed, moving, t0, prev=(), progress=None, level_index=0):
    """Optimize one transform on one resolution level.

    ``fixed`` and ``moving`` are the level's volumes (already
    downsampled by the caller or full resolution); ``t0`` provides both
    the model and the starting parameters. Returns the optimized
    transform together with the metric trace and a convergence flag.
    """
    fixed_rep = _stage_representation(fixed, cfg)
    moving_rep = _stage_representation(moving, cfg)
    problem = _LevelProblem(cfg, fixed_rep, moving_rep, t0, prev=prev, mask=cfg.mask)
    step0 = cfg.step_initial
    if step0 is None:
        step0 = 2.0 * float(np.mean(fixed.geometry.spacing))
    p, trace, converged = _descend(
        problem, t0.parameters, cfg, cfg.iterations[-1], step0, progress, level_index
    )
    return t0.with_parameters(p), trace, converged


def register(pipeline, fixed, moving, progress=None):
    """Run a multi-stage pipeline and return the composed result.

    Stage failures abort the run with the partial result attached to the
    raised error as ``partial_result``.
    """
    if not pipeline:
        raise ConfigError("pipeline must contain at least one stage")
    t_start = time.perf_counter()
    solved = []
    traces = []
    all_converged = True
    n_bspline = sum(1 for s in pipeline if s.transform == "bspline")
    bspline_seen = 0
    level_counter = 0
    try:
        for stage in pipeline:
            if stage.transform == "bspline":
                spacing_vox = stage.grid_spacing
                if spacing_vox is None:
                    spacing_vox = 8.0 * 2 ** (n_bspline - 1 - bspline_seen)
                bspline_seen += 1
            else:
                spacing_vox = None
            active = _initial_transform(stage, fixed.geometry, spacing_vox)
            # Later stages see the moving image pre-warped by everything
            # solved so far, so each level problem optimizes its own
            # transform alone and the composition stays in the bookkeeping.
            # Filling with the image's own background level keeps the
            # warp from cutting a false edge along the domain boundary.
            if solved:
                corners = moving.values[np.ix_(*[[0, -1]] * moving.geometry.ndim)]
                moving_stage = resample(
                    moving, moving.geometry, compose(*solved),
                    fill=float(np.median(corners)),
                )
            else:
                moving_stage = moving
            stage_trace = []
            for li, factor in enumerate(stage.levels):
                f_lvl = downsample(fixed, factor)
                m_lvl = downsample(moving_stage, factor)
                mask_lvl = (
                    downsample_labels(stage.mask, factor) if stage.mask is not None else None
                )
                fixed_rep = _stage_representation(f_lvl, stage, level_factor=factor)
                moving_rep = _stage_representation(m_lvl, stage, level_factor=factor)
                problem = _LevelProblem(
                    stage, fixed_rep, moving_rep, active, mask=mask_lvl
                )
                step0 = stage.step_initial
                if step0 is None:
                    step0 = 2.0 * float(np.mean(f_lvl.geometry.spacing))
                p, trace, converged = _descend(
                    problem, active.parameters, stage, stage.iterations[li], step0,
                    progress, level_counter,
                )
                active = active.with_parameters(p)
                stage_trace.append(tuple(trace))
                all_converged = all_converged and converged
                level_counter += 1
            solved.append(active)
            traces.append(tuple(stage_trace))
    except FieldregError as err:
        err.partial_result = RegistrationResult(
            transform=compose(*solved) if solved else None,
            metric_trace=tuple(traces),
            elapsed_seconds=time.perf_counter() - t_start,
            converged=False,
        )
        raise
    return RegistrationResult(
        transform=compose(*solved),
        metric_trace=tuple(traces),
        elapsed_seconds=time.perf_counter() - t_start,
        converged=all_converged,
    )
