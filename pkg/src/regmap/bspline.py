"""Minimal multi-resolution B-spline registration with perturbable inits.

The engine minimises sum-of-squared-differences by gradient descent on the
coefficients of a cubic B-spline free-form deformation.  It is deliberately
small: its job is to supply ensembles of registrations whose optimum is
sensitive to initialization, not to compete with production registration
packages.  Externally produced displacement fields can be used instead at
every downstream interface.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import sparse
from scipy.ndimage import gaussian_filter, map_coordinates

from .volume import DisplacementField, Volume

__all__ = [
    "BSplineGrid",
    "RegConfig",
    "zero_grid",
    "grid_to_dvf",
    "perturb_grid",
    "register",
    "ensemble_initial",
    "ensemble_base",
]


@dataclass
class BSplineGrid:
    """Cubic B-spline control grid: coefficients are displacements in mm."""

    spacing: np.ndarray  # control-point spacing per axis, mm
    origin: np.ndarray   # world position of control point (0, 0, 0)
    coeffs: np.ndarray   # (gx, gy, gz, 3)

    def __post_init__(self):
        self.spacing = np.asarray(self.spacing, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if np.any(self.spacing <= 0):
            raise ValueError("control spacing must be positive")
        if not np.all(np.isfinite(self.coeffs)):
            raise ValueError("coefficients must be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.coeffs.shape[:3]

    def copy(self) -> "BSplineGrid":
        return BSplineGrid(self.spacing.copy(), self.origin.copy(),
                           self.coeffs.copy())


@dataclass
class RegConfig:
    resolutions: int = 2
    iterations: int = 30          # per resolution
    step_mm: float = 2.0          # initial step length of the descent
    sampling_fraction: float = 0.05
    control_spacing_mm: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.resolutions < 1:
            raise ValueError("resolutions must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.step_mm <= 0:
            raise ValueError("step size must be positive")
        if not 0 < self.sampling_fraction <= 1:
            raise ValueError("sampling fraction must be in (0, 1]")


def _bspline_weights(t: np.ndarray) -> tuple[np.ndarray, ...]:
    """Cubic B-spline basis values at fractional offset t in [0, 1)."""
    t2 = t * t
    t3 = t2 * t
    return ((1 - t) ** 3 / 6.0,
            (3 * t3 - 6 * t2 + 4) / 6.0,
            (-3 * t3 + 3 * t2 + 3 * t + 1) / 6.0,
            t3 / 6.0)


def zero_grid(geometry, control_spacing_mm) -> BSplineGrid:
    """All-zero control grid covering the geometry with one-cell margins."""
    spacing = np.full(3, float(control_spacing_mm)) \
        if np.isscalar(control_spacing_mm) else np.asarray(control_spacing_mm, float)
    extent = (np.array(geometry.dims) - 1) * np.asarray(geometry.spacing, float)
    dims = np.floor(extent / spacing).astype(int) + 5
    origin = np.asarray(geometry.origin, float) - spacing
    return BSplineGrid(spacing, origin, np.zeros(tuple(dims) + (3,)))


def _support(grid: BSplineGrid, points: np.ndarray):
    """Base control indices and per-axis weights for world points (N, 3)."""
    t = (points - grid.origin) / grid.spacing
    base = np.floor(t).astype(np.intp)
    frac = t - base
    gdims = grid.dims
    for a in range(3):
        if base[:, a].min() < 1 or base[:, a].max() > gdims[a] - 3:
            raise ValueError("B-spline grid does not cover the volume extent")
    weights = [np.stack(_bspline_weights(frac[:, a]), axis=0) for a in range(3)]
    return base, weights


def _support_matrix(grid: BSplineGrid, base, weights):
    """Sparse (n_points, n_controls) spline interpolation matrix.

    The matrix is constant for a fixed point set, so the descent loop can
    evaluate displacements as S @ coeffs and scatter point gradients back to
    the control grid as S.T @ residuals.
    """
    gx, gy, gz = grid.dims
    flats, ws = [], []
    for l in range(4):
        ix = base[:, 0] + (l - 1)
        for m in range(4):
            iy = base[:, 1] + (m - 1)
            for n in range(4):
                iz = base[:, 2] + (n - 1)
                flats.append((ix * gy + iy) * gz + iz)
                ws.append(weights[0][l] * weights[1][m] * weights[2][n])
    npts = base.shape[0]
    rows = np.tile(np.arange(npts), 64)
    return sparse.csr_matrix(
        (np.concatenate(ws), (rows, np.concatenate(flats))),
        shape=(npts, gx * gy * gz))


def _axis_weight_matrix(n: int, origin: float, step: float,
                        grid_origin: float, grid_spacing: float,
                        gdim: int) -> np.ndarray:
    """(n, gdim) cubic B-spline weights of n collinear evenly spaced points."""
    t = (origin + step * np.arange(n) - grid_origin) / grid_spacing
    base = np.floor(t).astype(np.intp)
    if base.min() < 1 or base.max() > gdim - 3:
        raise ValueError("B-spline grid does not cover the volume extent")
    w = _bspline_weights(t - base)
    W = np.zeros((n, gdim))
    rows = np.arange(n)
    for l in range(4):
        W[rows, base + (l - 1)] += w[l]
    return W


def grid_to_dvf(grid: BSplineGrid, geometry) -> DisplacementField:
    """Evaluate the free-form deformation at every voxel center.

    Voxel centers form a regular grid, so the tensor-product spline
    separates into three small per-axis weight matrices.
    """
    dims = tuple(geometry.dims)
    spacing = np.asarray(geometry.spacing, float)
    origin = np.asarray(geometry.origin, float)
    W = [_axis_weight_matrix(dims[a], origin[a], spacing[a], grid.origin[a],
                             grid.spacing[a], grid.dims[a]) for a in range(3)]
    u = np.einsum("ia,jb,kc,abcd->ijkd", W[0], W[1], W[2], grid.coeffs,
                  optimize=True)
    return DisplacementField(u, spacing, origin)


def perturb_grid(grid: BSplineGrid, range_mm, seed) -> BSplineGrid:
    """Add i.i.d. uniform [-range_mm, range_mm] offsets to every coefficient."""
    if range_mm < 0:
        raise ValueError("range must be nonnegative")
    out = grid.copy()
    if range_mm > 0:
        rng = np.random.default_rng(seed)
        out.coeffs += rng.uniform(-range_mm, range_mm, size=out.coeffs.shape)
    return out


# ---------------------------------------------------------------------------
# Registration

def _downsample(vol: Volume) -> Volume:
    sm = gaussian_filter(np.asarray(vol.data, float), sigma=1.0, mode="nearest")
    return Volume(sm[::2, ::2, ::2], vol.spacing * 2.0, vol.origin.copy())


def _pyramid(vol: Volume, levels: int) -> list[Volume]:
    out = [vol]
    for _ in range(levels - 1):
        out.append(_downsample(out[-1]))
    return out[::-1]  # coarsest first


def _sample_image(data, pts_idx):
    """Edge-clamped trilinear sampling at fractional index points (n, 3)."""
    return map_coordinates(data, pts_idx.T, order=1, mode="nearest")


def _level_cost(moving_data, moving_geom, fixed_vals, pts_world, S, coeffs):
    u = S @ coeffs.reshape(-1, 3)
    idx = (pts_world + u - moving_geom[1]) / moving_geom[0]
    r = _sample_image(moving_data, idx) - fixed_vals
    return float(np.mean(r * r))


def register(fixed: Volume, moving: Volume, cfg: RegConfig,
             init: BSplineGrid) -> BSplineGrid:
    """Multi-resolution SSD gradient descent from an initial control grid.

    The image pyramid is Gaussian with factor-2 downsampling; the control
    grid keeps its spacing across levels.  Within each resolution a fixed,
    seeded voxel subsample defines the cost, so the recorded cost trace is
    non-increasing over accepted (backtracked) steps.
    """
    grid = init.copy()
    if cfg.iterations == 0:
        return grid
    fixed_levels = _pyramid(fixed, cfg.resolutions)
    moving_levels = _pyramid(moving, cfg.resolutions)
    trace = []
    for level, (fl, ml) in enumerate(zip(fixed_levels, moving_levels)):
        grid = _register_level(fl, ml, cfg, grid, level, trace)
    grid.cost_trace = trace
    return grid


def _register_level(fixed: Volume, moving: Volume, cfg: RegConfig,
                    grid: BSplineGrid, level: int, trace: list) -> BSplineGrid:
    rng = np.random.default_rng([int(cfg.seed), level])
    nvox = int(np.prod(fixed.dims))
    n = max(64, min(nvox, int(round(cfg.sampling_fraction * nvox))))
    flat = rng.choice(nvox, size=n, replace=False) if n < nvox else np.arange(nvox)
    ijk = np.stack(np.unravel_index(flat, fixed.dims), axis=1)
    pts_world = fixed.origin + ijk * fixed.spacing
    fixed_vals = np.asarray(fixed.data, float).reshape(-1)[flat]

    mdata = np.asarray(moving.data, float)
    mgrad = np.stack(np.gradient(mdata, *moving.spacing), axis=-1)
    mgeom = (moving.spacing, moving.origin)

    base, weights = _support(grid, pts_world)
    S = _support_matrix(grid, base, weights)
    coeffs = grid.coeffs.copy()
    step = cfg.step_mm
    cost = _level_cost(mdata, mgeom, fixed_vals, pts_world, S, coeffs)
    if not np.isfinite(cost):
        raise ValueError("non-finite registration cost")
    trace.append(cost)

    for _ in range(cfg.iterations):
        u = S @ coeffs.reshape(-1, 3)
        idx = (pts_world + u - mgeom[1]) / mgeom[0]
        warped = _sample_image(mdata, idx)
        gvals = np.stack([_sample_image(mgrad[..., c], idx)
                          for c in range(3)], axis=1)
        r = warped - fixed_vals
        resg = (2.0 / n) * r[:, None] * gvals  # (n, 3)

        gradc = S.T @ resg
        gmax = np.abs(gradc).max()
        if gmax < 1e-14:
            break
        direction = gradc.reshape(grid.dims + (3,)) / gmax

        accepted = False
        while step > 1e-4:
            trial = coeffs - step * direction
            tc = _level_cost(mdata, mgeom, fixed_vals, pts_world, S, trial)
            if not np.isfinite(tc):
                raise ValueError("non-finite registration cost")
            if tc < cost:
                coeffs, cost = trial, tc
                trace.append(cost)
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    out = grid.copy()
    out.coeffs = coeffs
    return out


def _seed_list(seed) -> list[int]:
    return [int(s) for s in np.atleast_1d(seed)]


def ensemble_initial(fixed: Volume, moving: Volume, cfg: RegConfig,
                     P: int, range_mm, seed) -> list[DisplacementField]:
    """P full-schedule registrations from independently perturbed zero inits."""
    if P < 2:
        raise ValueError("ensemble size must be at least 2")
    fields = []
    for i in range(P):
        init = perturb_grid(zero_grid(fixed, cfg.control_spacing_mm), range_mm,
                            seed=_seed_list(seed) + [i])
        final = register(fixed, moving, cfg, init)
        fields.append(grid_to_dvf(final, fixed))
    return fields


def ensemble_base(fixed: Volume, moving: Volume, cfg: RegConfig,
                  t_b: BSplineGrid, P: int, range_mm, seed) -> list[DisplacementField]:
    """P single-resolution re-registrations from perturbations of the base."""
    if P < 2:
        raise ValueError("ensemble size must be at least 2")
    single = replace(cfg, resolutions=1)
    fields = []
    for i in range(P):
        init = perturb_grid(t_b, range_mm, seed=_seed_list(seed) + [i])
        final = register(fixed, moving, single, init)
        fields.append(grid_to_dvf(final, fixed))
    return fields
