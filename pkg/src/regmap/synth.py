"""Synthetic phantoms and smooth random deformations with exact ground truth."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .volume import DisplacementField, Volume

__all__ = ["generate_phantom", "generate_random_dvf", "true_error_map"]


def generate_phantom(dims, spacing, seed, intensity_range=(0.0, 1000.0)) -> Volume:
    """Deterministic phantom with tubes, blobs and a homogeneous corner.

    The volume mixes a smooth random background with tube-like and blob-like
    structures; one corner is blended towards a constant so homogeneous-area
    behaviour is exercised downstream.
    """
    dims = tuple(int(d) for d in dims)
    if min(dims) < 16:
        raise ValueError("phantom dims must be at least 16 per axis")
    spacing = np.asarray(spacing, dtype=float)
    rng = np.random.default_rng(seed)
    lo, hi = intensity_range
    span = hi - lo

    axes = [spacing[a] * np.arange(dims[a]) for a in range(3)]
    extent = np.array([ax[-1] for ax in axes])
    xx, yy, zz = np.meshgrid(*axes, indexing="ij")

    # Smooth background around mid intensity.
    noise = rng.standard_normal(dims)
    bg = gaussian_filter(noise, sigma=12.0 / spacing, mode="nearest")
    bg = bg / max(np.abs(bg).max(), 1e-12)
    data = lo + 0.45 * span + 0.15 * span * bg

    # Blob-like structures (Gaussian bumps, mixed sign).
    for _ in range(8):
        center = rng.uniform(0.1, 0.9, size=3) * extent
        radius = rng.uniform(4.0, 12.0)
        amp = rng.uniform(0.25, 0.45) * span * rng.choice([-1.0, 1.0])
        d2 = (xx - center[0]) ** 2 + (yy - center[1]) ** 2 + (zz - center[2]) ** 2
        data += amp * np.exp(-d2 / (2 * radius ** 2))

    # Tube-like structures: bright cylinders along z with sinusoidal centerlines.
    for _ in range(4):
        base = rng.uniform(0.15, 0.85, size=2) * extent[:2]
        wob = rng.uniform(3.0, 8.0, size=2)
        lam = rng.uniform(0.5, 1.5) * extent[2] + 1e-6
        phase = rng.uniform(0, 2 * np.pi, size=2)
        radius = rng.uniform(2.0, 5.0)
        cx = base[0] + wob[0] * np.sin(2 * np.pi * zz / lam + phase[0])
        cy = base[1] + wob[1] * np.sin(2 * np.pi * zz / lam + phase[1])
        d2 = (xx - cx) ** 2 + (yy - cy) ** 2
        data += 0.4 * span * np.exp(-d2 / (2 * radius ** 2))

    # Homogeneous corner region, smoothly blended in.
    edge = 0.35 * extent
    mask = 1.0
    for ax, e in zip((xx, yy, zz), edge):
        mask = mask * 0.5 * (1.0 - np.tanh((ax - e) / 4.0))
    data = (1.0 - mask) * data + mask * (lo + 0.5 * span)

    np.clip(data, lo, hi, out=data)
    return Volume(data, spacing, np.zeros(3))


def generate_random_dvf(geometry, amplitude, sigma_mm, seed) -> DisplacementField:
    """Smooth random displacement field with max vector norm == amplitude.

    Uniform per-component noise in [-amplitude, amplitude] is convolved with
    a separable Gaussian of standard deviation ``sigma_mm`` (kernel radius
    3 sigma, edge-clamped) and rescaled so the maximum norm equals
    ``amplitude`` exactly.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be nonnegative")
    if sigma_mm <= 0:
        raise ValueError("sigma must be positive")
    dims = tuple(geometry.dims)
    spacing = np.asarray(geometry.spacing, dtype=float)
    origin = np.asarray(geometry.origin, dtype=float)
    if amplitude == 0:
        return DisplacementField(np.zeros(dims + (3,)), spacing, origin)

    rng = np.random.default_rng(seed)
    u = rng.uniform(-amplitude, amplitude, size=dims + (3,))
    sigma_vox = sigma_mm / spacing
    for c in range(3):
        u[..., c] = gaussian_filter(u[..., c], sigma=sigma_vox,
                                    mode="nearest", truncate=3.0)
    norms = np.linalg.norm(u, axis=-1)
    peak = norms.max()
    if peak > 0:
        u *= amplitude / peak
    return DisplacementField(u, spacing, origin)


def true_error_map(t_b: DisplacementField, t_true: DisplacementField) -> Volume:
    """Per-voxel Euclidean distance between two transforms (mm).

    With T(x) = x + u(x) on a shared grid this is just the norm of the
    difference of the displacement fields.
    """
    if not t_b.same_geometry(t_true):
        raise ValueError("displacement fields must share geometry")
    err = np.linalg.norm(t_b.vectors - t_true.vectors, axis=-1)
    return Volume(err, t_b.spacing.copy(), t_b.origin.copy())
