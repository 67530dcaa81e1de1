"""Intensity-derived feature maps: MIND, local NMI/PMI, SID, GID, NC."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter, gaussian_filter1d

from .pooling import box_voxels
from .volume import FeatureMap, Volume

__all__ = [
    "MindPattern",
    "mind_descriptor",
    "mind_distance",
    "local_mi",
    "local_mi_at",
    "sid_gid",
    "nc",
]

# Reference physical extent of the sparse self-similarity search region:
# 7 x 7 x 3 voxels at 0.78 x 0.78 x 2.5 mm spacing.
_MIND_EXTENT_MM = (5.46, 5.46, 7.5)


def _reference_offsets() -> np.ndarray:
    """82 sparse offsets inside the 7 x 7 x 3 reference box.

    The central slice contributes its full 7 x 7 ring minus the center; each
    outer slice contributes a dense 3 x 3 core plus 8 far ring points.
    """
    offsets = []
    for dx in range(-3, 4):
        for dy in range(-3, 4):
            if (dx, dy) != (0, 0):
                offsets.append((dx, dy, 0))
    ring = [(-3, 0), (3, 0), (0, -3), (0, 3), (-3, -3), (-3, 3), (3, -3), (3, 3)]
    for dz in (-1, 1):
        for dx in range(-1, 2):
            for dy in range(-1, 2):
                offsets.append((dx, dy, dz))
        for dx, dy in ring:
            offsets.append((dx, dy, dz))
    return np.array(offsets, dtype=int)


@dataclass
class MindPattern:
    """Sparse offset pattern and patch-distance estimator settings."""

    offsets: np.ndarray = field(default_factory=_reference_offsets)
    patch_sigma_vox: float = 0.5

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=int)
        if self.offsets.shape != (82, 3):
            raise ValueError("pattern must hold exactly 82 offsets")

    @classmethod
    def default(cls) -> "MindPattern":
        return cls()

    @classmethod
    def for_spacing(cls, spacing) -> "MindPattern":
        """Rescale the reference pattern to cover ~5.5 x 5.5 x 7.5 mm.

        Offsets are scaled per axis to the nearest odd voxel box covering the
        reference extent and rounded; coincident offsets are kept so the
        descriptor length stays 82.
        """
        radii = box_voxels(_MIND_EXTENT_MM, spacing) // 2
        ref_radii = np.array([3, 3, 1], dtype=float)
        scale = radii / ref_radii
        scaled = np.rint(_reference_offsets() * scale).astype(int)
        return cls(offsets=scaled)


def _shifted(data: np.ndarray, offset, pad) -> np.ndarray:
    """Edge-clamped shift of a pre-padded array."""
    sl = tuple(slice(pad[a] + offset[a], pad[a] + offset[a] + data.shape[a] - 2 * pad[a])
               for a in range(3))
    return data[sl]


def mind_descriptor(vol: Volume, pattern: MindPattern) -> np.ndarray:
    """82-component MIND descriptor per voxel, shape (82,) + dims, max 1.

    Patch distances are Gaussian-smoothed squared differences against each
    offset; the self-similarity bandwidth is the per-voxel mean patch
    distance and the descriptor is normalized to its per-voxel maximum.
    """
    data = np.asarray(vol.data, dtype=float)
    pad = np.abs(pattern.offsets).max(axis=0)
    padded = np.pad(data, [(p, p) for p in pad], mode="edge")
    sigma = pattern.patch_sigma_vox

    dists = np.empty((len(pattern.offsets),) + data.shape, dtype=np.float32)
    for k, off in enumerate(pattern.offsets):
        d = (data - _shifted(padded, off, pad)) ** 2
        dists[k] = gaussian_filter(d, sigma=sigma, mode="nearest")

    bandwidth = dists.mean(axis=0)
    np.maximum(bandwidth, 1e-12, out=bandwidth)
    desc = np.exp(-dists / bandwidth)
    desc /= desc.max(axis=0)
    return desc


def mind_distance(fixed: Volume, warped: Volume,
                  pattern: MindPattern | None = None,
                  name: str = "mind") -> FeatureMap:
    """L1 distance between the MIND descriptors of two aligned volumes."""
    if tuple(fixed.dims) != tuple(warped.dims):
        raise ValueError("volumes must share geometry")
    if pattern is None:
        pattern = MindPattern.for_spacing(fixed.spacing)
    df = mind_descriptor(fixed, pattern)
    dm = mind_descriptor(warped, pattern)
    dist = np.abs(df - dm).sum(axis=0, dtype=np.float64)
    return FeatureMap(name, fixed.like(dist), units="")


# ---------------------------------------------------------------------------
# Local normalized mutual information

def _entropy(p: np.ndarray) -> float:
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def _mi_pair(f: np.ndarray, m: np.ndarray, bins: int) -> tuple[float, float]:
    """(NMI, PMI) of two flat sample vectors with equal-width binning."""
    flo, fhi = f.min(), f.max()
    mlo, mhi = m.min(), m.max()
    bf = np.zeros(f.shape, dtype=np.intp) if fhi <= flo else \
        np.minimum(((f - flo) * (bins / (fhi - flo))).astype(np.intp), bins - 1)
    bm = np.zeros(m.shape, dtype=np.intp) if mhi <= mlo else \
        np.minimum(((m - mlo) * (bins / (mhi - mlo))).astype(np.intp), bins - 1)
    joint = np.bincount(bf * bins + bm, minlength=bins * bins).astype(float)
    joint /= f.size
    h_fm = _entropy(joint)
    h_f = _entropy(joint.reshape(bins, bins).sum(axis=1))
    h_m = _entropy(joint.reshape(bins, bins).sum(axis=0))
    if h_fm <= 0:
        return 2.0, 1.0  # both boxes constant: perfectly predictable
    nmi = (h_f + h_m) / h_fm
    hmin = min(h_f, h_m)
    if hmin <= 0:
        return nmi, 0.0  # one box constant: zero mutual information
    pmi = (h_f + h_m - h_fm) / hmin
    return nmi, pmi


def _check_box(box_mm, spacing):
    if box_mm <= 0:
        raise ValueError("box diameter must be positive")
    if np.any(box_mm < np.asarray(spacing, float)):
        raise ValueError("box is smaller than one voxel in some axis")


def local_mi_at(fixed: Volume, warped: Volume, box_mm, binning: str,
                locations, bins: int = 32) -> tuple[np.ndarray, np.ndarray]:
    """NMI and PMI at selected voxel locations (N, 3).

    ``binning`` is "constant" (equal-width, ``bins`` bins) or "sturges"
    (floor(log2(n) + 1) bins for n samples in the clipped box).
    """
    _check_box(box_mm, fixed.spacing)
    if binning not in ("constant", "sturges"):
        raise ValueError(f"unknown binning strategy {binning!r}")
    radii = box_voxels(box_mm, fixed.spacing) // 2
    fdat = np.asarray(fixed.data, float)
    mdat = np.asarray(warped.data, float)
    dims = fdat.shape
    locations = np.asarray(locations, dtype=np.intp)
    nmi = np.empty(len(locations))
    pmi = np.empty(len(locations))
    for s, (ix, iy, iz) in enumerate(locations):
        sl = tuple(slice(max(c - r, 0), min(c + r, dims[a] - 1) + 1)
                   for a, (c, r) in enumerate(zip((ix, iy, iz), radii)))
        f = fdat[sl].reshape(-1)
        m = mdat[sl].reshape(-1)
        b = bins if binning == "constant" else max(int(np.log2(f.size)) + 1, 1)
        nmi[s], pmi[s] = _mi_pair(f, m, b)
    return nmi, pmi


def local_mi(fixed: Volume, warped: Volume, box_mm, binning: str = "constant",
             bins: int = 32) -> tuple[FeatureMap, FeatureMap]:
    """Dense NMI and PMI maps over sliding physical boxes."""
    dims = fixed.dims
    grid = np.stack(np.meshgrid(*[np.arange(d) for d in dims], indexing="ij"),
                    axis=-1).reshape(-1, 3)
    nmi, pmi = local_mi_at(fixed, warped, box_mm, binning, grid, bins=bins)
    suffix = "s" if binning == "sturges" else ""
    return (FeatureMap(f"nmi{suffix}{box_mm:g}", fixed.like(nmi.reshape(dims))),
            FeatureMap(f"pmi{suffix}{box_mm:g}", fixed.like(pmi.reshape(dims))))


def sturges_bins(n: int) -> int:
    """Number of histogram bins for n samples: floor(log2(n) + 1)."""
    return max(int(np.log2(n)) + 1, 1)


# ---------------------------------------------------------------------------
# Modality-dependent features

def sid_gid(fixed: Volume, warped: Volume, sigma_mm) -> tuple[FeatureMap, FeatureMap]:
    """Gaussian-smoothed squared difference and its gradient magnitude.

    SID = G_sigma(d^2), GID = ||grad(G_sigma(d))||, d = fixed - warped, with
    Gaussian and Gaussian-derivative kernels parameterized in mm.
    """
    if sigma_mm <= 0:
        raise ValueError("sigma must be positive")
    d = np.asarray(fixed.data, float) - np.asarray(warped.data, float)
    sigma_vox = sigma_mm / fixed.spacing
    sid = gaussian_filter(d * d, sigma=sigma_vox, mode="nearest")
    grad_sq = np.zeros_like(d)
    for a in range(3):
        g = d
        for b in range(3):
            g = gaussian_filter1d(g, sigma=sigma_vox[b], axis=b,
                                  order=1 if b == a else 0, mode="nearest")
        grad_sq += (g / fixed.spacing[a]) ** 2
    return (FeatureMap(f"sid{sigma_mm:g}", fixed.like(sid)),
            FeatureMap(f"gid{sigma_mm:g}", fixed.like(np.sqrt(grad_sq))))


def nc(fixed: Volume, warped: Volume, box_mm, name: str | None = None) -> FeatureMap:
    """Pearson correlation over the clipped physical box around each voxel.

    Defined as 0 where either box variance falls below 1e-12 (flat patch).
    """
    from .pooling import box_mean

    if np.any(box_voxels(box_mm, fixed.spacing) < 2):
        raise ValueError("box must span at least 2 voxels per axis")
    f = np.asarray(fixed.data, float)
    m = np.asarray(warped.data, float)
    sp = fixed.spacing
    ef = box_mean(f, sp, box_mm)
    em = box_mean(m, sp, box_mm)
    eff = box_mean(f * f, sp, box_mm)
    emm = box_mean(m * m, sp, box_mm)
    efm = box_mean(f * m, sp, box_mm)
    var_f = np.maximum(eff - ef * ef, 0.0)
    var_m = np.maximum(emm - em * em, 0.0)
    cov = efm - ef * em
    ok = (var_f > 1e-12) & (var_m > 1e-12)
    r = np.zeros_like(cov)
    np.divide(cov, np.sqrt(var_f * var_m), out=r, where=ok)
    np.clip(r, -1.0, 1.0, out=r)
    return FeatureMap(name or f"nc{box_mm:g}", fixed.like(r))
