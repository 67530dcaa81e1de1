"""Registration-derived feature maps: ensemble spread, bias, CVH, Jacobian."""

from __future__ import annotations

import numpy as np

from .volume import DisplacementField, FeatureMap, Volume

__all__ = ["std_dvf", "bias_map", "cvh", "cvh_from_histograms", "jacobian_det"]


def _check_ensemble(ensemble):
    if len(ensemble) < 2:
        raise ValueError("ensemble needs at least 2 members")
    first = ensemble[0]
    for f in ensemble[1:]:
        if not first.same_geometry(f):
            raise ValueError("ensemble members must share geometry")
    return first


def std_dvf(ensemble: list[DisplacementField], name: str = "stdT") -> FeatureMap:
    """Per-voxel sample standard deviation of an ensemble of transforms.

    sqrt( 1/(P-1) * sum_i ||u_i - mean(u)||^2 ), Euclidean norm over the
    3-vector difference.  Serves both the initial-perturbation and the
    base-perturbation ensembles.
    """
    first = _check_ensemble(ensemble)
    stack = np.stack([f.vectors for f in ensemble], axis=0)
    mean = stack.mean(axis=0)
    sq = np.sum((stack - mean) ** 2, axis=-1).sum(axis=0) / (len(ensemble) - 1)
    vol = Volume(np.sqrt(sq), first.spacing.copy(), first.origin.copy())
    return FeatureMap(name, vol, units="mm")


def bias_map(t_b: DisplacementField, ensemble: list[DisplacementField],
             name: str = "biasT") -> FeatureMap:
    """Per-voxel distance between the base transform and the ensemble mean."""
    first = _check_ensemble(ensemble)
    if not t_b.same_geometry(first):
        raise ValueError("base transform must share the ensemble geometry")
    mean = np.mean([f.vectors for f in ensemble], axis=0)
    dist = np.linalg.norm(t_b.vectors - mean, axis=-1)
    vol = Volume(dist, first.spacing.copy(), first.origin.copy())
    return FeatureMap(name, vol, units="mm")


def cvh_from_histograms(counts: np.ndarray, epsilon: float) -> np.ndarray:
    """Coefficient of variation per histogram bin: std / (mean + epsilon).

    ``counts`` has shape (P, B, B); the std uses the n-1 denominator.
    """
    counts = np.asarray(counts, dtype=float)
    if counts.shape[0] < 2:
        raise ValueError("need at least 2 histograms")
    return counts.std(axis=0, ddof=1) / (counts.mean(axis=0) + epsilon)


def _bin_indices(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    if hi <= lo:
        return np.zeros(values.shape, dtype=np.intp)
    idx = ((values - lo) / (hi - lo) * bins).astype(np.intp)
    return np.clip(idx, 0, bins - 1)


def cvh(fixed: Volume, warped_ensemble: list[Volume], base_warped: Volume,
        bins: int = 32, epsilon: float = 5.0, name: str = "cvh") -> FeatureMap:
    """Coefficient of variation of joint histograms, mapped back to voxels.

    Joint histograms of (fixed, warped_i) are built over shared equal-width
    bins spanning the pooled intensity range of the fixed and base-warped
    volumes; the per-bin coefficient of variation is looked up per voxel via
    the intensity pair (fixed(x), base_warped(x)).
    """
    if len(warped_ensemble) < 2:
        raise ValueError("ensemble needs at least 2 members")
    if bins < 2:
        raise ValueError("need at least 2 bins")
    fdat = np.asarray(fixed.data, float)
    bdat = np.asarray(base_warped.data, float)
    lo = min(fdat.min(), bdat.min())
    hi = max(fdat.max(), bdat.max())
    fbin = _bin_indices(fdat, lo, hi, bins).reshape(-1)

    counts = np.empty((len(warped_ensemble), bins, bins))
    for i, w in enumerate(warped_ensemble):
        wbin = _bin_indices(np.asarray(w.data, float), lo, hi, bins).reshape(-1)
        joint = np.bincount(fbin * bins + wbin, minlength=bins * bins)
        counts[i] = joint.reshape(bins, bins)
    table = cvh_from_histograms(counts, epsilon)

    bbin = _bin_indices(bdat, lo, hi, bins)
    values = table[fbin.reshape(fdat.shape), bbin]
    vol = Volume(values, fixed.spacing.copy(), fixed.origin.copy())
    return FeatureMap(name, vol, units="")


def jacobian_det(dvf: DisplacementField, name: str = "jac") -> FeatureMap:
    """det(I + du/dx) per voxel; central differences in mm, one-sided at edges.

    Values near 1 indicate volume preservation; values below 0 flag folding.
    """
    if min(dvf.dims) < 3:
        raise ValueError("need at least 3 voxels per axis")
    sp = dvf.spacing
    J = np.empty(dvf.dims + (3, 3))
    for c in range(3):
        gx, gy, gz = np.gradient(dvf.vectors[..., c], sp[0], sp[1], sp[2])
        J[..., c, 0], J[..., c, 1], J[..., c, 2] = gx, gy, gz
    J[..., 0, 0] += 1.0
    J[..., 1, 1] += 1.0
    J[..., 2, 2] += 1.0
    det = (J[..., 0, 0] * (J[..., 1, 1] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 1])
           - J[..., 0, 1] * (J[..., 1, 0] * J[..., 2, 2] - J[..., 1, 2] * J[..., 2, 0])
           + J[..., 0, 2] * (J[..., 1, 0] * J[..., 2, 1] - J[..., 1, 1] * J[..., 2, 0]))
    vol = Volume(det, dvf.spacing.copy(), dvf.origin.copy())
    return FeatureMap(name, vol, units="")
