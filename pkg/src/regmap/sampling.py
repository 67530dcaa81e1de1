"""Ground-truth registration error at landmarks and sample generation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .pooling import box_voxels
from .volume import DisplacementField, LandmarkPairSet, Volume, sample_dvf

__all__ = [
    "CLASS_NAMES",
    "CLASS_THRESHOLDS_MM",
    "Sample",
    "class_of",
    "landmark_error",
    "expand_neighborhood",
    "dense_from_truth",
]

CLASS_NAMES = ("correct", "poor", "wrong")
CLASS_THRESHOLDS_MM = (3.0, 6.0)

# Neighborhood boxes (mm): landmarks in the "correct" class contribute from a
# smaller box to counter the class imbalance of typical registration errors.
NEIGHBORHOOD_MM = (10.0, 10.0, 7.5)
NEIGHBORHOOD_CORRECT_MM = (5.0, 5.0, 2.5)


def class_of(y):
    """Error class index: 0 in [0,3), 1 in [3,6), 2 in [6,inf) mm."""
    y = np.asarray(y, dtype=float)
    idx = np.digitize(y, CLASS_THRESHOLDS_MM)
    return int(idx) if idx.ndim == 0 else idx


@dataclass
class Sample:
    pair_id: str
    voxel: tuple[int, int, int]
    world: np.ndarray     # mm
    y: float              # registration error, mm
    label: int            # class index into CLASS_NAMES

    def __post_init__(self):
        if self.y < 0:
            raise ValueError("error must be nonnegative")


def landmark_error(pairs: LandmarkPairSet,
                   t_b: DisplacementField) -> list[tuple[np.ndarray, float]]:
    """Residual Euclidean distance per landmark: ||T_b(x_F) - x_M||."""
    lo = t_b.origin
    hi = t_b.origin + (np.array(t_b.dims) - 1) * t_b.spacing
    out = []
    for xf, xm in zip(pairs.fixed_points, pairs.moving_points):
        if np.any(xf < lo - 1e-9) or np.any(xf > hi + 1e-9):
            raise ValueError(f"landmark {xf} outside field geometry")
        mapped = xf + sample_dvf(t_b, xf)
        out.append((xf, float(np.linalg.norm(mapped - xm))))
    return out


def expand_neighborhood(errors, geometry, pair_id: str = "",
                        box_mm=NEIGHBORHOOD_MM,
                        box_correct_mm=NEIGHBORHOOD_CORRECT_MM) -> list[Sample]:
    """Expand per-landmark errors into voxel samples around each landmark.

    Every voxel center inside the class-dependent box inherits the landmark
    error unchanged (constant-error assumption).  Boxes are clipped at the
    image border; overlapping boxes from different landmarks keep their
    duplicate voxels.
    """
    dims = np.array(geometry.dims)
    spacing = np.asarray(geometry.spacing, float)
    origin = np.asarray(geometry.origin, float)
    samples = []
    for xf, y in errors:
        label = class_of(y)
        box = box_correct_mm if label == 0 else box_mm
        radii = box_voxels(box, spacing) // 2
        center = np.rint((np.asarray(xf, float) - origin) / spacing).astype(int)
        lo = np.maximum(center - radii, 0)
        hi = np.minimum(center + radii, dims - 1)
        for ix in range(lo[0], hi[0] + 1):
            for iy in range(lo[1], hi[1] + 1):
                for iz in range(lo[2], hi[2] + 1):
                    world = origin + np.array([ix, iy, iz]) * spacing
                    samples.append(Sample(pair_id, (ix, iy, iz), world,
                                          float(y), label))
    return samples


def dense_from_truth(err: Volume, stride: int, pair_id: str = "") -> list[Sample]:
    """Samples on a regular voxel lattice with y from a dense error map."""
    if stride < 1:
        raise ValueError("stride must be >= 1")
    data = np.asarray(err.data, float)
    samples = []
    for ix in range(0, err.dims[0], stride):
        for iy in range(0, err.dims[1], stride):
            for iz in range(0, err.dims[2], stride):
                y = float(data[ix, iy, iz])
                world = err.origin + np.array([ix, iy, iz]) * err.spacing
                samples.append(Sample(pair_id, (ix, iy, iz), world, y,
                                      class_of(y)))
    return samples
