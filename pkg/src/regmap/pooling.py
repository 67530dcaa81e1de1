"""Physical-unit box pooling of feature maps and feature-vector assembly.

Box diameters are given in mm and converted per axis to the smallest odd
voxel count covering them.  Boxes are clipped at the image border; averages
divide by the clipped population.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import maximum_filter

from .volume import FeatureMap, Volume

__all__ = [
    "POOL_BOXES_MM",
    "MI_BOXES_MM",
    "SID_GID_SIGMAS_MM",
    "box_voxels",
    "integral_volume",
    "box_sum",
    "box_population",
    "avg_pool",
    "max_pool",
    "pool_feature",
    "pooled_names",
    "schema_columns",
    "assemble",
]

POOL_BOXES_MM = (2, 5, 10, 15, 20, 25, 30, 35, 40)
MI_BOXES_MM = (5, 10, 15, 20, 25, 30, 35, 40)
SID_GID_SIGMAS_MM = (0.5, 1, 2, 4, 8, 16)

POOLED_FEATURES = ("mind", "stdT", "stdTL", "cvh", "biasT", "biasTL", "jac")


def box_voxels(box_mm, spacing) -> np.ndarray:
    """Per axis, the smallest odd voxel count whose extent covers box_mm."""
    if np.any(np.asarray(box_mm) <= 0):
        raise ValueError("box diameter must be positive")
    n = np.ceil(np.asarray(box_mm, float) / np.asarray(spacing, float)).astype(int)
    n = np.maximum(n, 1)
    return n + (1 - n % 2)


def integral_volume(values: np.ndarray) -> np.ndarray:
    """3D summed-area table with one-voxel zero padding on the low sides."""
    values = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(values)):
        raise ValueError("integral volume requires finite values")
    table = np.zeros(tuple(np.array(values.shape) + 1))
    table[1:, 1:, 1:] = values
    for a in range(3):
        np.cumsum(table, axis=a, out=table)
    return table


def _axis_bounds(dim: int, radius: int):
    i = np.arange(dim)
    lo = np.maximum(i - radius, 0)
    hi = np.minimum(i + radius, dim - 1)
    return lo, hi


def box_sum(table: np.ndarray, radii) -> np.ndarray:
    """Clipped box sums for every voxel via 8-corner inclusion-exclusion."""
    dims = tuple(np.array(table.shape) - 1)
    bounds = [_axis_bounds(dims[a], int(radii[a])) for a in range(3)]
    # Broadcastable index arrays: lo is inclusive, so address table[lo] / table[hi+1].
    ax = [(bounds[a][0], bounds[a][1] + 1) for a in range(3)]
    shapes = [(-1, 1, 1), (1, -1, 1), (1, 1, -1)]
    lo = [ax[a][0].reshape(shapes[a]) for a in range(3)]
    hi = [ax[a][1].reshape(shapes[a]) for a in range(3)]
    out = (table[hi[0], hi[1], hi[2]] - table[lo[0], hi[1], hi[2]]
           - table[hi[0], lo[1], hi[2]] - table[hi[0], hi[1], lo[2]]
           + table[lo[0], lo[1], hi[2]] + table[lo[0], hi[1], lo[2]]
           + table[hi[0], lo[1], lo[2]] - table[lo[0], lo[1], lo[2]])
    return out


def box_population(dims, radii) -> np.ndarray:
    """Number of in-bounds voxels of the clipped box centered at each voxel."""
    counts = []
    for a in range(3):
        lo, hi = _axis_bounds(dims[a], int(radii[a]))
        counts.append(hi - lo + 1)
    return (counts[0][:, None, None] * counts[1][None, :, None]
            * counts[2][None, None, :])


def box_mean(values: np.ndarray, spacing, box_mm) -> np.ndarray:
    radii = box_voxels(box_mm, spacing) // 2
    table = integral_volume(values)
    return box_sum(table, radii) / box_population(values.shape, radii)


def avg_pool(fmap: FeatureMap, box_mm) -> FeatureMap:
    """Mean over the clipped physical box around every voxel."""
    vol = fmap.volume
    data = box_mean(np.asarray(vol.data, float), vol.spacing, box_mm)
    return FeatureMap(f"{fmap.name}_avg{box_mm:g}", vol.like(data), fmap.units)


def max_pool(fmap: FeatureMap, box_mm) -> FeatureMap:
    """Maximum over the clipped physical box (separable sliding maxima)."""
    vol = fmap.volume
    size = tuple(box_voxels(box_mm, vol.spacing))
    data = maximum_filter(np.asarray(vol.data, float), size=size, mode="nearest")
    return FeatureMap(f"{fmap.name}_max{box_mm:g}", vol.like(data), fmap.units)


def pooled_names(name: str) -> list[str]:
    return ([f"{name}_avg{b:g}" for b in POOL_BOXES_MM]
            + [f"{name}_max{b:g}" for b in POOL_BOXES_MM])


def pool_feature(fmap: FeatureMap) -> list[FeatureMap]:
    """The 18-map pool of a mother feature: 9 averages plus 9 maxima."""
    return ([avg_pool(fmap, b) for b in POOL_BOXES_MM]
            + [max_pool(fmap, b) for b in POOL_BOXES_MM])


# ---------------------------------------------------------------------------
# Feature schemas

def _mi_columns() -> list[str]:
    cols = []
    for prefix in ("nmi", "pmi", "nmis", "pmis"):
        cols += [f"{prefix}{b:g}" for b in MI_BOXES_MM]
    return cols


def _md_columns() -> list[str]:
    return ([f"nc{b:g}" for b in MI_BOXES_MM]
            + [f"sid{s:g}" for s in SID_GID_SIGMAS_MM]
            + [f"gid{s:g}" for s in SID_GID_SIGMAS_MM])


def schema_columns(schema: str) -> list[str]:
    """Ordered feature column names of a named schema."""
    intensity = pooled_names("mind") + _mi_columns()
    registration = []
    for name in ("stdT", "stdTL", "cvh", "biasT", "biasTL", "jac"):
        registration += pooled_names(name)
    if schema == "intensity":
        return intensity
    if schema == "registration":
        return registration
    if schema == "combined":
        return intensity + registration
    if schema == "combined+md":
        return intensity + registration + _md_columns()
    if schema == "no-pooling":
        return ["mind", "pmis15", "stdT", "stdTL", "cvh", "biasT", "biasTL", "jac"]
    if schema.startswith("single:"):
        name = schema.split(":", 1)[1]
        if name in POOLED_FEATURES:
            return pooled_names(name)
        if name == "mi":
            return _mi_columns()
        if name == "nc":
            return [f"nc{b:g}" for b in MI_BOXES_MM]
        if name == "sidgid":
            return ([f"sid{s:g}" for s in SID_GID_SIGMAS_MM]
                    + [f"gid{s:g}" for s in SID_GID_SIGMAS_MM])
        raise ValueError(f"unknown single-feature schema {name!r}")
    raise ValueError(f"unknown schema {schema!r}")


def assemble(maps, locations, columns, extra=None) -> np.ndarray:
    """Feature matrix (len(locations), len(columns)) in schema order.

    ``maps`` is a dict or list of FeatureMap keyed by column name; ``extra``
    optionally supplies per-location value vectors for columns that are not
    backed by a dense map (e.g. local MI computed only at sample points).
    """
    if not isinstance(maps, dict):
        maps = {m.name: m for m in maps}
    extra = extra or {}
    locations = np.asarray(locations, dtype=np.intp)
    X = np.empty((len(locations), len(columns)))
    geom = None
    for j, col in enumerate(columns):
        if col in extra:
            vals = np.asarray(extra[col], dtype=float)
            if vals.shape != (len(locations),):
                raise ValueError(f"extra column {col!r} has wrong length")
            X[:, j] = vals
            continue
        if col not in maps:
            raise ValueError(f"schema requires missing map {col!r}")
        fmap = maps[col]
        if geom is None:
            geom = fmap.volume
        elif fmap.volume.dims != geom.dims:
            raise ValueError("feature maps must share geometry")
        X[:, j] = fmap.values[locations[:, 0], locations[:, 1], locations[:, 2]]
    return X
