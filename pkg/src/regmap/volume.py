"""3D scalar volumes, displacement fields and MetaImage I/O.

Conventions used throughout the package:

* arrays are indexed ``[ix, iy, iz]`` so axis 0 is x, matching the order of
  ``spacing`` and ``origin``;
* world coordinates are millimetres: ``world = origin + index * spacing``
  (axis aligned, no direction matrix);
* a displacement field stores ``u(x)`` in mm with the transform
  ``T(x) = x + u(x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Volume",
    "DisplacementField",
    "FeatureMap",
    "LandmarkPairSet",
    "FormatError",
    "read_mhd",
    "write_mhd",
    "read_landmarks",
    "write_landmarks",
    "trilinear_sample",
    "sample_dvf",
    "warp",
    "save_dvf",
    "load_dvf",
]


class FormatError(ValueError):
    """Raised for malformed or unsupported files."""


_MET_TO_DTYPE = {
    "MET_UCHAR": np.dtype("u1"),
    "MET_SHORT": np.dtype("<i2"),
    "MET_FLOAT": np.dtype("<f4"),
}
_DTYPE_TO_MET = {
    np.dtype("u1"): "MET_UCHAR",
    np.dtype("i2"): "MET_SHORT",
    np.dtype("f4"): "MET_FLOAT",
}


@dataclass
class Volume:
    """A 3D scalar grid with physical spacing and origin (mm)."""

    data: np.ndarray
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        self.spacing = np.asarray(self.spacing, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.data.ndim != 3:
            raise ValueError("volume data must be 3D")
        if self.spacing.shape != (3,) or self.origin.shape != (3,):
            raise ValueError("spacing and origin must be 3-vectors")
        if np.any(self.spacing <= 0):
            raise ValueError("spacing components must be strictly positive")
        if not np.all(np.isfinite(np.asarray(self.data, dtype=float))):
            raise ValueError("volume intensities must be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape

    def index_to_world(self, idx) -> np.ndarray:
        return self.origin + np.asarray(idx, dtype=float) * self.spacing

    def world_to_index(self, pts) -> np.ndarray:
        return (np.asarray(pts, dtype=float) - self.origin) / self.spacing

    def voxel_centers(self) -> np.ndarray:
        """World coordinates of all voxel centers, shape dims + (3,)."""
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a])
                for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def like(self, data) -> "Volume":
        """New volume on the same grid with different data."""
        return Volume(np.asarray(data), self.spacing.copy(), self.origin.copy())


@dataclass
class DisplacementField:
    """Per-voxel displacement u(x) in mm on a fixed-image grid."""

    vectors: np.ndarray  # (nx, ny, nz, 3)
    spacing: np.ndarray
    origin: np.ndarray

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        self.spacing = np.asarray(self.spacing, dtype=float)
        self.origin = np.asarray(self.origin, dtype=float)
        if self.vectors.ndim != 4 or self.vectors.shape[-1] != 3:
            raise ValueError("vectors must have shape (nx, ny, nz, 3)")
        if np.any(self.spacing <= 0):
            raise ValueError("spacing components must be strictly positive")
        if not np.all(np.isfinite(self.vectors)):
            raise ValueError("displacement vectors must be finite")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.vectors.shape[:3]

    def same_geometry(self, other) -> bool:
        return (self.dims == tuple(other.dims)
                and np.allclose(self.spacing, other.spacing)
                and np.allclose(self.origin, other.origin))

    def voxel_centers(self) -> np.ndarray:
        axes = [self.origin[a] + self.spacing[a] * np.arange(self.dims[a])
                for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def like(self, vectors) -> "DisplacementField":
        return DisplacementField(np.asarray(vectors), self.spacing.copy(),
                                 self.origin.copy())


@dataclass
class FeatureMap:
    """A named scalar map aligned with the fixed-image grid."""

    name: str
    volume: Volume
    units: str = ""

    @property
    def values(self) -> np.ndarray:
        return self.volume.data


@dataclass
class LandmarkPairSet:
    """Corresponding landmark locations in fixed/moving world coordinates."""

    fixed_points: np.ndarray   # (N, 3) mm
    moving_points: np.ndarray  # (N, 3) mm
    pair_id: str = ""

    def __post_init__(self):
        self.fixed_points = np.atleast_2d(np.asarray(self.fixed_points, dtype=float))
        self.moving_points = np.atleast_2d(np.asarray(self.moving_points, dtype=float))
        if len(self.fixed_points) == 0:
            raise ValueError("landmark set must be nonempty")
        if self.fixed_points.shape != self.moving_points.shape:
            raise ValueError("fixed and moving landmark lists differ in length")

    def __len__(self):
        return len(self.fixed_points)


# ---------------------------------------------------------------------------
# MetaImage I/O (supported subset, little endian)

_MANDATORY_KEYS = ("ObjectType", "NDims", "DimSize", "ElementSpacing",
                   "ElementType", "ElementDataFile")


def _parse_header(raw: bytes, path: Path):
    keys: dict[str, str] = {}
    offset = 0
    while True:
        nl = raw.find(b"\n", offset)
        if nl < 0:
            raise FormatError(f"{path}: header has no ElementDataFile line")
        line = raw[offset:nl].decode("ascii", errors="replace").strip()
        offset = nl + 1
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}: malformed header line {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in keys:
            raise FormatError(f"{path}: duplicate header key {key!r}")
        keys[key] = value
        if key == "ElementDataFile":
            break
    return keys, offset


def read_mhd(path) -> Volume:
    """Read a MetaImage volume (.mhd with detached raw, or local .mha)."""
    path = Path(path)
    raw = path.read_bytes()
    keys, data_offset = _parse_header(raw, path)
    for key in _MANDATORY_KEYS:
        if key not in keys:
            raise FormatError(f"{path}: missing mandatory header key {key!r}")
    if keys.get("NDims") != "3":
        raise FormatError(f"{path}: unsupported dimensionality NDims={keys['NDims']}")
    if keys.get("BinaryDataByteOrderMSB", "False").lower() == "true":
        raise FormatError(f"{path}: big-endian data is not supported")
    if keys.get("CompressedData", "False").lower() == "true":
        raise FormatError(f"{path}: compressed data is not supported")
    if keys["ElementType"] not in _MET_TO_DTYPE:
        raise FormatError(f"{path}: unsupported ElementType {keys['ElementType']!r}")
    dtype = _MET_TO_DTYPE[keys["ElementType"]]
    dims = np.array([int(s) for s in keys["DimSize"].split()])
    spacing = np.array([float(s) for s in keys["ElementSpacing"].split()])
    origin = np.array([float(s) for s in keys.get("Offset", "0 0 0").split()])
    if dims.shape != (3,) or np.any(dims <= 0):
        raise FormatError(f"{path}: bad DimSize {keys['DimSize']!r}")

    datafile = keys["ElementDataFile"]
    if datafile == "LOCAL":
        payload = raw[data_offset:]
    else:
        payload = (path.parent / datafile).read_bytes()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) != expected:
        raise FormatError(f"{path}: raw payload is {len(payload)} bytes, "
                          f"expected {expected}")
    # File order is x-fastest; transpose to [ix, iy, iz] indexing.
    arr = np.frombuffer(payload, dtype=dtype).reshape(dims[::-1]).transpose(2, 1, 0)
    return Volume(arr, spacing, origin)


def write_mhd(vol: Volume, path) -> None:
    """Write a volume as MetaImage.

    A ``.mha`` path embeds the payload; any other extension writes a
    detached header plus a ``.raw`` sibling.  float64 data is narrowed to
    MET_FLOAT; the supported on-disk element types round-trip bit-exactly.
    """
    path = Path(path)
    data = vol.data
    if data.dtype == np.float64:
        data = data.astype("<f4")
    dtype = data.dtype.newbyteorder("<") if data.dtype.itemsize > 1 else data.dtype
    if dtype.newbyteorder("=") not in _DTYPE_TO_MET:
        raise FormatError(f"cannot write element type {data.dtype}")
    met = _DTYPE_TO_MET[dtype.newbyteorder("=")]
    local = path.suffix.lower() == ".mha"
    datafile = "LOCAL" if local else path.with_suffix(".raw").name

    header = (
        "ObjectType = Image\n"
        "NDims = 3\n"
        "BinaryData = True\n"
        "BinaryDataByteOrderMSB = False\n"
        f"DimSize = {vol.dims[0]} {vol.dims[1]} {vol.dims[2]}\n"
        f"ElementSpacing = {vol.spacing[0]:.17g} {vol.spacing[1]:.17g} {vol.spacing[2]:.17g}\n"
        f"Offset = {vol.origin[0]:.17g} {vol.origin[1]:.17g} {vol.origin[2]:.17g}\n"
        f"ElementType = {met}\n"
        f"ElementDataFile = {datafile}\n"
    )
    payload = np.ascontiguousarray(data.transpose(2, 1, 0), dtype=dtype).tobytes()
    if local:
        path.write_bytes(header.encode("ascii") + payload)
    else:
        path.write_text(header)
        (path.parent / datafile).write_bytes(payload)


# ---------------------------------------------------------------------------
# Landmark files: one "xF yF zF xM yM zM" line per pair, mm, '#' comments.

def read_landmarks(path, pair_id: str = "") -> LandmarkPairSet:
    rows = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = [float(s) for s in line.split()]
        if len(parts) != 6:
            raise FormatError(f"{path}: landmark line needs 6 values, got {len(parts)}")
        rows.append(parts)
    if not rows:
        raise FormatError(f"{path}: no landmarks found")
    arr = np.array(rows)
    return LandmarkPairSet(arr[:, :3], arr[:, 3:], pair_id or Path(path).stem)


def write_landmarks(pairs: LandmarkPairSet, path) -> None:
    lines = ["# xF yF zF xM yM zM (mm)"]
    for f, m in zip(pairs.fixed_points, pairs.moving_points):
        lines.append(" ".join(f"{v:.17g}" for v in (*f, *m)))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Interpolation and warping

def _gather_trilinear(data: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Trilinear interpolation in index space, edge-clamped (total function)."""
    dims = data.shape[:3]
    out_shape = idx.shape[:-1]
    idx = idx.reshape(-1, 3)
    i0 = np.empty_like(idx, dtype=np.intp)
    frac = np.empty_like(idx)
    for a in range(3):
        c = np.clip(idx[:, a], 0.0, dims[a] - 1)
        lo = np.floor(c).astype(np.intp)
        np.minimum(lo, max(dims[a] - 2, 0), out=lo)
        i0[:, a] = lo
        frac[:, a] = c - lo
    i1 = np.minimum(i0 + 1, np.array(dims) - 1)

    val = 0.0
    for dx in (0, 1):
        wx = frac[:, 0] if dx else 1.0 - frac[:, 0]
        ix = i1[:, 0] if dx else i0[:, 0]
        for dy in (0, 1):
            wy = frac[:, 1] if dy else 1.0 - frac[:, 1]
            iy = i1[:, 1] if dy else i0[:, 1]
            for dz in (0, 1):
                wz = frac[:, 2] if dz else 1.0 - frac[:, 2]
                iz = i1[:, 2] if dz else i0[:, 2]
                w = wx * wy * wz
                corner = data[ix, iy, iz]
                if corner.ndim > 1:
                    w = w[:, None]
                val = val + w * corner
    return val.reshape(out_shape + data.shape[3:])


def trilinear_sample(vol: Volume, points):
    """Sample a volume at world points (mm); outside points clamp to the edge."""
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    idx = (np.atleast_2d(pts) - vol.origin) / vol.spacing
    out = _gather_trilinear(np.asarray(vol.data, dtype=float), idx)
    return float(out[0]) if scalar else out.reshape(pts.shape[:-1])


def sample_dvf(dvf: DisplacementField, points) -> np.ndarray:
    """Trilinearly interpolate displacement vectors at world points (mm)."""
    pts = np.asarray(points, dtype=float)
    scalar = pts.ndim == 1
    idx = (np.atleast_2d(pts) - dvf.origin) / dvf.spacing
    out = _gather_trilinear(dvf.vectors, idx)
    return out[0] if scalar else out.reshape(pts.shape[:-1] + (3,))


def warp(moving: Volume, dvf: DisplacementField) -> Volume:
    """Backward-warp: out(x) = moving(x + u(x)) on the dvf (fixed) grid."""
    pts = dvf.voxel_centers() + dvf.vectors
    data = trilinear_sample(moving, pts.reshape(-1, 3)).reshape(dvf.dims)
    return Volume(data, dvf.spacing.copy(), dvf.origin.copy())


# ---------------------------------------------------------------------------
# Displacement fields on disk: three scalar volumes _dx/_dy/_dz.

_DVF_SUFFIXES = ("_dx", "_dy", "_dz")


def save_dvf(dvf: DisplacementField, directory, prefix: str = "dvf") -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for c, suffix in enumerate(_DVF_SUFFIXES):
        comp = Volume(dvf.vectors[..., c].astype("<f4"), dvf.spacing, dvf.origin)
        write_mhd(comp, directory / f"{prefix}{suffix}.mhd")


def load_dvf(directory, prefix: str = "dvf") -> DisplacementField:
    directory = Path(directory)
    comps = [read_mhd(directory / f"{prefix}{suffix}.mhd") for suffix in _DVF_SUFFIXES]
    for comp in comps[1:]:
        if comp.dims != comps[0].dims:
            raise FormatError(f"{directory}: dvf component dims disagree")
    vectors = np.stack([np.asarray(c.data, dtype=float) for c in comps], axis=-1)
    return DisplacementField(vectors, comps[0].spacing, comps[0].origin)
