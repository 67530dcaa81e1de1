"""Sample tables: feature rows with targets, serialized as CSV or binary."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sampling import class_of

__all__ = ["SampleTable"]

_META_COLUMNS = ["pair_id", "ix", "iy", "iz", "wx", "wy", "wz", "y_mm", "label"]


@dataclass
class SampleTable:
    """Rows of (feature vector, ground-truth error, pair id, class label)."""

    columns: list[str]
    X: np.ndarray                 # (N, F)
    y: np.ndarray                 # (N,) mm
    pair_ids: np.ndarray          # (N,) str
    voxels: np.ndarray            # (N, 3) int
    world: np.ndarray             # (N, 3) mm

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.pair_ids = np.asarray(self.pair_ids)
        self.voxels = np.asarray(self.voxels, dtype=int)
        self.world = np.asarray(self.world, dtype=float)
        n = len(self.y)
        if self.X.shape != (n, len(self.columns)):
            raise ValueError("feature matrix shape disagrees with columns")
        if len(self.pair_ids) != n or len(self.voxels) != n or len(self.world) != n:
            raise ValueError("table arrays disagree in length")

    def __len__(self):
        return len(self.y)

    @property
    def labels(self) -> np.ndarray:
        return class_of(self.y)

    def subset(self, mask) -> "SampleTable":
        mask = np.asarray(mask)
        return SampleTable(list(self.columns), self.X[mask], self.y[mask],
                           self.pair_ids[mask], self.voxels[mask],
                           self.world[mask])

    @staticmethod
    def concatenate(tables: list["SampleTable"]) -> "SampleTable":
        cols = tables[0].columns
        for t in tables[1:]:
            if t.columns != cols:
                raise ValueError("tables have different columns")
        return SampleTable(
            list(cols),
            np.concatenate([t.X for t in tables]),
            np.concatenate([t.y for t in tables]),
            np.concatenate([t.pair_ids for t in tables]),
            np.concatenate([t.voxels for t in tables]),
            np.concatenate([t.world for t in tables]),
        )

    # -- CSV -------------------------------------------------------------
    def write_csv(self, path) -> None:
        from .sampling import CLASS_NAMES

        labels = self.labels
        with open(path, "w") as fh:
            fh.write(",".join(_META_COLUMNS + list(self.columns)) + "\n")
            for i in range(len(self)):
                meta = [str(self.pair_ids[i]), *map(str, self.voxels[i]),
                        *(repr(float(v)) for v in self.world[i]),
                        repr(float(self.y[i])), CLASS_NAMES[labels[i]]]
                feats = [repr(float(v)) for v in self.X[i]]
                fh.write(",".join(meta + feats) + "\n")

    @staticmethod
    def read_csv(path) -> "SampleTable":
        with open(path) as fh:
            header = fh.readline().rstrip("\n").split(",")
            if header[:len(_META_COLUMNS)] != _META_COLUMNS:
                raise ValueError(f"{path}: unexpected sample-table header")
            columns = header[len(_META_COLUMNS):]
            pair_ids, voxels, world, ys, X = [], [], [], [], []
            for line in fh:
                parts = line.rstrip("\n").split(",")
                pair_ids.append(parts[0])
                voxels.append([int(v) for v in parts[1:4]])
                world.append([float(v) for v in parts[4:7]])
                ys.append(float(parts[7]))
                X.append([float(v) for v in parts[9:]])
        return SampleTable(columns, np.array(X, ndmin=2), np.array(ys),
                           np.array(pair_ids), np.array(voxels, ndmin=2),
                           np.array(world, ndmin=2))

    # -- compact binary with JSON sidecar --------------------------------
    def write_binary(self, path) -> None:
        path = Path(path)
        np.savez(path.with_suffix(".npz"), X=self.X, y=self.y,
                 pair_ids=self.pair_ids.astype(str), voxels=self.voxels,
                 world=self.world)
        sidecar = {"format": "regmap-sample-table", "version": 1,
                   "columns": self.columns, "rows": len(self)}
        path.with_suffix(".json").write_text(json.dumps(sidecar, indent=2))

    @staticmethod
    def read_binary(path) -> "SampleTable":
        path = Path(path)
        sidecar = json.loads(path.with_suffix(".json").read_text())
        if sidecar.get("format") != "regmap-sample-table":
            raise ValueError(f"{path}: not a sample table sidecar")
        with np.load(path.with_suffix(".npz")) as z:
            return SampleTable(list(sidecar["columns"]), z["X"], z["y"],
                               z["pair_ids"], z["voxels"], z["world"])
