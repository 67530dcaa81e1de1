"""End-to-end wiring: synthetic pairs, feature tables, training, evaluation.

Stage boundaries are files so that externally produced registrations
(e.g. elastix or ANTs displacement fields exported as _dx/_dy/_dz MetaImage
triplets) can replace the built-in toy engine at the `register` boundary.
"""

from __future__ import annotations

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__
from . import forest as rf
from .bspline import RegConfig, ensemble_base, ensemble_initial, grid_to_dvf, \
    register, zero_grid
from .evaluate import aggregate_metrics, cross_validate, emit_reports, \
    error_overlay_png
from .intfeatures import local_mi_at, mind_distance, nc, sid_gid
from .pooling import MI_BOXES_MM, SID_GID_SIGMAS_MM, assemble, avg_pool, \
    max_pool, schema_columns
from .regfeatures import bias_map, cvh, jacobian_det, std_dvf
from .sampling import dense_from_truth
from .synth import generate_phantom, generate_random_dvf, true_error_map
from .table import SampleTable
from .volume import DisplacementField, Volume, load_dvf, read_mhd, save_dvf, \
    warp, write_mhd

__all__ = ["MissingInputError", "SchemaError", "ConfigError", "E2EConfig",
           "feature_table", "run_e2e", "predict_error_map"]


class MissingInputError(Exception):
    """A required input file or ensemble is absent."""


class SchemaError(Exception):
    """A table or model does not match the requested feature schema."""


class ConfigError(Exception):
    """Invalid configuration value."""


# Per-pair deformation amplitudes cycle through this list so the synthetic
# ground truth covers all three error classes.
_AMPLITUDES_MM = (3.0, 6.0, 9.0, 13.0, 17.0, 22.0)
_DVF_SIGMA_MM = 25.0


@dataclass
class E2EConfig:
    pairs: int = 12
    dims: int = 64
    spacing_mm: float = 2.0
    schema: str = "combined"
    seed: int = 7
    budgets: tuple = (3, 6, 12, 25)   # iterations per resolution
    ensemble_size: int = 20
    perturb_range_mm: float = 2.0
    stride: int = 6
    folds: int = 3
    threads: int = 0                  # 0: use REGMAP_THREADS or cpu count
    resolutions: int = 2
    step_mm: float = 2.0
    sampling_fraction: float = 0.03
    control_spacing_mm: float = 10.0
    forest: rf.ForestConfig = field(default_factory=rf.ForestConfig)

    def n_threads(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("REGMAP_THREADS")
        if env:
            return max(int(env), 1)
        return os.cpu_count() or 1


def synth_pair(index: int, dims, spacing_mm, seed):
    """Deterministic synthetic pair: fixed = moving warped by a known field."""
    dims3 = (dims, dims, dims) if np.isscalar(dims) else tuple(dims)
    spacing = np.full(3, spacing_mm) if np.isscalar(spacing_mm) \
        else np.asarray(spacing_mm, float)
    moving = generate_phantom(dims3, spacing, seed=[int(seed), index, 0])
    amplitude = _AMPLITUDES_MM[index % len(_AMPLITUDES_MM)]
    t_true = generate_random_dvf(moving, amplitude, _DVF_SIGMA_MM,
                                 seed=[int(seed), index, 1])
    fixed = warp(moving, t_true)
    return fixed, moving, t_true


# ---------------------------------------------------------------------------
# Feature computation

def _needed_mothers(columns):
    mothers = set()
    for col in columns:
        if "_avg" in col or "_max" in col:
            mothers.add(col.split("_")[0])
        elif col.startswith(("nmi", "pmi")):
            mothers.add("mi")
        elif col.startswith("nc"):
            mothers.add("nc")
        elif col.startswith(("sid", "gid")):
            mothers.add("sidgid")
        else:
            mothers.add(col if not col.startswith("pmis") else "mi")
    return mothers


_REG_MOTHERS = {"stdT", "stdTL", "cvh", "biasT", "biasTL", "jac"}


def feature_table(fixed: Volume, moving: Volume, t_b: DisplacementField,
                  locations, schema: str, ens_initial=None, ens_base=None,
                  bins: int = 32, epsilon: float = 5.0):
    """Feature matrix at voxel locations for a named schema.

    Registration-derived columns require the two perturbation ensembles;
    intensity-only schemas need just the base transform.  Returns
    (X, columns).
    """
    columns = schema_columns(schema)
    mothers = _needed_mothers(columns)
    if mothers & _REG_MOTHERS:
        if not ens_initial or not ens_base:
            raise MissingInputError(
                f"schema {schema!r} needs registration ensembles")
    locations = np.asarray(locations, dtype=np.intp)
    warped_b = warp(moving, t_b)

    mother_maps = {}
    if "mind" in mothers:
        mother_maps["mind"] = mind_distance(fixed, warped_b)
    if "stdT" in mothers:
        mother_maps["stdT"] = std_dvf(ens_initial, name="stdT")
    if "biasT" in mothers:
        mother_maps["biasT"] = bias_map(t_b, ens_initial, name="biasT")
    if "stdTL" in mothers:
        mother_maps["stdTL"] = std_dvf(ens_base, name="stdTL")
    if "biasTL" in mothers:
        mother_maps["biasTL"] = bias_map(t_b, ens_base, name="biasTL")
    if "cvh" in mothers:
        warped_members = [warp(moving, f) for f in ens_initial]
        mother_maps["cvh"] = cvh(fixed, warped_members, warped_b,
                                 bins=bins, epsilon=epsilon)
    if "jac" in mothers:
        mother_maps["jac"] = jacobian_det(t_b)

    maps = {}
    extra = {}
    mi_cache = {}
    for col in columns:
        if col in maps:
            continue
        if "_avg" in col or "_max" in col:
            name, rest = col.split("_", 1)
            box = float(rest[3:])
            pool = avg_pool if rest.startswith("avg") else max_pool
            maps[col] = pool(mother_maps[name], box)
        elif col.startswith(("nmi", "pmi")):
            sturges = col.startswith(("nmis", "pmis"))
            box = float(col[4:] if sturges else col[3:])
            key = (box, sturges)
            if key not in mi_cache:
                mi_cache[key] = local_mi_at(
                    fixed, warped_b, box,
                    "sturges" if sturges else "constant", locations, bins=bins)
            extra[col] = mi_cache[key][0 if col.startswith("nmi") else 1]
        elif col.startswith("nc"):
            maps[col] = nc(fixed, warped_b, float(col[2:]))
        elif col.startswith(("sid", "gid")):
            sigma = float(col[3:])
            smap, gmap = sid_gid(fixed, warped_b, sigma)
            maps[smap.name] = smap
            maps[gmap.name] = gmap
        elif col in mother_maps:
            maps[col] = mother_maps[col]
    X = assemble(maps, locations, columns, extra=extra)
    return X, columns


# ---------------------------------------------------------------------------
# One (pair, budget) unit of work

def _reg_config(cfg: E2EConfig, iterations: int) -> RegConfig:
    return RegConfig(resolutions=cfg.resolutions, iterations=iterations,
                     step_mm=cfg.step_mm,
                     sampling_fraction=cfg.sampling_fraction,
                     control_spacing_mm=cfg.control_spacing_mm,
                     seed=cfg.seed)

def _pair_budget_table(cfg: E2EConfig, pair_index: int,
                       budget_index: int) -> SampleTable:
    fixed, moving, t_true = synth_pair(pair_index, cfg.dims, cfg.spacing_mm,
                                       cfg.seed)
    iterations = cfg.budgets[budget_index]
    reg_cfg = _reg_config(cfg, iterations)
    grid = register(fixed, moving, reg_cfg,
                    zero_grid(fixed, cfg.control_spacing_mm))
    t_b = grid_to_dvf(grid, fixed)

    needs_reg = bool(_needed_mothers(schema_columns(cfg.schema)) & _REG_MOTHERS)
    ens_ini = ens_b = None
    if needs_reg:
        ens_seed = [cfg.seed, pair_index, budget_index]
        ens_ini = ensemble_initial(fixed, moving, reg_cfg, cfg.ensemble_size,
                                   cfg.perturb_range_mm, seed=ens_seed + [0])
        ens_b = ensemble_base(fixed, moving, reg_cfg, grid, cfg.ensemble_size,
                              cfg.perturb_range_mm, seed=ens_seed + [1])

    pair_id = f"pair{pair_index:03d}"
    err = true_error_map(t_b, t_true)
    samples = dense_from_truth(err, cfg.stride, pair_id=pair_id)
    locations = np.array([s.voxel for s in samples], dtype=int)
    X, columns = feature_table(fixed, moving, t_b, locations, cfg.schema,
                               ens_initial=ens_ini, ens_base=ens_b)
    return SampleTable(columns, X,
                       np.array([s.y for s in samples]),
                       np.array([s.pair_id for s in samples]),
                       locations,
                       np.array([s.world for s in samples]))


def _worker(args):
    cfg_dict, pair_index, budget_index = args
    cfg = _config_from_dict(cfg_dict)
    return _pair_budget_table(cfg, pair_index, budget_index)


def _config_to_dict(cfg: E2EConfig) -> dict:
    d = asdict(cfg)
    d["budgets"] = list(cfg.budgets)
    return d


def _config_from_dict(d: dict) -> E2EConfig:
    d = dict(d)
    d["budgets"] = tuple(d["budgets"])
    d["forest"] = rf.ForestConfig(**d["forest"])
    return E2EConfig(**d)


def build_table(cfg: E2EConfig) -> SampleTable:
    """Feature/target table over all pairs and iteration budgets."""
    jobs = [(_config_to_dict(cfg), p, b)
            for p in range(cfg.pairs) for b in range(len(cfg.budgets))]
    n_threads = cfg.n_threads()
    if n_threads > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_threads) as pool:
            tables = list(pool.map(_worker, jobs, chunksize=1))
    else:
        tables = [_worker(j) for j in jobs]
    return SampleTable.concatenate(tables)


def run_e2e(cfg: E2EConfig, out_dir) -> dict:
    """synth -> register -> ensembles -> features -> train -> evaluate.

    Writes the sample table, per-fold metrics and a run manifest into
    ``out_dir`` and returns the aggregate metrics.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    table = build_table(cfg)
    table.write_binary(out / "samples")
    results = cross_validate(table, cfg.forest, k=cfg.folds, seed=cfg.seed)
    emit_reports(results, out)
    agg = aggregate_metrics(results)

    cfg_dict = _config_to_dict(cfg)
    cfg_json = json.dumps(cfg_dict, sort_keys=True)
    manifest = {
        "config": cfg_dict,
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "seed": cfg.seed,
        "version": __version__,
        "rows": len(table),
        "columns": len(table.columns),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return agg


# ---------------------------------------------------------------------------
# Dense prediction for qualitative maps

def predict_error_map(model: rf.Forest, fixed: Volume, moving: Volume,
                      t_b: DisplacementField, schema: str, stride: int = 4,
                      ens_initial=None, ens_base=None) -> Volume:
    """Predicted error map: forest evaluated on a stride lattice, upsampled."""
    from scipy.ndimage import zoom

    axes = [np.arange(0, d, stride) for d in fixed.dims]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    lat_dims = grid.shape[:3]
    X, columns = feature_table(fixed, moving, t_b, grid.reshape(-1, 3), schema,
                               ens_initial=ens_initial, ens_base=ens_base)
    if columns != model.columns:
        raise SchemaError("model columns do not match the requested schema")
    pred = rf.predict(model, X).reshape(lat_dims)
    factors = [fixed.dims[a] / lat_dims[a] for a in range(3)]
    dense = zoom(pred, factors, order=1, mode="nearest", grid_mode=False)
    dense = dense[:fixed.dims[0], :fixed.dims[1], :fixed.dims[2]]
    if dense.shape != tuple(fixed.dims):
        pad = [(0, fixed.dims[a] - dense.shape[a]) for a in range(3)]
        dense = np.pad(dense, pad, mode="edge")
    return fixed.like(dense)


# ---------------------------------------------------------------------------
# File-based stages (CLI surface)

def stage_synth(cfg: E2EConfig, out_dir) -> None:
    out = Path(out_dir)
    for p in range(cfg.pairs):
        pair_dir = out / f"pair{p:03d}"
        pair_dir.mkdir(parents=True, exist_ok=True)
        fixed, moving, t_true = synth_pair(p, cfg.dims, cfg.spacing_mm, cfg.seed)
        write_mhd(fixed, pair_dir / "fixed.mhd")
        write_mhd(moving, pair_dir / "moving.mhd")
        save_dvf(t_true, pair_dir, prefix="truth")


def _require(path: Path):
    if not path.exists():
        raise MissingInputError(str(path))
    return path


def stage_register(cfg: E2EConfig, pair_dir, with_ensembles: bool = True) -> None:
    pair_dir = Path(pair_dir)
    fixed = read_mhd(_require(pair_dir / "fixed.mhd"))
    moving = read_mhd(_require(pair_dir / "moving.mhd"))
    for b, iterations in enumerate(cfg.budgets):
        reg_cfg = _reg_config(cfg, iterations)
        grid = register(fixed, moving, reg_cfg,
                        zero_grid(fixed, cfg.control_spacing_mm))
        reg_dir = pair_dir / f"reg{b}"
        save_dvf(grid_to_dvf(grid, fixed), reg_dir, prefix="dvf")
        if not with_ensembles:
            continue
        seed = [cfg.seed, b]
        ens_i = ensemble_initial(fixed, moving, reg_cfg, cfg.ensemble_size,
                                 cfg.perturb_range_mm, seed=seed + [0])
        ens_b = ensemble_base(fixed, moving, reg_cfg, grid, cfg.ensemble_size,
                              cfg.perturb_range_mm, seed=seed + [1])
        for name, ens in (("ens_ini", ens_i), ("ens_base", ens_b)):
            for k, f in enumerate(ens):
                save_dvf(f, reg_dir / name / str(k), prefix="dvf")


def _load_ensemble(ens_dir: Path):
    if not ens_dir.exists():
        return None
    members = sorted(ens_dir.iterdir(), key=lambda p: int(p.name))
    return [load_dvf(d, prefix="dvf") for d in members] or None


def stage_features(cfg: E2EConfig, pair_dir, budget_index: int,
                   table_out) -> None:
    pair_dir = Path(pair_dir)
    fixed = read_mhd(_require(pair_dir / "fixed.mhd"))
    moving = read_mhd(_require(pair_dir / "moving.mhd"))
    reg_dir = _require(pair_dir / f"reg{budget_index}")
    t_b = load_dvf(reg_dir, prefix="dvf")
    ens_ini = _load_ensemble(reg_dir / "ens_ini")
    ens_base = _load_ensemble(reg_dir / "ens_base")
    t_true = load_dvf(pair_dir, prefix="truth")
    err = true_error_map(t_b, t_true)
    samples = dense_from_truth(err, cfg.stride, pair_id=pair_dir.name)
    locations = np.array([s.voxel for s in samples], dtype=int)
    X, columns = feature_table(fixed, moving, t_b, locations, cfg.schema,
                               ens_initial=ens_ini, ens_base=ens_base)
    table = SampleTable(columns, X, np.array([s.y for s in samples]),
                        np.array([s.pair_id for s in samples]), locations,
                        np.array([s.world for s in samples]))
    table.write_csv(table_out)


def stage_train(table_path, schema: str, cfg: rf.ForestConfig,
                model_out) -> rf.Forest:
    table = _read_table(table_path)
    expected = schema_columns(schema)
    if table.columns != expected:
        raise SchemaError(f"table columns do not match schema {schema!r}")
    model = rf.train(table.X, table.y, cfg, columns=table.columns)
    rf.save(model, model_out)
    return model


def _read_table(path) -> SampleTable:
    path = Path(path)
    if not (path.exists() or path.with_suffix(".npz").exists()):
        raise MissingInputError(str(path))
    if path.suffix == ".csv":
        return SampleTable.read_csv(path)
    return SampleTable.read_binary(path)


def stage_predict(model_path, table_path, out_csv) -> None:
    model = rf.load(_require(Path(model_path)))
    table = _read_table(table_path)
    if table.columns != model.columns:
        raise SchemaError("table columns do not match the trained model")
    y_hat = rf.predict(model, table.X)
    lines = ["pair_id,ix,iy,iz,y_mm,y_hat_mm"]
    for i in range(len(table)):
        lines.append(f"{table.pair_ids[i]},{table.voxels[i][0]},"
                     f"{table.voxels[i][1]},{table.voxels[i][2]},"
                     f"{float(table.y[i])!r},{float(y_hat[i])!r}")
    Path(out_csv).write_text("\n".join(lines) + "\n")


def stage_evaluate(table_path, forest_cfg: rf.ForestConfig, folds: int,
                   seed: int, out_dir) -> dict:
    table = _read_table(table_path)
    results = cross_validate(table, forest_cfg, k=folds, seed=seed)
    emit_reports(results, out_dir)
    return aggregate_metrics(results)


def stage_importance(model_path, table_path, out_csv) -> None:
    model = rf.load(_require(Path(model_path)))
    table = _read_table(table_path)
    if table.columns != model.columns:
        raise SchemaError("table columns do not match the trained model")
    imp = rf.oob_importance(model, table.X, table.y)
    lines = ["feature,importance"]
    lines += [f"{c},{float(v)!r}" for c, v in zip(model.columns, imp)]
    Path(out_csv).write_text("\n".join(lines) + "\n")
