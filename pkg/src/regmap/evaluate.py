"""Regression and classification metrics, cross-validation, report emission.

CSV layouts are documented in docs/reports.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import forest as rf
from .png import write_png
from .sampling import CLASS_NAMES, class_of
from .table import SampleTable
from .volume import Volume

__all__ = ["MaeReport", "ClassReport", "FoldResult", "mae", "classify_metrics",
           "cross_validate", "emit_reports", "error_overlay_png"]


@dataclass
class MaeReport:
    overall: tuple[float, float]                       # mean, std of |err|
    per_class: dict[str, tuple[float, float, int]]     # mean, std, count

    def as_row(self) -> dict[str, float | str]:
        row = {"mae": self.overall[0], "mae_std": self.overall[1]}
        for name in CLASS_NAMES:
            key = name[0]
            if name in self.per_class:
                m, s, _ = self.per_class[name]
                row[f"mae_{key}"], row[f"mae_{key}_std"] = m, s
            else:
                row[f"mae_{key}"] = row[f"mae_{key}_std"] = ""  # absent class
        return row


@dataclass
class ClassReport:
    accuracy: float
    f1: dict[str, float]           # absent when the class never occurs
    confusion: np.ndarray          # (3, 3), rows = true class


def mae(y, y_hat) -> MaeReport:
    """Overall and per-true-class mean absolute error, with stds."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or len(y) < 1:
        raise ValueError("y and y_hat must be equal-length and nonempty")
    err = np.abs(y_hat - y)
    labels = class_of(y)
    per_class = {}
    for c, name in enumerate(CLASS_NAMES):
        sel = err[labels == c]
        if len(sel):
            per_class[name] = (float(sel.mean()), float(sel.std()), len(sel))
    return MaeReport((float(err.mean()), float(err.std())), per_class)


def classify_metrics(y, y_hat) -> ClassReport:
    """3-class accuracy, per-class F1 and confusion after thresholding at 3/6 mm."""
    t = class_of(np.asarray(y, dtype=float))
    p = class_of(np.asarray(y_hat, dtype=float))
    if t.shape != p.shape:
        raise ValueError("y and y_hat must be equal length")
    confusion = np.zeros((3, 3), dtype=int)
    np.add.at(confusion, (t, p), 1)
    accuracy = float(np.trace(confusion)) / len(t)
    f1 = {}
    for c, name in enumerate(CLASS_NAMES):
        tp = confusion[c, c]
        denom_p = confusion[:, c].sum()
        denom_r = confusion[c, :].sum()
        if denom_p == 0 and denom_r == 0:
            continue  # class absent from both truth and prediction: undefined
        precision = tp / denom_p if denom_p else 0.0
        recall = tp / denom_r if denom_r else 0.0
        f1[name] = (2 * precision * recall / (precision + recall)
                    if precision + recall > 0 else 0.0)
    return ClassReport(accuracy, f1, confusion)


@dataclass
class FoldResult:
    fold: int
    train_pairs: list[str]
    test_pairs: list[str]
    mae: MaeReport
    classes: ClassReport
    y: np.ndarray
    y_hat: np.ndarray


def _pair_folds(pairs: np.ndarray, k: int, seed: int):
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(pairs))
    return [sorted(pairs[order[f::k]]) for f in range(k)]


def _pair_splits_repeated(pairs: np.ndarray, n_train: int, repeats: int, seed: int):
    rng = np.random.default_rng(seed)
    splits = []
    for _ in range(repeats):
        order = rng.permutation(len(pairs))
        splits.append((sorted(pairs[order[:n_train]]), sorted(pairs[order[n_train:]])))
    return splits


def cross_validate(table: SampleTable, cfg: rf.ForestConfig, k: int = 3,
                   seed: int = 0, repeated: tuple[int, int] | None = None):
    """Pair-level cross-validation: no pair contributes to train and test.

    ``repeated=(n_train_pairs, repeats)`` switches from k-fold to repeated
    random splitting.  Returns a list of FoldResult; aggregate with
    :func:`aggregate_metrics`.
    """
    pairs = np.unique(table.pair_ids)
    if len(pairs) < 2:
        raise ValueError("need at least 2 pairs")
    if repeated is not None:
        splits = _pair_splits_repeated(pairs, repeated[0], repeated[1], seed)
    else:
        if len(pairs) < k:
            raise ValueError("fewer pairs than folds")
        folds = _pair_folds(pairs, k, seed)
        splits = [(sorted(set(pairs) - set(test)), test) for test in folds]

    results = []
    for f, (train_pairs, test_pairs) in enumerate(splits):
        assert not set(train_pairs) & set(test_pairs)
        train_mask = np.isin(table.pair_ids, train_pairs)
        tr = table.subset(train_mask)
        te = table.subset(~train_mask if repeated is None
                          else np.isin(table.pair_ids, test_pairs))
        model = rf.train(tr.X, tr.y, cfg, columns=table.columns)
        y_hat = rf.predict(model, te.X)
        results.append(FoldResult(f, list(train_pairs), list(test_pairs),
                                  mae(te.y, y_hat), classify_metrics(te.y, y_hat),
                                  te.y, y_hat))
    return results


def aggregate_metrics(results: list[FoldResult]) -> dict:
    rows = [r.mae.as_row() for r in results]
    agg = {}
    for key in rows[0]:
        vals = [r[key] for r in rows if r[key] != ""]
        agg[key] = float(np.mean(vals)) if vals else ""
    agg["accuracy"] = float(np.mean([r.classes.accuracy for r in results]))
    for name in CLASS_NAMES:
        vals = [r.classes.f1[name] for r in results if name in r.classes.f1]
        agg[f"f1_{name[0]}"] = float(np.mean(vals)) if vals else ""
    return agg


# ---------------------------------------------------------------------------
# Reports

def _fmt(v) -> str:
    return "" if v == "" else repr(float(v))


def emit_reports(results: list[FoldResult], out_dir,
                 importance: dict[str, float] | None = None,
                 overlay: tuple[Volume, Volume] | None = None) -> None:
    """Write metrics.csv, sorted_curve.csv, scatter.csv, importance.csv and an
    optional mid-axial overlay PNG of a predicted error map on a fixed image."""
    if not results:
        raise ValueError("empty report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    keys = ["mae", "mae_std", "mae_c", "mae_c_std", "mae_p", "mae_p_std",
            "mae_w", "mae_w_std"]
    lines = ["fold," + ",".join(keys) + ",accuracy,f1_c,f1_p,f1_w"]
    for r in results:
        row = r.mae.as_row()
        f1 = [_fmt(r.classes.f1.get(name, "")) for name in CLASS_NAMES]
        lines.append(",".join([str(r.fold)] + [_fmt(row[k]) for k in keys]
                              + [_fmt(r.classes.accuracy)] + f1))
    agg = aggregate_metrics(results)
    lines.append(",".join(["aggregate"] + [_fmt(agg[k]) for k in keys]
                          + [_fmt(agg["accuracy"]), _fmt(agg["f1_c"]),
                             _fmt(agg["f1_p"]), _fmt(agg["f1_w"])]))
    (out / "metrics.csv").write_text("\n".join(lines) + "\n")

    y = np.concatenate([r.y for r in results])
    y_hat = np.concatenate([r.y_hat for r in results])
    order = np.argsort(y, kind="stable")
    curve = ["y_sorted,y_hat"]
    curve += [f"{float(y[i])!r},{float(y_hat[i])!r}" for i in order]
    (out / "sorted_curve.csv").write_text("\n".join(curve) + "\n")

    scatter = ["y,y_hat"]
    scatter += [f"{float(a)!r},{float(b)!r}" for a, b in zip(y, y_hat)]
    (out / "scatter.csv").write_text("\n".join(scatter) + "\n")

    if importance is not None:
        imp = ["feature,importance"]
        imp += [f"{k},{float(v)!r}" for k, v in importance.items()]
        (out / "importance.csv").write_text("\n".join(imp) + "\n")

    if overlay is not None:
        error_overlay_png(overlay[0], overlay[1], out / "error_overlay.png")


def _colormap(t: np.ndarray) -> np.ndarray:
    """Blue -> green -> red ramp for t in [0, 1], returned as float RGB."""
    t = np.clip(t, 0.0, 1.0)
    r = np.clip(2 * t - 1.0, 0, 1)
    g = 1.0 - np.abs(2 * t - 1.0)
    b = np.clip(1.0 - 2 * t, 0, 1)
    return np.stack([r, g, b], axis=-1)


def error_overlay_png(fixed: Volume, error: Volume, path,
                      alpha: float = 0.5, error_max: float | None = None) -> None:
    """Color-mapped mid-axial slice of an error map over the fixed image."""
    if tuple(fixed.dims) != tuple(error.dims):
        raise ValueError("volumes must share dims")
    z = fixed.dims[2] // 2
    gray = np.asarray(fixed.data, float)[:, :, z]
    lo, hi = gray.min(), gray.max()
    gray = (gray - lo) / (hi - lo) if hi > lo else np.zeros_like(gray)
    err = np.asarray(error.data, float)[:, :, z]
    emax = error_max if error_max is not None else max(float(err.max()), 1e-9)
    rgb = ((1 - alpha) * gray[:, :, None] + alpha * _colormap(err / emax))
    # Slice axes are (x, y); PNG rows run top to bottom, so show y as rows.
    img = np.clip(rgb * 255, 0, 255).astype(np.uint8).transpose(1, 0, 2)
    write_png(path, img)
