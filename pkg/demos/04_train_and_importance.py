"""Miniature end-to-end run: features, forest, metrics, importance.

Uses a small configuration (fewer pairs, voxels and trees) so it finishes
in about a minute; the full-scale equivalent is `regmap e2e`.
"""

import tempfile
from pathlib import Path

from regmap import (E2EConfig, ForestConfig, aggregate_metrics, build_table,
                    cross_validate, oob_importance, train)

cfg = E2EConfig(pairs=4, dims=24, spacing_mm=2.0, schema="no-pooling",
                seed=13, budgets=(2, 6), ensemble_size=3, stride=5,
                folds=2, sampling_fraction=0.1,
                forest=ForestConfig(n_trees=25, seed=13))

table = build_table(cfg)
print(f"table: {len(table)} samples, {len(table.columns)} features, "
      f"{len(set(table.pair_ids))} pairs")

results = cross_validate(table, cfg.forest, k=cfg.folds, seed=cfg.seed)
agg = aggregate_metrics(results)
print(f"cross-validated MAE {agg['mae']:.2f} mm, "
      f"accuracy {100 * agg['accuracy']:.0f}%")

model = train(table.X, table.y, cfg.forest, columns=table.columns)
imp = oob_importance(model, table.X, table.y)
ranked = sorted(zip(table.columns, imp), key=lambda kv: -kv[1])
print("feature importance (MSE increase under permutation):")
for name, value in ranked:
    print(f"  {name:8s} {value:+.4f}")
