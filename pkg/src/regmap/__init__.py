"""regmap: voxel-wise prediction of deformable registration error.

Synthesizes or ingests image pairs and displacement fields, derives
registration-ensemble and intensity features, pools them over physical
boxes and trains a regression forest that predicts the local registration
error in millimetres.
"""

__version__ = "1.0.0"

from .volume import (Volume, DisplacementField, FeatureMap, LandmarkPairSet,
                     FormatError, read_mhd, write_mhd, read_landmarks,
                     write_landmarks, trilinear_sample, sample_dvf, warp,
                     save_dvf, load_dvf)
from .synth import generate_phantom, generate_random_dvf, true_error_map
from .bspline import (BSplineGrid, RegConfig, zero_grid, grid_to_dvf,
                      perturb_grid, register, ensemble_initial, ensemble_base)
from .regfeatures import std_dvf, bias_map, cvh, jacobian_det
from .intfeatures import (MindPattern, mind_descriptor, mind_distance,
                          local_mi, local_mi_at, sid_gid, nc)
from .pooling import (POOL_BOXES_MM, MI_BOXES_MM, SID_GID_SIGMAS_MM,
                      box_voxels, avg_pool, max_pool, pool_feature,
                      schema_columns, assemble)
from .sampling import (CLASS_NAMES, CLASS_THRESHOLDS_MM, Sample, class_of,
                       landmark_error, expand_neighborhood, dense_from_truth)
from .table import SampleTable
from .forest import ForestConfig, Forest, train, predict, oob_importance
from .evaluate import (mae, classify_metrics, cross_validate,
                       aggregate_metrics, emit_reports, error_overlay_png)
from .pipeline import (E2EConfig, MissingInputError, SchemaError, ConfigError,
                       synth_pair, feature_table, build_table, run_e2e,
                       predict_error_map)
