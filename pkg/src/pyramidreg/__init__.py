"""pyramidreg: hierarchical non-rigid point cloud registration.

Fits a coarse-to-fine stack of small coordinate networks per cloud
pair, each level predicting a local transform and a blend weight, and
composes them into a dense continuous warp field.
"""

__version__ = "0.1.0"

from .core import (CorrespondenceSet, NormalizationRecord, NormKind,
                   PointCloud, PyramidConfig, RotationRepr, WarpFieldType,
                   build_config, load_config_file, normalize_clouds,
                   validate_config)
from .cost import NnIndex, chamfer_cost, correspondence_cost, deformability_reg, total_cost
from .encoding import positional_encode
from .errors import (ConfigError, DegenerateCloudError, FileFormatError,
                     NonFiniteError, NumericalError, PyramidregError,
                     ShapeError)
from .metrics import FlowMetrics, compute_metrics
from .pyramid import FrozenPyramid, LevelTrace, RegistrationResult, register
from .synth import (DeformationSpec, SuiteInstance, add_noise,
                    apply_deformation, make_partial, make_suite,
                    sample_surface)
from .warpfield import rotation_from_repr, warp, xi_dim

__all__ = [
    "__version__",
    "CorrespondenceSet", "NormalizationRecord", "NormKind", "PointCloud",
    "PyramidConfig", "RotationRepr", "WarpFieldType", "build_config",
    "load_config_file", "normalize_clouds", "validate_config",
    "NnIndex", "chamfer_cost", "correspondence_cost", "deformability_reg",
    "total_cost", "positional_encode",
    "ConfigError", "DegenerateCloudError", "FileFormatError",
    "NonFiniteError", "NumericalError", "PyramidregError", "ShapeError",
    "FlowMetrics", "compute_metrics",
    "FrozenPyramid", "LevelTrace", "RegistrationResult", "register",
    "DeformationSpec", "SuiteInstance", "add_noise", "apply_deformation",
    "make_partial", "make_suite", "sample_surface",
    "rotation_from_repr", "warp", "xi_dim",
]
