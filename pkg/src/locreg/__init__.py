"""Localizability-aware point-to-line / point-to-plane ICP."""

from .core import (
    GimbalLockError,
    PointCloud,
    Pose6D,
    compose,
    euler_to_rotation,
    invert,
    rotation_to_euler,
    transform_point,
    transform_points,
)
from .features import (
    FeatureCloud,
    FeatureConfig,
    FeatureMap,
    SpatialIndex,
    build_index,
    extract_features,
    find_correspondences,
    fit_line,
    fit_plane,
)
from .localizability import Category, DetectionConfig, LocalizabilityReport, detect, zhang_degeneracy
from .optimizer import SolverConfig, register, solution_remap, solve_kkt

__version__ = "0.1.0"
