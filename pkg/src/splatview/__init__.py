"""Active view planning and trajectory transfer on a CPU Gaussian-splatting renderer."""

from splatview.geom import (
    CorrespondenceSet,
    DegenerateGeometryError,
    NoConsensusError,
    RigidTransform,
    SimilarityTransform,
    TangentVector6,
    compose,
    exp,
    fibonacci_hemisphere,
    log,
    look_at,
    pose_distance,
    procrustes_se3,
    ransac_procrustes,
    umeyama_align,
)

__version__ = "0.1.0"

__all__ = [
    "CorrespondenceSet",
    "DegenerateGeometryError",
    "NoConsensusError",
    "RigidTransform",
    "SimilarityTransform",
    "TangentVector6",
    "compose",
    "exp",
    "fibonacci_hemisphere",
    "log",
    "look_at",
    "pose_distance",
    "procrustes_se3",
    "ransac_procrustes",
    "umeyama_align",
]
