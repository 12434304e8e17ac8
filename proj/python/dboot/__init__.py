"""Dense self-supervised bootstrapping: python surface over the C++ core."""

from _dboot import (
    Assignment,
    ClusterResult,
    ConfigError,
    IoError,
    NumericError,
    ObjectSet,
    RunConfig,
    SceneImage,
    ShapeError,
    cluster_debug,
    cluster_joint,
    eval_knn,
    generate_scene,
    kmeans_joint,
    knn_predict,
    miou,
    nn_retrieve,
    run_pretrain,
    sinkhorn_assign,
)

__all__ = [
    "Assignment",
    "ClusterResult",
    "ConfigError",
    "IoError",
    "NumericError",
    "ObjectSet",
    "RunConfig",
    "SceneImage",
    "ShapeError",
    "cluster_debug",
    "cluster_joint",
    "eval_knn",
    "generate_scene",
    "kmeans_joint",
    "knn_predict",
    "miou",
    "nn_retrieve",
    "run_pretrain",
    "sinkhorn_assign",
]
