from .evaluate import RocCurve, evaluate, roc_curve
from .features import (
    AttackDataset,
    FeatureSpec,
    RecordFeatures,
    aggregate_set_features,
    build_attack_dataset,
    extract_features,
    input_activation_features,
    set_based_score_features,
)
from .meta import MetaClassifier, MetaClassifierConfig, mc_score, train_meta_classifier

__all__ = [
    "AttackDataset",
    "FeatureSpec",
    "MetaClassifier",
    "MetaClassifierConfig",
    "RecordFeatures",
    "RocCurve",
    "aggregate_set_features",
    "build_attack_dataset",
    "evaluate",
    "extract_features",
    "input_activation_features",
    "mc_score",
    "roc_curve",
    "set_based_score_features",
    "train_meta_classifier",
]
