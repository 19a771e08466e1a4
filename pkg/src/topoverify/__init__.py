"""Topological and spatial verification of image pairs for retrieval reranking."""

__version__ = "0.1.0"

from .features import FeatureSet, Keypoint, Match, load_features, ratio_test_match, restricted_match, save_features
from .geometry import Patch
from .retrieval import GroundTruth, RankedList, average_precision, map_eval, rerank
from .spatial import SpatialConfig, spatial_verify
from .synth import SynthSpec, family_spec, generate
from .topo import TopoConfig, check_hr_validity, grow_region, hr_score, topo_verify

__all__ = [
    "FeatureSet",
    "GroundTruth",
    "Keypoint",
    "Match",
    "Patch",
    "RankedList",
    "SpatialConfig",
    "SynthSpec",
    "TopoConfig",
    "average_precision",
    "check_hr_validity",
    "family_spec",
    "generate",
    "grow_region",
    "hr_score",
    "load_features",
    "map_eval",
    "ratio_test_match",
    "rerank",
    "restricted_match",
    "save_features",
    "spatial_verify",
    "topo_verify",
]
