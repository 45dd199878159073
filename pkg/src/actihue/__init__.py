"""Pixel-level activation retrieval, match-geometry statistics and the hue loss."""

__version__ = "0.1.0"

from .activation import ActivationImage, HuePlane, energy_map, fit_hue_plane, hue_diagnostic, normalize, pool_descriptor
from .classifier import ClassLikelihoodTable, classify, compare_descriptors, likelihood
from .hueloss import AngularLabelSet, assign_labels, combined_loss, dtheta, hue_loss
from .memory import MemoryStore, NNQueryResult

__all__ = [
    "ActivationImage",
    "AngularLabelSet",
    "ClassLikelihoodTable",
    "HuePlane",
    "MemoryStore",
    "NNQueryResult",
    "__version__",
    "assign_labels",
    "classify",
    "combined_loss",
    "compare_descriptors",
    "dtheta",
    "energy_map",
    "fit_hue_plane",
    "hue_diagnostic",
    "hue_loss",
    "likelihood",
    "normalize",
    "pool_descriptor",
]
