"""Group activity detection toolkit.

Detection of groups and their activities in multi-actor clips: a shared
data model, exact bipartite matching, detection-style evaluation, losses
for set-prediction training, a small grouping-transformer reference model
on a self-contained autodiff kernel, a spectral clustering baseline, and
a synthetic scene generator.
"""

from .data import (
    BBox,
    Clip,
    ClipFeatures,
    ClipPrediction,
    GroupAnnotation,
    GroupPrediction,
    Tracklet,
    load_dataset,
    load_features,
    load_predictions,
    sample_frames,
    save_dataset,
    save_features,
    save_predictions,
)
from .rng import SplitMix64

__version__ = "0.1.0"

__all__ = [
    "BBox",
    "Clip",
    "ClipFeatures",
    "ClipPrediction",
    "GroupAnnotation",
    "GroupPrediction",
    "SplitMix64",
    "Tracklet",
    "load_dataset",
    "load_features",
    "load_predictions",
    "sample_frames",
    "save_dataset",
    "save_features",
    "save_predictions",
    "__version__",
]
