"""Entity-wise multivariate time-series anomaly detection.

KPI decomposition under a mutual-information constraint, attention over
attribute / entity / temporal similarity graphs, and per-entity
prediction-error thresholds, with a synthetic transaction-data generator
and an autoencoder baseline sharing the same evaluation protocol.
"""

from .data import (
    DatasetTensor,
    EntityStaticProfile,
    LabelMatrix,
    NormStats,
    WindowSample,
    denormalize,
    load_dataset,
    normalize,
    save_dataset,
    sliding_windows,
    split,
)
from .detector import AnomalyReport, detect, evaluate, fit_thresholds
from .graphs import (
    BlockAdjacency,
    GraphTopology,
    build_attribute_graph,
    build_entity_graph,
    build_temporal_graph,
    build_topk_graph,
    time_series_similarity,
)
from .model import LossBreakdown, ModelConfig, Prediction, forward, loss, prepare, train
from .optim import AdamConfig, ParamStore, adam_step, grad_check
from .synth import GenConfig, generate

__version__ = "0.1.0"
