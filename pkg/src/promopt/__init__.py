"""Promotion offer optimization toolkit.

Pipeline: transaction ingestion, bi-weekly series construction, feature
engineering, a purchase-probability network with entity embeddings and
dilated causal convolutions, per-consumer F1-maximizing cut-offs,
per-category sigmoid offer-response curves with offer elasticities, and a
discrete offer assignment maximizing net revenue under a retention floor.
"""

from .elasticity import (
    ElasticityRecord,
    OfferResponseCurve,
    ReferenceOffer,
    SigmoidFit,
    elasticity,
    fit_sigmoid,
    reference_offer,
)
from .errors import (
    ElasticitySkip,
    FeatureError,
    FitError,
    InfeasibleError,
    PromoptError,
    RowError,
    SchemaError,
    SizingError,
    StageDependencyError,
    TrainingError,
)
from .features import (
    FeatureBuilder,
    FeatureManifest,
    FeatureSpec,
    SampleRow,
    datetime_features,
    profile_features,
    rolling_offsets,
)
from .ingest import (
    BiweeklySeries,
    ConsumerItemKey,
    SplitSpec,
    TransactionRecord,
    build_series,
    gen_synthetic,
    parse_transactions,
    split_series,
)
from .network import Batch, NetworkConfig, backward, bce_loss, causal_dilated_conv, forward
from .optimizer import (
    CategorySolution,
    OfferDecision,
    OptimizationItem,
    OptimizationProblem,
    evaluate_choice,
    eta_candidates,
    solve_category,
    solve_item,
    weighted_offer,
)
from .pipeline import PipelineConfig, run_all, run_stage
from .thresholds import (
    ConsumerPredictions,
    ThresholdCalibrator,
    ThresholdResult,
    decide,
    f1_at,
    maximize_threshold,
)
from .training import TemporalConvNetClassifier, TrainConfig, train_network

__version__ = "0.1.0"
