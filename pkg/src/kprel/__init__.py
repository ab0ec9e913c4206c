"""Advertiser keyphrase relevance pipeline.

Multi-source label construction, dataset mixing, a trainable relevance
scorer, click-retention threshold calibration, business-metric
evaluation, a tri-system marketplace simulator, and batch plus
near-real-time serving.
"""

from .errors import (
    CalibrationError,
    DatasetError,
    InputError,
    JudgeBackendError,
    KprelError,
    ModelFormatError,
    SchemaMismatchError,
    SimConfigError,
    SnapshotError,
    TrainingError,
    UndefinedMetricError,
)
from .evalkit import (
    CalibrationResult,
    EvalReport,
    RatioMetrics,
    Recommendation,
    calibrate,
    cohen_kappa,
    compare,
    concordance,
    keyphrase_reduction,
    ratio_metrics,
    render_compare_table,
    sales_retention,
    search_pass_rate,
)
from .judge import (
    HTTPJudgeBackend,
    JudgeBatchResult,
    PromptRequest,
    VerdictCache,
    build_prompt,
    judge_batch,
    parse_verdict,
    simulated_judge,
)
from .labels import (
    ClickRecord,
    HumanJudgment,
    JudgeVerdict,
    LabeledExample,
    MixStrategy,
    SearchRelevanceRecord,
    binarize_human,
    filter_clicks,
    mix,
)
from .scorer import (
    RelevanceModel,
    RelevanceScorer,
    TrainConfig,
    TrainResult,
    jaccard_baseline,
    load_model,
    save_model,
    score,
    train,
)
from .serve import (
    RelevanceService,
    Snapshot,
    batch_infer,
    diff_merge,
    read_snapshot,
    write_snapshot,
)
from .simkit import (
    SimConfig,
    SimWorld,
    generate_world,
    run_auctions,
    search_filter,
    seller_curation,
)
from .text import (
    FEATURE_NAMES,
    FEATURE_SCHEMA_HASH,
    PairFeaturizer,
    extract_features,
    jaccard,
    normalize,
)

__version__ = "0.1.0"

__all__ = [
    "CalibrationError",
    "CalibrationResult",
    "ClickRecord",
    "DatasetError",
    "EvalReport",
    "FEATURE_NAMES",
    "FEATURE_SCHEMA_HASH",
    "HTTPJudgeBackend",
    "HumanJudgment",
    "InputError",
    "JudgeBackendError",
    "JudgeBatchResult",
    "JudgeVerdict",
    "KprelError",
    "LabeledExample",
    "MixStrategy",
    "ModelFormatError",
    "PairFeaturizer",
    "PromptRequest",
    "RatioMetrics",
    "Recommendation",
    "RelevanceModel",
    "RelevanceScorer",
    "RelevanceService",
    "SchemaMismatchError",
    "SearchRelevanceRecord",
    "SimConfig",
    "SimConfigError",
    "SimWorld",
    "Snapshot",
    "SnapshotError",
    "TrainConfig",
    "TrainResult",
    "TrainingError",
    "UndefinedMetricError",
    "VerdictCache",
    "batch_infer",
    "binarize_human",
    "build_prompt",
    "calibrate",
    "cohen_kappa",
    "compare",
    "concordance",
    "diff_merge",
    "extract_features",
    "filter_clicks",
    "generate_world",
    "jaccard",
    "jaccard_baseline",
    "judge_batch",
    "keyphrase_reduction",
    "load_model",
    "mix",
    "normalize",
    "parse_verdict",
    "ratio_metrics",
    "read_snapshot",
    "render_compare_table",
    "run_auctions",
    "sales_retention",
    "save_model",
    "score",
    "search_filter",
    "search_pass_rate",
    "seller_curation",
    "simulated_judge",
    "train",
    "write_snapshot",
]
