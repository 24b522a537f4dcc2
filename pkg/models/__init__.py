from .config import LAMBDA_PRESETS, ModelDims, RunConfig, TrainConfig, Variant
from .review import EncodedDoc, EncodeStats, ReviewDoc
from .schemas import (
    SCHEMA_VERSION,
    AttentionRecord,
    CheckpointHeader,
    CorpusStatsRecord,
    EpochRecord,
    ErrorRecord,
    EvalResult,
    SummaryRecord,
    TensorSpec,
    ViewWeights,
)

__all__ = [
    'LAMBDA_PRESETS',
    'ModelDims',
    'RunConfig',        # Paths + data options + TrainConfig
    'TrainConfig',
    'Variant',
    'EncodedDoc',       # Ids for one ReviewDoc
    'EncodeStats',
    'ReviewDoc',
    'SCHEMA_VERSION',
    'AttentionRecord',
    'CheckpointHeader',
    'CorpusStatsRecord',
    'EpochRecord',
    'ErrorRecord',
    'EvalResult',
    'SummaryRecord',
    'TensorSpec',
    'ViewWeights',
]
