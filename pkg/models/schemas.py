"""Line-delimited record schemas. Field order is emission order."""
from typing import Any, Dict, List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

from models.config import ModelDims, Variant

SCHEMA_VERSION = 1


class Record(BaseModel):
    schema_version: int = SCHEMA_VERSION


class EpochRecord(Record):
    record: Literal["epoch"] = "epoch"
    epoch: int
    loss: float
    loss1: float
    loss2: float
    loss3: float
    dev_acc: float
    dev_rmse: float
    best_epoch: int
    best_dev_acc: float


class EvalResult(Record):
    record: Literal["eval"] = "eval"
    split: Optional[str] = None
    n: int
    accuracy: float
    rmse: float
    confusion: List[List[int]]

    @classmethod
    def from_confusion(cls, confusion: np.ndarray, split: Optional[str] = None) -> "EvalResult":
        """
        Derive metrics from a [gold × predicted] count matrix.

        Rating distances are shifts between class indices, so they are the same
        in the 0-based class space and the 1-based rating space.
        """
        n = int(confusion.sum())
        classes = np.arange(confusion.shape[0])
        distance = (classes[:, None] - classes[None, :]) ** 2
        accuracy = float(np.trace(confusion)) / n if n else 0.0
        rmse = float(np.sqrt((confusion * distance).sum() / n)) if n else 0.0
        return cls(
            split=split,
            n=n,
            accuracy=accuracy,
            rmse=rmse,
            confusion=confusion.astype(int).tolist(),
        )


class SummaryRecord(Record):
    record: Literal["summary"] = "summary"
    command: str
    details: Dict[str, Any] = Field(default_factory=dict)


class ErrorRecord(Record):
    record: Literal["error"] = "error"
    kind: str
    exit_code: int
    message: str


class ViewWeights(BaseModel):
    words: List[List[float]]
    sentences: List[float]


class AttentionRecord(Record):
    record: Literal["attention"] = "attention"
    index: int
    user: str
    product: str
    gold: int
    predicted: int
    sentences: List[List[str]]
    views: Dict[str, ViewWeights]


class CorpusStatsRecord(Record):
    record: Literal["corpus_stats"] = "corpus_stats"
    path: str
    documents: int
    users: int
    products: int
    sentences_per_doc: float
    words_per_sentence: float
    label_histogram: List[int]


class TensorSpec(BaseModel):
    name: str
    shape: List[int]


class CheckpointHeader(BaseModel):
    format_version: int
    variant: Variant
    dims: ModelDims
    vocab_hashes: Dict[str, str]
    max_sentences: int = 40
    max_words: int = 50
    tensors: List[TensorSpec] = Field(default_factory=list)
