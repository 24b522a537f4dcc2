from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator


class ReviewDoc(BaseModel):
    """One review: author, subject, 0-based label and tokenized sentences."""

    model_config = ConfigDict(frozen=True)

    user: str
    product: str
    label: int = Field(ge=0)
    sentences: List[List[str]]

    @field_validator("sentences")
    @classmethod
    def non_empty(cls, sentences: List[List[str]]) -> List[List[str]]:
        if not sentences:
            raise ValueError("review has no sentences")
        if any(not sentence for sentence in sentences):
            raise ValueError("review has an empty sentence")
        return sentences


@dataclass(frozen=True)
class EncodedDoc:
    """
    A review mapped to ids.

    Sentences are stored ragged (already truncated); the padded grid and masks
    of shape [max_sentences × max_words] are built on demand.
    """

    user_id: int
    product_id: int
    label: int
    sentences: Tuple[np.ndarray, ...]
    max_sentences: int = 40
    max_words: int = 50

    @property
    def sentence_lengths(self) -> List[int]:
        return [len(s) for s in self.sentences]

    def word_grid(self) -> np.ndarray:
        grid = np.zeros((self.max_sentences, self.max_words), dtype=np.int64)
        for i, sentence in enumerate(self.sentences):
            grid[i, : len(sentence)] = sentence
        return grid

    def word_mask(self) -> np.ndarray:
        mask = np.zeros((self.max_sentences, self.max_words), dtype=bool)
        for i, sentence in enumerate(self.sentences):
            mask[i, : len(sentence)] = True
        return mask

    def sentence_mask(self) -> np.ndarray:
        mask = np.zeros(self.max_sentences, dtype=bool)
        mask[: len(self.sentences)] = True
        return mask


class EncodeStats(BaseModel):
    documents: int = 0
    truncated_documents: int = 0
    truncated_sentences: int = 0
    total_words: int = 0
    unknown_words: int = 0
    unknown_users: int = 0
    unknown_products: int = 0

    @property
    def unk_rate(self) -> float:
        return self.unknown_words / self.total_words if self.total_words else 0.0
