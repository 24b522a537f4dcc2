from pathlib import Path
from typing import Optional, Tuple, Union
import logging

import numpy as np

from services.vocabulary import PAD_ID, Vocabulary
from utils.errors import DataError


class EmbeddingService:
    def __init__(self, dim: int = 200, init_range: float = 0.01, seed: int = 1):
        """
        Initialize the embedding service.

        Args:
            dim (int): Expected vector dimension
            init_range (float): Rows missing from the file are drawn from U(-init_range, init_range)
            seed (int): Seed for the random rows
        """
        self.logger = logging.getLogger(self.__class__.__name__)
        self.dim = dim
        self.init_range = init_range
        self.seed = seed

    def load_embeddings(
        self,
        path: Optional[Union[str, Path]],
        vocab: Vocabulary,
    ) -> Tuple[np.ndarray, int]:
        """
        Build the word embedding table for a vocabulary from a text embedding file.

        The file has an optional "count dim" header line followed by lines of
        "token v1 ... v_dim". Tokens outside the vocabulary are skipped.

        Args:
            path (Optional[Union[str, Path]]): Embedding file, or None for a fully random table
            vocab (Vocabulary): Vocabulary whose word ids index the rows

        Returns:
            Tuple[np.ndarray, int]: [V_w × dim] table and the number of randomly initialized rows
        """
        rng = np.random.default_rng(self.seed)
        table = rng.uniform(-self.init_range, self.init_range, size=(vocab.n_words, self.dim))
        found = np.zeros(vocab.n_words, dtype=bool)

        if path is not None:
            path = Path(path)
            if not path.is_file():
                raise DataError(f"embedding file not found: {path}")
            try:
                with open(path, "r", encoding="utf-8") as f:
                    for line_no, line in enumerate(f, start=1):
                        parts = line.rstrip().split(" ")
                        if not line.strip():
                            continue
                        if line_no == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
                            if int(parts[1]) != self.dim:
                                raise DataError(f"{path}:1: dimension mismatch, file has {parts[1]}, expected {self.dim}")
                            continue
                        token, values = parts[0], parts[1:]
                        if len(values) != self.dim:
                            raise DataError(f"{path}:{line_no}: dimension mismatch, found {len(values)} values, expected {self.dim}")
                        index = vocab.word_to_id.get(token)
                        if index is None:
                            continue
                        try:
                            table[index] = np.array(values, dtype=np.float64)
                        except ValueError:
                            raise DataError(f"{path}:{line_no}: malformed vector for token {token!r}")
                        found[index] = True
            except UnicodeDecodeError as e:
                raise DataError(f"{path}: not valid UTF-8: {str(e)}")

        table[PAD_ID] = 0.0
        found[PAD_ID] = True
        missing = int((~found).sum())
        self.logger.info(f"Word embeddings: {vocab.n_words} rows, {missing} randomly initialized")
        return table, missing
