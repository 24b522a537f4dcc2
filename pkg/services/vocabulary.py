from collections import Counter
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple, Union
import hashlib
import json
import logging

import numpy as np
from pydantic import BaseModel

from models import EncodedDoc, EncodeStats, ReviewDoc
from utils.errors import DataError

PAD, UNK = "<pad>", "<unk>"
PAD_ID, UNK_ID = 0, 1
RESERVED = frozenset((PAD, UNK))
UNK_ENTITY_ID = 0

HEADER_PREFIX = "# huapa-vocab "
SECTIONS = ("words", "users", "products")

logger = logging.getLogger(__name__)


class VocabHeader(BaseModel):
    version: int = 1
    min_frequency: int
    words: int
    users: int
    products: int


class Vocabulary:
    """
    Dense id maps for words, users and products.

    Word ids 0 and 1 are PAD and UNK; user and product id 0 is UNK.
    """

    def __init__(
        self,
        words: List[str],
        users: List[str],
        products: List[str],
        min_frequency: int = 1,
        frequencies: Optional[Counter] = None,
    ):
        self.id_to_word = [PAD, UNK] + [w for w in words if w not in (PAD, UNK)]
        self.id_to_user = [UNK] + [u for u in users if u != UNK]
        self.id_to_product = [UNK] + [p for p in products if p != UNK]
        self.word_to_id = {w: i for i, w in enumerate(self.id_to_word)}
        self.user_to_id = {u: i for i, u in enumerate(self.id_to_user)}
        self.product_to_id = {p: i for i, p in enumerate(self.id_to_product)}
        self.min_frequency = min_frequency
        self.frequencies = frequencies or Counter()

    @property
    def n_words(self) -> int:
        return len(self.id_to_word)

    @property
    def n_users(self) -> int:
        return len(self.id_to_user)

    @property
    def n_products(self) -> int:
        return len(self.id_to_product)

    def word_id(self, token: str) -> int:
        # corpus text spelling a reserved token is just an unknown word
        if token in RESERVED:
            return UNK_ID
        return self.word_to_id.get(token, UNK_ID)

    def user_id(self, token: str) -> int:
        return self.user_to_id.get(token, UNK_ENTITY_ID)

    def product_id(self, token: str) -> int:
        return self.product_to_id.get(token, UNK_ENTITY_ID)

    def _tokens(self, section: str) -> List[str]:
        return {"words": self.id_to_word, "users": self.id_to_user, "products": self.id_to_product}[section]

    def hashes(self) -> Dict[str, str]:
        """sha256 per map over the id-ordered token list."""
        return {
            section: hashlib.sha256("\n".join(self._tokens(section)).encode("utf-8")).hexdigest()
            for section in SECTIONS
        }

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return all(self._tokens(s) == other._tokens(s) for s in SECTIONS)

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        header = VocabHeader(
            min_frequency=self.min_frequency,
            words=self.n_words,
            users=self.n_users,
            products=self.n_products,
        )
        with open(path, "w", encoding="utf-8") as f:
            f.write(HEADER_PREFIX + header.model_dump_json() + "\n")
            for section in SECTIONS:
                f.write(f"[{section}]\n")
                for i, token in enumerate(self._tokens(section)):
                    f.write(f"{token}\t{i}\n")
        logger.info(f"Saved vocabulary ({self.n_words} words, {self.n_users} users, {self.n_products} products) to {path}")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Vocabulary":
        path = Path(path)
        if not path.is_file():
            raise DataError(f"vocabulary not found: {path}")
        tables: Dict[str, List[str]] = {s: [] for s in SECTIONS}
        section = None
        with open(path, "r", encoding="utf-8") as f:
            first = f.readline().rstrip("\n")
            if not first.startswith(HEADER_PREFIX):
                raise DataError(f"{path}:1: missing vocabulary header")
            try:
                header = VocabHeader(**json.loads(first[len(HEADER_PREFIX):]))
            except (ValueError, TypeError) as e:
                raise DataError(f"{path}:1: bad vocabulary header: {str(e)}")
            for line_no, line in enumerate(f, start=2):
                line = line.rstrip("\n")
                if line.startswith("[") and line.endswith("]") and line[1:-1] in SECTIONS:
                    section = line[1:-1]
                    continue
                parts = line.split("\t")
                if section is None or len(parts) != 2:
                    raise DataError(f"{path}:{line_no}: expected 'token<TAB>id'")
                token, index = parts
                if not index.isdigit() or int(index) != len(tables[section]):
                    raise DataError(f"{path}:{line_no}: ids must be dense and ordered, got {index!r}")
                tables[section].append(token)

        counts = (len(tables["words"]), len(tables["users"]), len(tables["products"]))
        if counts != (header.words, header.users, header.products):
            raise DataError(f"{path}: header counts {header} do not match contents {counts}")
        if tables["words"][:2] != [PAD, UNK] or tables["users"][:1] != [UNK] or tables["products"][:1] != [UNK]:
            raise DataError(f"{path}: reserved ids are not in place")
        return cls(tables["words"], tables["users"], tables["products"], min_frequency=header.min_frequency)


def build_vocab(docs: Iterable[ReviewDoc], min_frequency: int = 2) -> Vocabulary:
    """
    Build id maps from the training split.

    Words are ordered by descending frequency, then lexically; words seen
    fewer than ``min_frequency`` times are left to UNK. Users and products are
    ordered lexically.
    """
    frequencies: Counter = Counter()
    users, products = set(), set()
    n_docs = 0
    for doc in docs:
        n_docs += 1
        users.add(doc.user)
        products.add(doc.product)
        for sentence in doc.sentences:
            frequencies.update(sentence)
    if n_docs == 0:
        raise DataError("cannot build a vocabulary from an empty training set")

    words = sorted((w for w, c in frequencies.items() if c >= min_frequency), key=lambda w: (-frequencies[w], w))
    vocab = Vocabulary(words, sorted(users), sorted(products), min_frequency=min_frequency, frequencies=frequencies)
    logger.info(
        f"Built vocabulary from {n_docs} documents: {vocab.n_words} words "
        f"({len(frequencies) - len(words)} below min frequency {min_frequency}), "
        f"{vocab.n_users} users, {vocab.n_products} products"
    )
    return vocab


def encode_document(
    doc: ReviewDoc,
    vocab: Vocabulary,
    max_sentences: int = 40,
    max_words: int = 50,
    stats: Optional[EncodeStats] = None,
) -> EncodedDoc:
    """Map one review to ids, keeping the first ``max_sentences`` sentences and ``max_words`` words of each."""
    stats = stats if stats is not None else EncodeStats()
    stats.documents += 1
    if len(doc.sentences) > max_sentences:
        stats.truncated_documents += 1

    sentences = []
    for sentence in doc.sentences[:max_sentences]:
        if len(sentence) > max_words:
            stats.truncated_sentences += 1
        ids = np.array([vocab.word_id(token) for token in sentence[:max_words]], dtype=np.int64)
        stats.total_words += len(ids)
        stats.unknown_words += int((ids == UNK_ID).sum())
        sentences.append(ids)

    user_id = vocab.user_id(doc.user)
    product_id = vocab.product_id(doc.product)
    stats.unknown_users += int(user_id == UNK_ENTITY_ID)
    stats.unknown_products += int(product_id == UNK_ENTITY_ID)

    return EncodedDoc(
        user_id=user_id,
        product_id=product_id,
        label=doc.label,
        sentences=tuple(sentences),
        max_sentences=max_sentences,
        max_words=max_words,
    )


def encode(
    docs: Iterable[ReviewDoc],
    vocab: Vocabulary,
    max_sentences: int = 40,
    max_words: int = 50,
) -> Tuple[List[EncodedDoc], EncodeStats]:
    stats = EncodeStats()
    encoded = [encode_document(doc, vocab, max_sentences, max_words, stats) for doc in docs]
    return encoded, stats
