"""
Synthetic review corpus in which users and products shift ratings.

Each user has a latent bias in {-1, 0, +1} and each product a latent quality in
{-1, 0, +1}. A document draws a base sentiment level, writes words from that
level's token pool plus filler, mentions a user-marker and a product-marker
token, and is labelled clamp(base + bias + quality, 0, C - 1).
"""
from dataclasses import dataclass, field
from typing import Dict, List, Tuple
import logging

import numpy as np

from models import ReviewDoc

LEVELS = (-1, 0, 1)
FILLER_POOL = 20
SENTIMENT_POOL = 6

logger = logging.getLogger(__name__)


@dataclass
class SyntheticCorpus:
    train: List[ReviewDoc]
    dev: List[ReviewDoc]
    test: List[ReviewDoc]
    user_bias: Dict[str, int] = field(default_factory=dict)
    product_quality: Dict[str, int] = field(default_factory=dict)

    @property
    def all_docs(self) -> List[ReviewDoc]:
        return self.train + self.dev + self.test


def user_token(u: int) -> str:
    return f"user{u}"


def product_token(p: int) -> str:
    return f"item{p}"


def user_marker(user: str) -> str:
    return f"mark_{user}"


def product_marker(product: str) -> str:
    return f"mark_{product}"


def sentiment_token(level: int, k: int) -> str:
    return f"senti{level}_{k}"


def sentiment_level(token: str) -> int:
    """Inverse of ``sentiment_token``; -1 for any other token."""
    if not token.startswith("senti"):
        return -1
    return int(token[len("senti"):].split("_")[0])


def _assign_levels(rng: np.random.Generator, n: int, biased: bool) -> np.ndarray:
    if not biased:
        return np.zeros(n, dtype=np.int64)
    return rng.permutation(np.resize(np.array(LEVELS), n))


def _sentences(
    rng: np.random.Generator,
    base: int,
    user: str,
    product: str,
) -> List[List[str]]:
    n_sentences = int(rng.integers(1, 4))
    sentences = []
    for _ in range(n_sentences):
        words = [f"filler{int(k)}" for k in rng.integers(0, FILLER_POOL, size=int(rng.integers(2, 5)))]
        for _ in range(int(rng.integers(1, 3))):
            words.insert(int(rng.integers(0, len(words) + 1)), sentiment_token(base, int(rng.integers(0, SENTIMENT_POOL))))
        sentences.append(words)
    for marker in (user_marker(user), product_marker(product)):
        target = sentences[int(rng.integers(0, n_sentences))]
        target.insert(int(rng.integers(0, len(target) + 1)), marker)
    return sentences


def gen_synthetic(
    seed: int,
    n_users: int,
    n_products: int,
    n_docs: int,
    classes: int,
    biased: bool = True,
    fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1),
) -> SyntheticCorpus:
    """
    Generate a deterministic train/dev/test corpus.

    With at least three users and three products, the first ``classes``
    documents are written by a neutral user about a neutral product with
    base levels 0..C-1, so every label occurs.
    """
    if classes < 2:
        raise ValueError(f"need at least 2 classes, got {classes}")
    rng = np.random.default_rng(seed)

    users = [user_token(u) for u in range(n_users)]
    products = [product_token(p) for p in range(n_products)]
    user_bias = dict(zip(users, (int(b) for b in _assign_levels(rng, n_users, biased))))
    product_quality = dict(zip(products, (int(q) for q in _assign_levels(rng, n_products, biased))))
    neutral_users = [u for u in users if user_bias[u] == 0]
    neutral_products = [p for p in products if product_quality[p] == 0]

    docs = []
    for k in range(n_docs):
        if k < classes and neutral_users and neutral_products:
            user = neutral_users[int(rng.integers(0, len(neutral_users)))]
            product = neutral_products[int(rng.integers(0, len(neutral_products)))]
            base = k
        else:
            user = users[int(rng.integers(0, n_users))]
            product = products[int(rng.integers(0, n_products))]
            base = int(rng.integers(0, classes))
        label = int(np.clip(base + user_bias[user] + product_quality[product], 0, classes - 1))
        docs.append(ReviewDoc(user=user, product=product, label=label, sentences=_sentences(rng, base, user, product)))

    order = rng.permutation(n_docs)
    docs = [docs[i] for i in order]
    n_train = int(round(fractions[0] * n_docs))
    n_dev = int(round(fractions[1] * n_docs))
    logger.info(f"Generated {n_docs} synthetic documents ({n_users} users, {n_products} products, {classes} classes)")
    return SyntheticCorpus(
        train=docs[:n_train],
        dev=docs[n_train:n_train + n_dev],
        test=docs[n_train + n_dev:],
        user_bias=user_bias,
        product_quality=product_quality,
    )
