import numpy as np

from models import EncodedDoc, ModelDims, Variant
from services.network import HuapaParams

TOY_DIMS = ModelDims(word=5, user=4, product=4, hidden=4, attention=4, classes=3)
TOY_WORDS, TOY_USERS, TOY_PRODUCTS = 20, 3, 3


def random_doc(
    rng: np.random.Generator,
    n_words: int = TOY_WORDS,
    n_users: int = TOY_USERS,
    n_products: int = TOY_PRODUCTS,
    classes: int = 3,
    max_sentences: int = 3,
    max_words: int = 4,
) -> EncodedDoc:
    sentences = tuple(
        rng.integers(2, n_words, size=int(rng.integers(1, max_words + 1)))
        for _ in range(int(rng.integers(1, max_sentences + 1)))
    )
    return EncodedDoc(
        user_id=int(rng.integers(0, n_users)),
        product_id=int(rng.integers(0, n_products)),
        label=int(rng.integers(0, classes)),
        sentences=sentences,
        max_sentences=max_sentences,
        max_words=max_words,
    )


def toy_params(variant: Variant = Variant.HUAPA, seed: int = 7, init_range: float = 0.5) -> HuapaParams:
    return HuapaParams.initialize(
        variant, TOY_DIMS, TOY_WORDS, TOY_USERS, TOY_PRODUCTS, seed=seed, init_range=init_range
    )
