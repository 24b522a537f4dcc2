"""
Hierarchical user attention and product attention network.

A review is encoded twice, once per view. Inside a view, a word-level BiLSTM
and attention pooling produce one vector per sentence; a sentence-level BiLSTM
and attention pooling produce the document vector. Attention scores are
conditioned on the user embedding in the user view and on the product
embedding in the product view. The two document vectors are concatenated for
the main classifier; each view also feeds its own auxiliary classifier.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union
import logging

import numpy as np

from models import CheckpointHeader, EncodedDoc, ModelDims, Variant
from services.vocabulary import PAD_ID, Vocabulary
from utils.autodiff import Tape, Value, parameter
from utils.checkpoint import FORMAT_VERSION, read_checkpoint, write_checkpoint
from utils.errors import CheckpointError, DataError, ShapeError

# (branch name, attention context, pooling) per architecture
VARIANT_LAYOUT: Dict[Variant, Tuple[Tuple[str, Optional[str], str], ...]] = {
    Variant.HUAPA: (("user", "user", "attention"), ("product", "product", "attention")),
    Variant.HUA: (("user", "user", "attention"),),
    Variant.HPA: (("product", "product", "attention"),),
    Variant.NO_ATTENTION: (("text", None, "mean"),),
    Variant.LOCAL_ATTENTION: (("text", None, "attention"),),
}

JOINT_HEAD = "joint"


def _uniform(rng: np.random.Generator, init_range: float, shape: Tuple[int, ...]) -> np.ndarray:
    return rng.uniform(-init_range, init_range, size=shape)


@dataclass
class LstmParams:
    """Gates i, f, o stacked in W [3H × (H+D)]; candidate weights Wc [H × (H+D)]."""

    W: Value
    b: Value
    Wc: Value
    bc: Value

    @property
    def hidden(self) -> int:
        return self.Wc.shape[0]

    @classmethod
    def initialize(cls, rng: np.random.Generator, input_dim: int, hidden: int, init_range: float, prefix: str) -> "LstmParams":
        return cls(
            W=parameter(_uniform(rng, init_range, (3 * hidden, hidden + input_dim)), f"{prefix}.W"),
            b=parameter(np.zeros(3 * hidden), f"{prefix}.b"),
            Wc=parameter(_uniform(rng, init_range, (hidden, hidden + input_dim)), f"{prefix}.Wc"),
            bc=parameter(np.zeros(hidden), f"{prefix}.bc"),
        )

    def parameters(self) -> List[Value]:
        return [self.W, self.b, self.Wc, self.bc]


@dataclass
class AttentionParams:
    """Score e(h, c) = vᵀ tanh(Wh·h + Wu·c + bw); Wu is absent for context-free attention."""

    v: Value
    Wh: Value
    bw: Value
    Wu: Optional[Value] = None

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        state_dim: int,
        context_dim: Optional[int],
        attention_dim: int,
        init_range: float,
        prefix: str,
    ) -> "AttentionParams":
        return cls(
            v=parameter(_uniform(rng, init_range, (attention_dim,)), f"{prefix}.v"),
            Wh=parameter(_uniform(rng, init_range, (attention_dim, state_dim)), f"{prefix}.Wh"),
            bw=parameter(np.zeros(attention_dim), f"{prefix}.bw"),
            Wu=None if context_dim is None else parameter(
                _uniform(rng, init_range, (attention_dim, context_dim)), f"{prefix}.Wu"
            ),
        )

    def parameters(self) -> List[Value]:
        return [p for p in (self.v, self.Wh, self.Wu, self.bw) if p is not None]


@dataclass
class BranchParams:
    """One hierarchical encoder: word and sentence BiLSTMs plus their pooling."""

    context: Optional[str]
    word_fwd: LstmParams
    word_bwd: LstmParams
    sent_fwd: LstmParams
    sent_bwd: LstmParams
    word_attention: Optional[AttentionParams] = None
    sentence_attention: Optional[AttentionParams] = None

    @classmethod
    def initialize(
        cls,
        rng: np.random.Generator,
        dims: ModelDims,
        context: Optional[str],
        pooling: str,
        init_range: float,
        name: str,
    ) -> "BranchParams":
        hidden = dims.hidden
        context_dim = {"user": dims.user, "product": dims.product, None: None}[context]
        word_fwd = LstmParams.initialize(rng, dims.word, hidden, init_range, f"{name}.word.fwd")
        word_bwd = LstmParams.initialize(rng, dims.word, hidden, init_range, f"{name}.word.bwd")
        word_attention = None
        if pooling == "attention":
            word_attention = AttentionParams.initialize(
                rng, 2 * hidden, context_dim, dims.attention, init_range, f"{name}.word.attn"
            )
        sent_fwd = LstmParams.initialize(rng, 2 * hidden, hidden, init_range, f"{name}.sent.fwd")
        sent_bwd = LstmParams.initialize(rng, 2 * hidden, hidden, init_range, f"{name}.sent.bwd")
        sentence_attention = None
        if pooling == "attention":
            sentence_attention = AttentionParams.initialize(
                rng, 2 * hidden, context_dim, dims.attention, init_range, f"{name}.sent.attn"
            )
        return cls(context, word_fwd, word_bwd, sent_fwd, sent_bwd, word_attention, sentence_attention)

    def parameters(self) -> List[Value]:
        found = self.word_fwd.parameters() + self.word_bwd.parameters()
        if self.word_attention is not None:
            found += self.word_attention.parameters()
        found += self.sent_fwd.parameters() + self.sent_bwd.parameters()
        if self.sentence_attention is not None:
            found += self.sentence_attention.parameters()
        return found


@dataclass
class Head:
    W: Value
    b: Value

    @classmethod
    def initialize(cls, rng: np.random.Generator, classes: int, input_dim: int, init_range: float, name: str) -> "Head":
        return cls(
            W=parameter(_uniform(rng, init_range, (classes, input_dim)), f"head.{name}.W"),
            b=parameter(np.zeros(classes), f"head.{name}.b"),
        )


@dataclass
class HuapaParams:
    variant: Variant
    dims: ModelDims
    word_embeddings: Value
    user_embeddings: Optional[Value]
    product_embeddings: Optional[Value]
    branches: Dict[str, BranchParams]
    heads: Dict[str, Head]

    @classmethod
    def initialize(
        cls,
        variant: Variant,
        dims: ModelDims,
        n_words: int,
        n_users: int,
        n_products: int,
        seed: int = 1,
        init_range: float = 0.01,
        word_embeddings: Optional[np.ndarray] = None,
    ) -> "HuapaParams":
        """
        Build every parameter for an architecture.

        Weight matrices and user/product embeddings are drawn from
        U(-init_range, init_range); biases start at zero. The word table is
        frozen and taken from ``word_embeddings`` when given.
        """
        rng = np.random.default_rng(seed)
        if word_embeddings is None:
            word_embeddings = _uniform(rng, init_range, (n_words, dims.word))
            word_embeddings[PAD_ID] = 0.0
        elif word_embeddings.shape != (n_words, dims.word):
            raise ShapeError(f"word embeddings have shape {word_embeddings.shape}, expected {(n_words, dims.word)}")
        words = Value(np.array(word_embeddings, dtype=np.float64), requires_grad=False, name="embed.word")

        layout = VARIANT_LAYOUT[variant]
        contexts = {context for _, context, _ in layout}
        users = parameter(_uniform(rng, init_range, (n_users, dims.user)), "embed.user") if "user" in contexts else None
        products = (
            parameter(_uniform(rng, init_range, (n_products, dims.product)), "embed.product")
            if "product" in contexts else None
        )
        branches = {
            name: BranchParams.initialize(rng, dims, context, pooling, init_range, name)
            for name, context, pooling in layout
        }

        view_dim = 2 * dims.hidden
        heads = {}
        if variant is Variant.HUAPA:
            heads[JOINT_HEAD] = Head.initialize(rng, dims.classes, 2 * view_dim, init_range, JOINT_HEAD)
        for name in branches:
            heads[name] = Head.initialize(rng, dims.classes, view_dim, init_range, name)
        return cls(variant, dims, words, users, products, branches, heads)

    def named_parameters(self, include_frozen: bool = False) -> Dict[str, Value]:
        found: List[Value] = [self.word_embeddings] if include_frozen else []
        found += [p for p in (self.user_embeddings, self.product_embeddings) if p is not None]
        for branch in self.branches.values():
            found += branch.parameters()
        for head in self.heads.values():
            found += [head.W, head.b]
        return {p.name: p for p in found}

    def trainable(self) -> Dict[str, Value]:
        return self.named_parameters(include_frozen=False)

    def parameter_count(self, include_frozen: bool = True) -> int:
        return sum(p.size for p in self.named_parameters(include_frozen).values())

    def snapshot(self) -> Dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.trainable().items()}

    def restore(self, snapshot: Dict[str, np.ndarray]) -> None:
        for name, p in self.trainable().items():
            p.data[...] = snapshot[name]

    def tensors(self) -> Dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters(include_frozen=True).items()}

    def load_tensors(self, tensors: Dict[str, np.ndarray]) -> None:
        expected = self.named_parameters(include_frozen=True)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            unexpected = sorted(set(tensors) - set(expected))
            raise CheckpointError(f"checkpoint tensors do not match architecture: missing {missing}, unexpected {unexpected}")
        for name, p in expected.items():
            if tensors[name].shape != p.shape:
                raise CheckpointError(f"tensor '{name}' has shape {tensors[name].shape}, expected {p.shape}")
            p.data[...] = tensors[name]


@dataclass
class ViewTrace:
    """Attention weights of one view, padded with zeros to the encoding grid."""

    word_weights: List[np.ndarray]
    sentence_weights: np.ndarray


@dataclass
class AttentionTrace:
    views: Dict[str, ViewTrace] = field(default_factory=dict)

    @property
    def user(self) -> Optional[ViewTrace]:
        return self.views.get("user")

    @property
    def product(self) -> Optional[ViewTrace]:
        return self.views.get("product")


@dataclass
class ForwardOutput:
    p: Value
    d: Value
    trace: AttentionTrace
    p_u: Optional[Value] = None
    p_p: Optional[Value] = None
    d_u: Optional[Value] = None
    d_p: Optional[Value] = None


def lookup(tape: Tape, table: Value, index: int) -> Value:
    return tape.reshape(tape.gather_rows(table, [index]), (table.shape[1],))


def lstm_step(tape: Tape, params: LstmParams, x_t: Value, h_prev: Value, c_prev: Value) -> Tuple[Value, Value]:
    """One LSTM update; returns (h_t, c_t)."""
    if h_prev.shape != (params.hidden,) or c_prev.shape != (params.hidden,):
        raise ShapeError(f"lstm_step: state shapes {h_prev.shape}/{c_prev.shape}, expected ({params.hidden},)")
    if x_t.data.ndim != 1 or params.hidden + x_t.shape[0] != params.W.shape[1]:
        raise ShapeError(f"lstm_step: input {x_t.shape} does not fit W {params.W.shape}")

    z = tape.concat_cols(h_prev, x_t)
    gates = tape.sigmoid(tape.elem_add(tape.matmul(params.W, z), params.b))
    i, f, o = tape.chunk(gates, 3)
    candidate = tape.tanh(tape.elem_add(tape.matmul(params.Wc, z), params.bc))
    c_t = tape.elem_add(tape.elem_mul(f, c_prev), tape.elem_mul(i, candidate))
    h_t = tape.elem_mul(o, tape.tanh(c_t))
    return h_t, c_t


def _unroll(tape: Tape, params: LstmParams, xs: Sequence[Value]) -> List[Value]:
    h = c = tape.constant(np.zeros(params.hidden))
    states = []
    for x in xs:
        h, c = lstm_step(tape, params, x, h, c)
        states.append(h)
    return states


def bilstm_encode(
    tape: Tape,
    fwd: LstmParams,
    bwd: LstmParams,
    xs: Sequence[Value],
    valid_len: int,
) -> List[Value]:
    """
    Forward and backward LSTM over the first ``valid_len`` inputs.

    output[t] = [→h_t; ←h_t]; padded positions are zero constants that never
    enter either recurrence.
    """
    if valid_len <= 0:
        raise DataError("empty sequence")
    if valid_len > len(xs):
        raise ShapeError(f"bilstm_encode: valid_len {valid_len} exceeds sequence length {len(xs)}")
    seq = list(xs[:valid_len])
    forward = _unroll(tape, fwd, seq)
    backward = _unroll(tape, bwd, seq[::-1])[::-1]
    outputs = [tape.concat_cols(f, b) for f, b in zip(forward, backward)]
    if valid_len < len(xs):
        pad = tape.constant(np.zeros(fwd.hidden + bwd.hidden))
        outputs += [pad] * (len(xs) - valid_len)
    return outputs


def attention_pool(
    tape: Tape,
    ap: AttentionParams,
    hs: Sequence[Value],
    ctx: Optional[Value],
    mask: Sequence[bool],
) -> Tuple[Value, Value]:
    """Weighted sum of hidden states under context-conditioned attention; returns (pooled, weights)."""
    if len(hs) != len(mask):
        raise ShapeError(f"attention_pool: {len(hs)} states but mask of length {len(mask)}")
    states = tape.stack_rows(hs)
    projected = tape.matmul(states, tape.transpose(ap.Wh))
    shift = ap.bw
    if ap.Wu is not None and ctx is not None:
        shift = tape.elem_add(tape.matmul(ap.Wu, ctx), ap.bw)
    scores = tape.matmul(tape.tanh(tape.add_bias(projected, shift)), ap.v)
    weights = tape.masked_softmax(scores, mask)
    return tape.weighted_sum(states, weights), weights


def mean_pool(tape: Tape, hs: Sequence[Value], mask: Sequence[bool]) -> Tuple[Value, Value]:
    support = np.asarray(mask, dtype=bool)
    if len(hs) != len(support):
        raise ShapeError(f"mean_pool: {len(hs)} states but mask of length {len(support)}")
    if not support.any():
        raise DataError("empty sequence")
    weights = tape.constant(support / support.sum())
    return tape.weighted_sum(tape.stack_rows(hs), weights), weights


def _pool(
    tape: Tape,
    attention: Optional[AttentionParams],
    hs: Sequence[Value],
    ctx: Optional[Value],
) -> Tuple[Value, Value]:
    mask = np.ones(len(hs), dtype=bool)
    if attention is None:
        return mean_pool(tape, hs, mask)
    return attention_pool(tape, attention, hs, ctx, mask)


def _padded(weights: np.ndarray, width: int) -> np.ndarray:
    out = np.zeros(max(width, len(weights)))
    out[: len(weights)] = weights
    return out


def encode_document_view(
    tape: Tape,
    branch: BranchParams,
    word_embeddings: Value,
    doc: EncodedDoc,
    ctx: Optional[Value],
) -> Tuple[Value, List[np.ndarray], np.ndarray]:
    """
    Encode one document under one view.

    ``ctx`` conditions attention at both the word and the sentence level.

    Returns:
        Tuple[Value, List[np.ndarray], np.ndarray]: document vector [2H],
            per-sentence word weights and sentence weights, zero-padded to the grid.
    """
    if not doc.sentences:
        raise DataError("document has no sentences")
    sentence_vectors = []
    word_weights = []
    for ids in doc.sentences:
        xs = [lookup(tape, word_embeddings, int(i)) for i in ids]
        hs = bilstm_encode(tape, branch.word_fwd, branch.word_bwd, xs, len(xs))
        pooled, alpha = _pool(tape, branch.word_attention, hs, ctx)
        sentence_vectors.append(pooled)
        word_weights.append(_padded(alpha.data, doc.max_words))

    hs = bilstm_encode(tape, branch.sent_fwd, branch.sent_bwd, sentence_vectors, len(sentence_vectors))
    d_view, beta = _pool(tape, branch.sentence_attention, hs, ctx)
    return d_view, word_weights, _padded(beta.data, doc.max_sentences)


def _classify(tape: Tape, head: Head, d: Value) -> Value:
    return tape.softmax(tape.elem_add(tape.matmul(head.W, d), head.b))


def forward_huapa(tape: Tape, params: HuapaParams, doc: EncodedDoc) -> ForwardOutput:
    encodings = {}
    for name, branch in params.branches.items():
        ctx = None
        if branch.context == "user":
            ctx = lookup(tape, params.user_embeddings, doc.user_id)
        elif branch.context == "product":
            ctx = lookup(tape, params.product_embeddings, doc.product_id)
        encodings[name] = encode_document_view(tape, branch, params.word_embeddings, doc, ctx)

    trace = AttentionTrace({name: ViewTrace(words, sentences) for name, (_, words, sentences) in encodings.items()})
    d_u = encodings["user"][0] if "user" in encodings else None
    d_p = encodings["product"][0] if "product" in encodings else None

    if params.variant is Variant.HUAPA:
        d = tape.concat_cols(d_u, d_p)
        return ForwardOutput(
            p=_classify(tape, params.heads[JOINT_HEAD], d),
            d=d,
            trace=trace,
            p_u=_classify(tape, params.heads["user"], d_u),
            p_p=_classify(tape, params.heads["product"], d_p),
            d_u=d_u,
            d_p=d_p,
        )

    (name, (d, _, _)), = encodings.items()
    return ForwardOutput(p=_classify(tape, params.heads[name], d), d=d, trace=trace, d_u=d_u, d_p=d_p)


def loss_components(tape: Tape, out: ForwardOutput, gold: int) -> Tuple[Value, Optional[Value], Optional[Value]]:
    """Cross-entropy of the main head and, when present, of the user and product heads."""
    loss1 = tape.cross_entropy(out.p, gold)
    loss2 = tape.cross_entropy(out.p_u, gold) if out.p_u is not None else None
    loss3 = tape.cross_entropy(out.p_p, gold) if out.p_p is not None else None
    return loss1, loss2, loss3


def combined_loss(
    tape: Tape,
    out: ForwardOutput,
    gold: int,
    lambdas: Tuple[float, float, float],
    components: Optional[Tuple[Value, Optional[Value], Optional[Value]]] = None,
) -> Value:
    """
    λ1·loss1 + λ2·loss2 + λ3·loss3.

    Terms with zero weight stay out of the graph. Single-head architectures
    return loss1 unweighted.
    """
    loss1, loss2, loss3 = components if components is not None else loss_components(tape, out, gold)
    if loss2 is None and loss3 is None:
        return loss1
    total = None
    for weight, term in zip(lambdas, (loss1, loss2, loss3)):
        if term is None or weight == 0:
            continue
        scaled = tape.scale(term, weight)
        total = scaled if total is None else tape.elem_add(total, scaled)
    return total


def predict(out: ForwardOutput) -> int:
    """Argmax of the main head; ties go to the lowest class."""
    return int(np.argmax(out.p.data))


class HuapaNetwork:
    def __init__(self, params: HuapaParams):
        self.logger = logging.getLogger(self.__class__.__name__)
        self.params = params

    @classmethod
    def create(
        cls,
        variant: Variant,
        dims: ModelDims,
        vocab: Vocabulary,
        word_embeddings: Optional[np.ndarray] = None,
        seed: int = 1,
        init_range: float = 0.01,
    ) -> "HuapaNetwork":
        params = HuapaParams.initialize(
            variant, dims, vocab.n_words, vocab.n_users, vocab.n_products,
            seed=seed, init_range=init_range, word_embeddings=word_embeddings,
        )
        network = cls(params)
        network.logger.info(
            f"Initialized {variant.value} network: {params.parameter_count(include_frozen=False)} trainable parameters"
        )
        return network

    @property
    def variant(self) -> Variant:
        return self.params.variant

    @property
    def classes(self) -> int:
        return self.params.dims.classes

    def forward(self, doc: EncodedDoc, tape: Optional[Tape] = None) -> ForwardOutput:
        return forward_huapa(tape if tape is not None else Tape(), self.params, doc)

    def predict(self, doc: EncodedDoc) -> int:
        return predict(self.forward(doc))

    def save(self, path: Union[str, Path], vocab: Vocabulary, max_sentences: int = 40, max_words: int = 50) -> None:
        header = CheckpointHeader(
            format_version=FORMAT_VERSION,
            variant=self.params.variant,
            dims=self.params.dims,
            vocab_hashes=vocab.hashes(),
            max_sentences=max_sentences,
            max_words=max_words,
        )
        write_checkpoint(path, header, self.params.tensors())

    @classmethod
    def load(cls, path: Union[str, Path], vocab: Optional[Vocabulary] = None) -> Tuple["HuapaNetwork", CheckpointHeader]:
        """
        Restore a network, refusing checkpoints built against another vocabulary.

        Args:
            path (Union[str, Path]): Checkpoint file
            vocab (Optional[Vocabulary]): Vocabulary the caller will encode with

        Returns:
            Tuple[HuapaNetwork, CheckpointHeader]: Network and its header
        """
        header, tensors = read_checkpoint(path)
        if vocab is not None:
            actual = vocab.hashes()
            for section, digest in header.vocab_hashes.items():
                if actual.get(section) != digest:
                    raise CheckpointError(f"{path}: vocabulary hash mismatch for {section}")

        def rows(name: str) -> int:
            return tensors[name].shape[0] if name in tensors else 1

        if "embed.word" not in tensors:
            raise CheckpointError(f"{path}: checkpoint has no word embedding table")
        try:
            params = HuapaParams.initialize(
                header.variant, header.dims, rows("embed.word"), rows("embed.user"), rows("embed.product"),
                word_embeddings=tensors["embed.word"],
            )
        except ShapeError as e:
            raise CheckpointError(f"{path}: {e.message}")
        params.load_tensors(tensors)
        network = cls(params)
        network.logger.info(f"Loaded {header.variant.value} checkpoint from {path}")
        return network, header
