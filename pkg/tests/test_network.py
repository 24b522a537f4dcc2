import dataclasses
import math

import numpy as np
import numpy.testing as npt
import pytest

from models import EncodedDoc, ModelDims, Variant
from services.network import (
    JOINT_HEAD,
    AttentionParams,
    AttentionTrace,
    ForwardOutput,
    HuapaNetwork,
    HuapaParams,
    LstmParams,
    attention_pool,
    bilstm_encode,
    combined_loss,
    encode_document_view,
    forward_huapa,
    lookup,
    lstm_step,
    predict,
)
from services.vocabulary import Vocabulary
from tests import oracle
from tests.factories import TOY_DIMS, TOY_PRODUCTS, TOY_USERS, TOY_WORDS, random_doc, toy_params
from utils.autodiff import Tape, Value, clear_grads, parameter
from utils.errors import CheckpointError, DataError, EmptySupportError, IndexOutOfRangeError, ShapeError
from utils.gradcheck import grad_check


def zero_lstm(hidden: int, input_dim: int) -> LstmParams:
    return LstmParams(
        W=parameter(np.zeros((3 * hidden, hidden + input_dim))),
        b=parameter(np.zeros(3 * hidden)),
        Wc=parameter(np.zeros((hidden, hidden + input_dim))),
        bc=parameter(np.zeros(hidden)),
    )


def random_lstm(rng, hidden: int, input_dim: int) -> LstmParams:
    return LstmParams.initialize(rng, input_dim, hidden, 0.8, "lstm")


def toy_vocab() -> Vocabulary:
    return Vocabulary(
        [f"w{i}" for i in range(TOY_WORDS - 2)],
        [f"u{i}" for i in range(TOY_USERS - 1)],
        [f"p{i}" for i in range(TOY_PRODUCTS - 1)],
    )


# lstm_step

def test_lstm_step_zero_params_zero_state():
    tape = Tape()
    h, c = lstm_step(tape, zero_lstm(1, 2), Value([0.3, -0.2]), Value([0.0]), Value([0.0]))
    assert h.data[0] == 0.0 and c.data[0] == 0.0


def test_lstm_step_zero_params_carries_half_the_cell():
    tape = Tape()
    h, c = lstm_step(tape, zero_lstm(1, 2), Value([0.3, -0.2]), Value([0.0]), Value([1.0]))
    assert c.data[0] == pytest.approx(0.5)
    assert h.data[0] == pytest.approx(0.5 * math.tanh(0.5))
    assert h.data[0] == pytest.approx(0.23105, abs=1e-5)


def test_lstm_step_matches_scalar_oracle(rng):
    params = random_lstm(rng, 3, 3)
    x, h0, c0 = rng.normal(size=3), rng.normal(size=3), rng.normal(size=3)
    h, c = lstm_step(Tape(), params, Value(x), Value(h0), Value(c0))
    h_ref, c_ref = oracle.scalar_lstm_step(params.W.data, params.b.data, params.Wc.data, params.bc.data, x, h0, c0)
    npt.assert_allclose(h.data, h_ref, rtol=0, atol=1e-12)
    npt.assert_allclose(c.data, c_ref, rtol=0, atol=1e-12)


def test_lstm_step_rejects_wrong_input_width():
    with pytest.raises(ShapeError, match="lstm_step"):
        lstm_step(Tape(), zero_lstm(2, 3), Value(np.zeros(4)), Value(np.zeros(2)), Value(np.zeros(2)))


# bilstm_encode

def scalar_run(params: LstmParams, xs):
    h = c = [0.0] * params.hidden
    states = []
    for x in xs:
        h, c = oracle.scalar_lstm_step(params.W.data, params.b.data, params.Wc.data, params.bc.data, x, h, c)
        states.append(h)
    return states


def test_bilstm_single_element(rng):
    fwd, bwd = random_lstm(rng, 2, 3), random_lstm(rng, 2, 3)
    x = rng.normal(size=3)
    out = bilstm_encode(Tape(), fwd, bwd, [Value(x)], 1)
    assert len(out) == 1
    npt.assert_allclose(out[0].data, np.concatenate([scalar_run(fwd, [x])[0], scalar_run(bwd, [x])[0]]), atol=1e-12)


def test_bilstm_matches_two_unidirectional_runs(rng):
    fwd, bwd = random_lstm(rng, 3, 2), random_lstm(rng, 3, 2)
    xs = [rng.normal(size=2) for _ in range(3)]
    out = bilstm_encode(Tape(), fwd, bwd, [Value(x) for x in xs], 3)
    forward = scalar_run(fwd, xs)
    backward = scalar_run(bwd, xs[::-1])[::-1]
    for t in range(3):
        npt.assert_allclose(out[t].data, np.concatenate([forward[t], backward[t]]), atol=1e-12)


def test_bilstm_palindrome_with_shared_params_mirrors(rng):
    params = random_lstm(rng, 2, 3)
    a, b = rng.normal(size=3), rng.normal(size=3)
    out = bilstm_encode(Tape(), params, params, [Value(a), Value(b), Value(a)], 3)
    for t in range(3):
        mirrored = out[2 - t].data
        npt.assert_allclose(out[t].data, np.concatenate([mirrored[2:], mirrored[:2]]), atol=1e-14)


def test_bilstm_padding_is_zero_and_does_not_leak(rng):
    fwd, bwd = random_lstm(rng, 2, 3), random_lstm(rng, 2, 3)
    xs = [Value(rng.normal(size=3)) for _ in range(4)]
    padded = bilstm_encode(Tape(), fwd, bwd, xs, 2)
    exact = bilstm_encode(Tape(), fwd, bwd, xs[:2], 2)
    assert len(padded) == 4
    for t in range(2):
        npt.assert_array_equal(padded[t].data, exact[t].data)
    for t in (2, 3):
        npt.assert_array_equal(padded[t].data, np.zeros(4))


def test_bilstm_rejects_empty_sequence(rng):
    params = random_lstm(rng, 2, 3)
    with pytest.raises(DataError, match="empty sequence"):
        bilstm_encode(Tape(), params, params, [Value(np.zeros(3))], 0)


# attention_pool

def test_attention_pool_zero_v_is_mean(rng):
    ap = AttentionParams.initialize(rng, 3, 2, 4, 0.5, "attn")
    ap.v.data[:] = 0.0
    hs = [Value(rng.normal(size=3)) for _ in range(3)]
    pooled, weights = attention_pool(Tape(), ap, hs, Value(rng.normal(size=2)), [True, True, True])
    npt.assert_allclose(weights.data, [1 / 3] * 3, atol=1e-15)
    npt.assert_allclose(pooled.data, np.mean([h.data for h in hs], axis=0), atol=1e-12)


def test_attention_pool_single_unmasked_position(rng):
    ap = AttentionParams.initialize(rng, 3, 2, 4, 0.5, "attn")
    hs = [Value(rng.normal(size=3)) for _ in range(2)]
    pooled, weights = attention_pool(Tape(), ap, hs, Value(np.zeros(2)), [True, False])
    npt.assert_array_equal(weights.data, [1.0, 0.0])
    npt.assert_allclose(pooled.data, hs[0].data, atol=1e-15)


def test_attention_pool_hand_set_scores():
    # scores vᵀ tanh(Wh·h) = 2·tanh(h) give (0, ln 3)
    ap = AttentionParams(v=parameter([2.0]), Wh=parameter([[1.0]]), bw=parameter([0.0]), Wu=parameter([[1.0]]))
    hs = [Value([0.0]), Value([math.atanh(math.log(3) / 2)])]
    _, weights = attention_pool(Tape(), ap, hs, Value([0.0]), [True, True])
    npt.assert_allclose(weights.data, [0.25, 0.75], atol=1e-12)


def test_attention_pool_masked_state_gets_no_gradient(rng):
    ap = AttentionParams.initialize(rng, 3, 2, 4, 0.5, "attn")
    hs = [parameter(rng.normal(size=3)) for _ in range(3)]
    tape = Tape()
    pooled, weights = attention_pool(tape, ap, hs, Value(rng.normal(size=2)), [True, True, False])
    tape.backward(tape.sum(tape.elem_mul(pooled, tape.constant(rng.normal(size=3)))))
    assert weights.data[2] == 0.0
    npt.assert_array_equal(hs[2].grad, np.zeros(3))
    assert np.abs(hs[0].grad).sum() > 0


def test_attention_pool_all_masked():
    ap = AttentionParams(v=parameter([1.0]), Wh=parameter([[1.0]]), bw=parameter([0.0]))
    with pytest.raises(EmptySupportError):
        attention_pool(Tape(), ap, [Value([0.5])], None, [False])


# encode_document_view

def test_single_word_document_view(params, rng):
    doc = dataclasses.replace(random_doc(rng), sentences=(np.array([5]),))
    branch = params.branches["user"]
    tape = Tape()
    ctx = lookup(tape, params.user_embeddings, doc.user_id)
    d_view, word_weights, sentence_weights = encode_document_view(tape, branch, params.word_embeddings, doc, ctx)

    x = Value(params.word_embeddings.data[5])
    s = bilstm_encode(Tape(), branch.word_fwd, branch.word_bwd, [x], 1)[0]
    expected = bilstm_encode(Tape(), branch.sent_fwd, branch.sent_bwd, [Value(s.data)], 1)[0]
    npt.assert_allclose(d_view.data, expected.data, atol=1e-15)
    assert word_weights[0][0] == 1.0 and sentence_weights[0] == 1.0
    assert word_weights[0].shape == (doc.max_words,)
    assert sentence_weights.shape == (doc.max_sentences,)
    assert word_weights[0][1:].sum() == 0.0 and sentence_weights[1:].sum() == 0.0


def test_identical_sentences_with_zero_sentence_v(params):
    params.branches["product"].sentence_attention.v.data[:] = 0.0
    doc = random_doc(np.random.default_rng(3))
    doc = dataclasses.replace(doc, sentences=(np.array([4, 7, 2]), np.array([4, 7, 2])))
    tape = Tape()
    ctx = lookup(tape, params.product_embeddings, doc.product_id)
    _, _, beta = encode_document_view(tape, params.branches["product"], params.word_embeddings, doc, ctx)
    npt.assert_allclose(beta[:2], [0.5, 0.5], atol=1e-15)


def test_document_view_matches_oracle(params, rng):
    tensors = params.tensors()
    for _ in range(3):
        doc = random_doc(rng)
        tape = Tape()
        ctx = lookup(tape, params.user_embeddings, doc.user_id)
        d_view, _, _ = encode_document_view(tape, params.branches["user"], params.word_embeddings, doc, ctx)
        expected = oracle.view(tensors, "user", doc, tensors["embed.user"][doc.user_id])
        npt.assert_allclose(d_view.data, expected, rtol=0, atol=1e-12)


# forward_huapa

def test_zero_heads_give_uniform_outputs(params, rng):
    for head in params.heads.values():
        head.W.data[:] = 0.0
    out = forward_huapa(Tape(), params, random_doc(rng))
    for p in (out.p, out.p_u, out.p_p):
        npt.assert_allclose(p.data, [1 / 3] * 3, atol=1e-15)


def test_hand_set_joint_head():
    dims = TOY_DIMS.model_copy(update={"classes": 2})
    params = HuapaParams.initialize(Variant.HUAPA, dims, TOY_WORDS, TOY_USERS, TOY_PRODUCTS, seed=2, init_range=0.5)
    params.heads[JOINT_HEAD].W.data[:] = 0.0
    params.heads[JOINT_HEAD].b.data[:] = [0.0, math.log(3)]
    out = forward_huapa(Tape(), params, random_doc(np.random.default_rng(0), classes=2))
    npt.assert_allclose(out.p.data, [0.25, 0.75], atol=1e-15)


def test_forward_matches_straight_line_oracle(params, rng):
    tensors = params.tensors()
    for _ in range(10):
        doc = random_doc(rng)
        out = forward_huapa(Tape(), params, doc)
        expected = oracle.oracle_forward(tensors, doc)
        npt.assert_allclose(out.p.data, expected["p"], rtol=0, atol=1e-10)
        npt.assert_allclose(out.p_u.data, expected["p_u"], rtol=0, atol=1e-10)
        npt.assert_allclose(out.p_p.data, expected["p_p"], rtol=0, atol=1e-10)


def test_random_forward_passes_yield_distributions():
    rng = np.random.default_rng(11)
    passes = 0
    for seed in range(50):
        params = toy_params(seed=seed, init_range=float(rng.uniform(0.01, 2.0)))
        for _ in range(20):
            doc = random_doc(rng)
            out = forward_huapa(Tape(), params, doc)
            for p in (out.p, out.p_u, out.p_p):
                assert (p.data >= 0).all()
                assert abs(p.data.sum() - 1.0) < 1e-9
            for view in out.trace.views.values():
                word_mask = doc.word_mask()
                for i, alpha in enumerate(view.word_weights):
                    assert abs(alpha.sum() - 1.0) < 1e-6
                    assert (alpha[~word_mask[i]] == 0).all()
                assert abs(view.sentence_weights.sum() - 1.0) < 1e-6
                assert (view.sentence_weights[~doc.sentence_mask()] == 0).all()
            passes += 1
    assert passes == 1000


@pytest.mark.parametrize("variant, views", [
    (Variant.HUA, {"user"}),
    (Variant.HPA, {"product"}),
    (Variant.NO_ATTENTION, {"text"}),
    (Variant.LOCAL_ATTENTION, {"text"}),
])
def test_single_branch_variants(variant, views, rng):
    params = toy_params(variant)
    out = forward_huapa(Tape(), params, random_doc(rng))
    assert set(out.trace.views) == views
    assert out.p_u is None and out.p_p is None
    assert out.p.data.sum() == pytest.approx(1.0)


def test_no_attention_uses_uniform_weights(rng):
    params = toy_params(Variant.NO_ATTENTION)
    doc = dataclasses.replace(random_doc(rng), sentences=(np.array([2, 3]), np.array([4, 5, 6])))
    view = forward_huapa(Tape(), params, doc).trace.views["text"]
    npt.assert_allclose(view.word_weights[1][:3], [1 / 3] * 3)
    npt.assert_allclose(view.sentence_weights[:2], [0.5, 0.5])


def test_unknown_user_row_is_an_error(params, rng):
    doc = dataclasses.replace(random_doc(rng), user_id=TOY_USERS)
    with pytest.raises(IndexOutOfRangeError, match="out of range"):
        forward_huapa(Tape(), params, doc)


# combined_loss and gradients

def two_doc_loss(params, docs, lambdas):
    def build(tape: Tape) -> Value:
        total = None
        for doc in docs:
            loss = combined_loss(tape, forward_huapa(tape, params, doc), doc.label, lambdas)
            total = loss if total is None else tape.elem_add(total, loss)
        return total
    return build


def full_doc(rng, user_id: int, product_id: int, label: int) -> EncodedDoc:
    """Three four-word sentences, so every recurrence and attention weight is exercised."""
    sentences = tuple(rng.integers(2, TOY_WORDS, size=4) for _ in range(3))
    return EncodedDoc(
        user_id=user_id, product_id=product_id, label=label, sentences=sentences, max_sentences=3, max_words=4
    )


# below this the central-difference roundoff at h=1e-5 is comparable to the gradient itself
GRADIENT_FLOOR = 1e-6


def test_end_to_end_gradients_match_finite_differences(params):
    rng = np.random.default_rng(5)
    docs = [full_doc(rng, 0, 1, 0), full_doc(rng, 2, 0, 2)]
    leaves = list(params.trainable().values())
    error = grad_check(
        two_doc_loss(params, docs, (0.4, 0.3, 0.3)), leaves,
        step=1e-5, samples=200, seed=1, min_magnitude=GRADIENT_FLOOR,
    )
    assert error < 1e-4


def test_vanishing_gradients_agree_in_absolute_terms(params):
    rng = np.random.default_rng(5)
    build = two_doc_loss(params, [full_doc(rng, 0, 1, 0), full_doc(rng, 2, 0, 2)], (0.4, 0.3, 0.3))
    leaves = list(params.trainable().values())
    clear_grads(leaves)
    tape = Tape()
    tape.backward(build(tape))
    small = [
        (leaf, flat, leaf.grad.reshape(-1)[flat])
        for leaf in leaves
        for flat in range(leaf.size)
        if abs(leaf.grad.reshape(-1)[flat]) < GRADIENT_FLOOR
    ][:50]
    for leaf, flat, analytic in small:
        view = leaf.data.reshape(-1)
        original = view[flat]
        view[flat] = original + 1e-5
        upper = build(Tape()).item()
        view[flat] = original - 1e-5
        lower = build(Tape()).item()
        view[flat] = original
        assert abs((upper - lower) / 2e-5 - analytic) < 1e-8, leaf.name
    clear_grads(leaves)


def test_word_embeddings_receive_no_gradient(params, rng):
    tape = Tape()
    doc = random_doc(rng)
    tape.backward(combined_loss(tape, forward_huapa(tape, params, doc), doc.label, (0.4, 0.3, 0.3)))
    npt.assert_array_equal(params.word_embeddings.grad, 0.0)
    assert np.abs(params.user_embeddings.grad[doc.user_id]).sum() > 0


def test_zero_auxiliary_weights_leave_auxiliary_heads_untouched(params, rng):
    clear_grads(list(params.trainable().values()))
    tape = Tape()
    doc = random_doc(rng)
    tape.backward(combined_loss(tape, forward_huapa(tape, params, doc), doc.label, (1.0, 0.0, 0.0)))
    for name in ("user", "product"):
        npt.assert_array_equal(params.heads[name].W.grad, 0.0)
        npt.assert_array_equal(params.heads[name].b.grad, 0.0)
    assert np.abs(params.heads[JOINT_HEAD].W.grad).sum() > 0


def test_combined_loss_examples():
    onehot = Value([1.0, 0.0, 0.0])
    out = ForwardOutput(p=onehot, d=Value([0.0]), trace=AttentionTrace(), p_u=onehot, p_p=onehot)
    assert combined_loss(Tape(), out, 0, (0.4, 0.3, 0.3)).item() == 0.0

    half = Value([0.5, 0.5])
    out = ForwardOutput(p=half, d=Value([0.0]), trace=AttentionTrace(), p_u=Value([0.9, 0.1]), p_p=Value([0.2, 0.8]))
    assert combined_loss(Tape(), out, 0, (1.0, 0.0, 0.0)).item() == pytest.approx(0.6931471805599453, abs=1e-12)


def test_combined_loss_is_weighted_sum_of_components(params, rng):
    doc = random_doc(rng)
    tape = Tape()
    out = forward_huapa(tape, params, doc)
    total = combined_loss(tape, out, doc.label, (0.4, 0.3, 0.3))
    expected = sum(
        w * -math.log(p.data[doc.label]) for w, p in zip((0.4, 0.3, 0.3), (out.p, out.p_u, out.p_p))
    )
    assert total.item() == pytest.approx(expected, abs=1e-9)


def test_product_branch_does_not_affect_user_head(params, rng):
    doc = random_doc(rng)
    before = forward_huapa(Tape(), params, doc)
    for p in params.branches["product"].parameters():
        p.data += 0.3
    params.product_embeddings.data += 0.3
    after = forward_huapa(Tape(), params, doc)
    npt.assert_array_equal(after.p_u.data, before.p_u.data)
    assert not np.array_equal(after.p.data, before.p.data)


def test_user_row_permutation_is_invisible(params, rng):
    docs = [random_doc(rng) for _ in range(4)]
    before = [forward_huapa(Tape(), params, doc) for doc in docs]
    perm = rng.permutation(TOY_USERS)
    table = params.user_embeddings.data.copy()
    params.user_embeddings.data[perm] = table
    for doc, old in zip(docs, before):
        new = forward_huapa(Tape(), params, dataclasses.replace(doc, user_id=int(perm[doc.user_id])))
        npt.assert_array_equal(new.p.data, old.p.data)
        npt.assert_array_equal(new.p_u.data, old.p_u.data)
        npt.assert_array_equal(new.p_p.data, old.p_p.data)


# predict

@pytest.mark.parametrize("p, p_u, expected", [
    ([0.1, 0.7, 0.2], None, 1),
    ([1 / 3, 1 / 3, 1 / 3], None, 0),
    ([0.2, 0.5, 0.3], [0.6, 0.2, 0.2], 1),
])
def test_predict(p, p_u, expected):
    out = ForwardOutput(p=Value(p), d=Value([0.0]), trace=AttentionTrace(), p_u=None if p_u is None else Value(p_u))
    assert predict(out) == expected


# parameters and checkpoints

def test_parameter_count_identity():
    count = {v: toy_params(v).parameter_count(include_frozen=True) for v in (Variant.HUAPA, Variant.HUA, Variant.HPA)}
    word_table = TOY_WORDS * TOY_DIMS.word
    joint_head = TOY_DIMS.classes * 4 * TOY_DIMS.hidden + TOY_DIMS.classes
    assert count[Variant.HUAPA] == count[Variant.HUA] + count[Variant.HPA] - word_table + joint_head


def test_hua_has_no_product_parameters():
    names = toy_params(Variant.HUA).named_parameters(include_frozen=True)
    assert not [n for n in names if n.startswith("product.") or n in ("embed.product", "head.product.W")]
    assert "user.sent.attn.Wu" in names


def test_local_attention_has_no_context_weights():
    names = toy_params(Variant.LOCAL_ATTENTION).named_parameters()
    assert "text.word.attn.Wh" in names
    assert not [n for n in names if n.endswith(".Wu") or n.startswith("embed.")]


def test_initialization_ranges():
    params = HuapaParams.initialize(Variant.HUAPA, ModelDims(), 30, 5, 5, seed=1)
    for name, p in params.named_parameters(include_frozen=True).items():
        assert np.abs(p.data).max() <= 0.01, name
        if name.endswith((".b", ".bc", ".bw")):
            npt.assert_array_equal(p.data, 0.0)
    npt.assert_array_equal(params.word_embeddings.data[0], 0.0)
    assert not params.word_embeddings.requires_grad


def test_checkpoint_round_trip(tmp_path, rng):
    vocab = toy_vocab()
    network = HuapaNetwork.create(Variant.HUAPA, TOY_DIMS, vocab, seed=4, init_range=0.3)
    network.save(tmp_path / "model.ckpt", vocab, max_sentences=3, max_words=4)
    loaded, header = HuapaNetwork.load(tmp_path / "model.ckpt", vocab)
    assert header.variant is Variant.HUAPA
    assert (header.max_sentences, header.max_words) == (3, 4)
    for name, array in network.params.tensors().items():
        npt.assert_array_equal(loaded.params.tensors()[name], array)
    doc = random_doc(rng)
    npt.assert_array_equal(loaded.forward(doc).p.data, network.forward(doc).p.data)


def test_checkpoint_refuses_other_vocabulary(tmp_path):
    vocab = toy_vocab()
    network = HuapaNetwork.create(Variant.HUA, TOY_DIMS, vocab)
    network.save(tmp_path / "model.ckpt", vocab)
    other = Vocabulary(vocab.id_to_word[2:], ["someone", "else"], vocab.id_to_product[1:])
    with pytest.raises(CheckpointError, match="hash mismatch for users"):
        HuapaNetwork.load(tmp_path / "model.ckpt", other)


def test_checkpoint_rejects_truncated_file(tmp_path):
    vocab = toy_vocab()
    HuapaNetwork.create(Variant.HPA, TOY_DIMS, vocab).save(tmp_path / "model.ckpt", vocab)
    data = (tmp_path / "model.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        HuapaNetwork.load(tmp_path / "cut.ckpt", vocab)


def test_checkpoint_cut_inside_header_length(tmp_path):
    vocab = toy_vocab()
    HuapaNetwork.create(Variant.HPA, TOY_DIMS, vocab).save(tmp_path / "model.ckpt", vocab)
    data = (tmp_path / "model.ckpt").read_bytes()
    (tmp_path / "cut.ckpt").write_bytes(data[: len(b"HUAPA-CKPT\n") + 3])
    with pytest.raises(CheckpointError, match="truncated header length"):
        HuapaNetwork.load(tmp_path / "cut.ckpt", vocab)
