import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, strategies as st

from models import ReviewDoc
from services.vocabulary import PAD_ID, UNK_ENTITY_ID, UNK_ID, Vocabulary, build_vocab, encode, encode_document
from utils.errors import DataError


def review(text: str, user: str = "u1", product: str = "p1", label: int = 0) -> ReviewDoc:
    return ReviewDoc(user=user, product=product, label=label, sentences=[s.split() for s in text.split("|")])


def test_min_frequency_leaves_rare_words_to_unk():
    vocab = build_vocab([review("a a b")], min_frequency=2)
    assert vocab.word_id("a") > UNK_ID
    assert vocab.word_id("b") == UNK_ID


def test_min_frequency_one_keeps_every_token():
    vocab = build_vocab([review("a a b"), review("c")], min_frequency=1)
    assert {vocab.word_id(w) for w in "abc"} == {2, 3, 4}
    assert vocab.id_to_word[:3] == ["<pad>", "<unk>", "a"]


def test_ordering_by_frequency_then_token():
    vocab = build_vocab([review("z y y x x")], min_frequency=1)
    assert vocab.id_to_word[2:] == ["x", "y", "z"]


def test_rebuild_is_deterministic():
    docs = [review("the cat | sat on the mat", user="b"), review("the dog", user="a", product="q")]
    first, second = build_vocab(docs, 1), build_vocab(list(reversed(docs)), 1)
    assert first == second
    assert first.hashes() == second.hashes()
    assert first.id_to_user == ["<unk>", "a", "b"]


def test_empty_training_set():
    with pytest.raises(DataError, match="empty training set"):
        build_vocab([], 2)


def test_save_load_round_trip(tmp_path):
    vocab = build_vocab([review("a a b b c", user="x"), review("c d", user="y", product="q")], 1)
    vocab.save(tmp_path / "vocab.txt")
    loaded = Vocabulary.load(tmp_path / "vocab.txt")
    assert loaded == vocab
    assert loaded.word_to_id == vocab.word_to_id
    assert loaded.user_to_id == vocab.user_to_id
    assert loaded.product_to_id == vocab.product_to_id
    assert loaded.min_frequency == 1


def test_load_rejects_reordered_ids(tmp_path):
    vocab = build_vocab([review("a b")], 1)
    vocab.save(tmp_path / "vocab.txt")
    text = (tmp_path / "vocab.txt").read_text(encoding="utf-8").replace("a\t2", "a\t5")
    (tmp_path / "vocab.txt").write_text(text, encoding="utf-8")
    with pytest.raises(DataError, match="dense and ordered"):
        Vocabulary.load(tmp_path / "vocab.txt")


def test_load_rejects_missing_header(tmp_path):
    (tmp_path / "vocab.txt").write_text("[words]\n<pad>\t0\n", encoding="utf-8")
    with pytest.raises(DataError, match="missing vocabulary header"):
        Vocabulary.load(tmp_path / "vocab.txt")


def test_truncation_keeps_first_sentences_and_words():
    vocab = build_vocab([review("w")], 1)
    doc = review(" | ".join(["w"] * 41))
    encoded, stats = encode([doc], vocab)
    assert len(encoded[0].sentences) == 40
    assert stats.truncated_documents == 1

    long = ReviewDoc(user="u1", product="p1", label=0, sentences=[[f"t{i}" for i in range(60)]])
    encoded, stats = encode([long], vocab)
    assert len(encoded[0].sentences[0]) == 50
    assert stats.truncated_sentences == 1


def test_word_mask_is_a_prefix():
    vocab = build_vocab([review("a b c")], 1)
    encoded = encode_document(review("a b c"), vocab)
    assert encoded.word_mask().shape == (40, 50)
    npt.assert_array_equal(encoded.word_mask()[0], [True] * 3 + [False] * 47)
    npt.assert_array_equal(encoded.word_grid()[0, 3:], PAD_ID)
    npt.assert_array_equal(encoded.sentence_mask()[:2], [True, False])


def test_unknown_entities_map_to_reserved_rows():
    vocab = build_vocab([review("a")], 1)
    encoded, stats = encode([review("a zz", user="stranger", product="elsewhere")], vocab)
    assert encoded[0].user_id == UNK_ENTITY_ID
    assert encoded[0].product_id == UNK_ENTITY_ID
    assert encoded[0].sentences[0].tolist() == [vocab.word_id("a"), UNK_ID]
    assert (stats.unknown_users, stats.unknown_products, stats.unknown_words) == (1, 1, 1)
    assert stats.unk_rate == 0.5


tokens = st.text(alphabet="abcdef", min_size=1, max_size=3)
sentences = st.lists(st.lists(tokens, min_size=1, max_size=60), min_size=1, max_size=45)


@given(sentences)
def test_encoded_grid_is_bounded_and_masks_are_prefixes(doc_sentences):
    vocab = build_vocab([ReviewDoc(user="u", product="p", label=0, sentences=[["a", "b"]])], 1)
    doc = ReviewDoc(user="u", product="p", label=0, sentences=doc_sentences)
    encoded = encode_document(doc, vocab)
    mask = encoded.word_mask()
    assert encoded.word_grid().shape == mask.shape == (40, 50)
    for row in mask:
        n = int(row.sum())
        assert row[:n].all() and not row[n:].any()
    npt.assert_array_equal(encoded.word_grid()[~mask], PAD_ID)

    again = encode_document(doc, vocab)
    npt.assert_array_equal(again.word_grid(), encoded.word_grid())
    assert np.array_equal(again.sentence_mask(), encoded.sentence_mask())


def test_reserved_spellings_in_text_encode_as_unknown():
    docs = [review("<pad> good|<unk> good", user="<unk>", product="<pad>"), review("good", user="u2")]
    vocab = build_vocab(docs, 1)
    assert vocab.id_to_word.count("<pad>") == 1 and vocab.id_to_word.count("<unk>") == 1
    encoded, stats = encode(docs[:1], vocab)
    for ids in encoded[0].sentences:
        assert PAD_ID not in ids.tolist()
    assert [ids.tolist() for ids in encoded[0].sentences] == [[UNK_ID, vocab.word_id("good")]] * 2
    assert stats.unknown_words == 2
    assert encoded[0].user_id == UNK_ENTITY_ID
    assert vocab.id_to_user == ["<unk>", "u2"]
