import pytest
from hypothesis import given
from hypothesis import strategies as st

from cidg import tokenizer as tok
from cidg.tokenizer import (
    BOS,
    EOS,
    NUM_SPECIALS,
    PAD,
    SPECIAL_TOKENS,
    UNK,
    Vocabulary,
    build_vocab,
    decode,
    encode,
    load_vocab,
    normalize,
    save_vocab,
)


def test_special_ids_frozen():
    assert (PAD, UNK, BOS, EOS) == (0, 1, 2, 3)
    assert SPECIAL_TOKENS[4:] == (
        "<gen_resp>", "<gen_inst>", "<mask_0>", "[CTX]", "[RSP]", "[INS]",
        "[PER]", "[SEP]", "[SPKA]", "[SPKB]",
    )
    v1 = build_vocab(["alpha"], 1, 64)
    v2 = build_vocab(["omega zeta"], 1, 64)
    assert v1.tokens[:NUM_SPECIALS] == v2.tokens[:NUM_SPECIALS]


class TestBuildVocab:
    def test_normalization_rule(self):
        v = build_vocab(["A a a."], min_freq=1, max_size=64)
        assert set(v.tokens) == set(SPECIAL_TOKENS) | {"a", "."}
        # frequency desc: "a" (3) before "." (1)
        assert v.token_to_id("a") == NUM_SPECIALS
        assert v.token_to_id(".") == NUM_SPECIALS + 1

    def test_empty_texts(self):
        assert len(build_vocab([], 1, 64)) == NUM_SPECIALS

    def test_min_freq_threshold(self):
        v = build_vocab(["b b", "c"], min_freq=2, max_size=64)
        assert "b" in v and "c" not in v

    def test_max_size_cap_and_tie_break(self):
        v = build_vocab(["z y x"], min_freq=1, max_size=NUM_SPECIALS + 2)
        # all frequency 1: lexicographic ties admit x, y; z is cut
        assert "x" in v and "y" in v and "z" not in v

    def test_max_size_too_small(self):
        with pytest.raises(ValueError):
            build_vocab([], 1, NUM_SPECIALS - 1)

    def test_deterministic(self):
        texts = ["the cat sat", "a cat ran far", "the end."]
        assert build_vocab(texts, 1, 64).tokens == build_vocab(texts, 1, 64).tokens


class TestEncodeDecode:
    @pytest.fixture
    def vocab(self):
        return build_vocab(["a ."], min_freq=1, max_size=64)

    def test_encode_basic(self, vocab):
        assert encode(vocab, "a .") == [vocab.token_to_id("a"), vocab.token_to_id(".")]

    def test_oov_maps_to_unk(self, vocab):
        assert encode(vocab, "zzz") == [UNK]

    def test_empty(self, vocab):
        assert encode(vocab, "") == []

    def test_no_framing(self, vocab):
        ids = encode(vocab, "a")
        assert BOS not in ids and EOS not in ids

    def test_decode_drops_specials(self, vocab):
        ids = [BOS, vocab.token_to_id("a"), vocab.token_to_id("."), EOS]
        assert decode(vocab, ids) == "a ."

    def test_decode_pads(self, vocab):
        assert decode(vocab, [PAD, PAD]) == ""

    def test_decode_out_of_range(self, vocab):
        with pytest.raises(ValueError, match="out of range"):
            decode(vocab, [len(vocab)])

    def test_marker_literal_passthrough(self, vocab):
        assert encode(vocab, "[CTX] a") == [vocab.token_to_id("[CTX]"), vocab.token_to_id("a")]

    def test_natural_text_never_produces_markers(self, vocab):
        # punctuation splitting shreds would-be marker strings
        ids = encode(vocab, "x[CTX]y")
        assert vocab.token_to_id("[CTX]") not in ids

    def test_round_trip_normalized_text(self, vocab):
        text = "a . a"
        assert decode(vocab, encode(vocab, text)) == text


@given(st.text(alphabet="aAbB .,!zq", max_size=40))
def test_round_trip_on_normalized_in_vocab_text(text):
    vocab = build_vocab([text, "a b z q , . !"], min_freq=1, max_size=256)
    normalized = " ".join(normalize(text))
    assert decode(vocab, encode(vocab, normalized)) == normalized


@given(st.lists(st.integers(min_value=NUM_SPECIALS, max_value=20), max_size=20))
def test_encode_decode_identity_on_non_special_ids(ids):
    vocab = build_vocab(["q w e r t y u"], min_freq=1, max_size=21)
    ids = [i for i in ids if i < len(vocab)]
    assert encode(vocab, decode(vocab, ids)) == ids


def test_vocab_file_round_trip(tmp_path):
    vocab = build_vocab(["some words here ."], 1, 64)
    path = tmp_path / "vocab.txt"
    save_vocab(vocab, path)
    assert load_vocab(path).tokens == vocab.tokens
    # line number = id
    lines = path.read_text().splitlines()
    assert lines[vocab.token_to_id("words")] == "words"


def test_vocabulary_rejects_missing_specials():
    with pytest.raises(ValueError):
        Vocabulary(tokens=("a", "b"))
