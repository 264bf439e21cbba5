import pytest
from hypothesis import given, settings, strategies as st

from codemix.corpus import SynthConfig, generate_synthetic
from codemix.textnorm import tweet_text
from codemix.tokenizer import (
    CLS, MASK, PAD, SEP, SPECIAL_TOKENS, UNK, EmptyCorpus, UnknownId, Vocabulary,
    build_vocab, decode, encode,
)


@pytest.fixture(scope="module")
def corpus():
    return [tweet_text(tw) for tw in generate_synthetic(SynthConfig.noisy(0.3, n_per_class=17), 4)][:50]


def test_small_vocab_contents():
    v = build_vocab(["hola hola mundo"], 10, 1)
    assert v.tokens[:5] == SPECIAL_TOKENS
    assert v.tokens[5:7] == ("hola", "mundo")
    for c in "holamund":
        assert c in v and "##" + c in v


def test_specials_fixed_ids():
    v = build_vocab(["a b"], 10)
    assert [v.id_of[t] for t in SPECIAL_TOKENS] == [PAD, UNK, CLS, SEP, MASK] == [0, 1, 2, 3, 4]


def test_lexicographic_tie_break():
    v = build_vocab(["ab aa"], 20)
    assert v.id_of["aa"] < v.id_of["ab"]


def test_frequency_ranking_and_min_freq():
    v = build_vocab(["x y y z z z"], 50, min_freq=2)
    assert v.id_of["z"] < v.id_of["y"]
    # "x" is below min_freq as a word but survives as a character
    assert "x" in v


def test_ids_are_contiguous(corpus):
    v = build_vocab(corpus, 64)
    assert sorted(v.id_of.values()) == list(range(v.size))


def test_build_is_deterministic(corpus):
    assert build_vocab(corpus, 64).id_of == build_vocab(corpus, 64).id_of


def test_overflow_reserves_continuations(corpus):
    v = build_vocab(corpus, 64)
    grams = [t for t in v.tokens if t.startswith("##") and len(t) > 3]
    assert grams, "expected multi-character continuations when words overflow"
    assert all(not t.startswith("##") or len(t) > 2 for t in v.tokens if t.startswith("###"))


def test_empty_corpus():
    with pytest.raises(EmptyCorpus):
        build_vocab(["", "   "], 10)


def test_encode_pads_and_masks():
    v = build_vocab(["hola mundo"], 10)
    seq = encode("hola mundo", v, 6)
    assert seq.ids == (CLS, v.id_of["hola"], v.id_of["mundo"], SEP, PAD, PAD)
    assert seq.attention_mask == (1, 1, 1, 1, 0, 0)


def test_encode_unknown_word_is_single_unk():
    v = build_vocab(["abc"], 10)
    assert encode("xyz", v, 5).ids == (CLS, UNK, SEP, PAD, PAD)


def test_encode_subword_fallback():
    v = build_vocab(["hola sal"], 10)
    ids = encode("holas", v, 8).ids
    assert ids[:3] == (CLS, v.id_of["hola"], v.id_of["##s"])


def test_truncation_at_seventy():
    v = build_vocab(["w"], 10)
    seq = encode(" ".join(["w"] * 100), v, 70)
    assert seq.length == 70 and seq.ids[69] == SEP and sum(seq.attention_mask) == 70


def test_decode():
    v = build_vocab(["hola sal"], 10)
    assert decode([CLS, v.id_of["hola"], SEP], v) == "hola"
    assert decode([CLS, SEP], v) == ""
    assert decode([CLS, v.id_of["hola"], v.id_of["##s"], SEP, PAD], v) == "holas"
    with pytest.raises(UnknownId):
        decode([v.size], v)


def test_vocab_file_round_trip(tmp_path, corpus):
    v = build_vocab(corpus, 64)
    v.save(tmp_path / "vocab.txt")
    assert Vocabulary.load(tmp_path / "vocab.txt") == v
    lines = (tmp_path / "vocab.txt").read_text(encoding="utf-8").splitlines()
    assert lines[v.id_of["[CLS]"]] == "[CLS]"


def test_encode_decode_identity_on_generated(corpus):
    v = build_vocab(corpus, 8000)
    for text in corpus:
        seq = encode(text, v, 70)
        assert UNK not in seq.ids
        assert decode(seq.ids, v) == text


@settings(max_examples=200, deadline=None)
@given(st.text(alphabet="abcdeé @#xyz", max_size=120), st.integers(3, 40))
def test_encode_invariants(text, max_len):
    v = build_vocab(["abc bcd cde abcde", "ab cd"], 30)
    seq = encode(text, v, max_len)
    mask = seq.attention_mask
    assert seq.length == len(mask) == max_len
    assert list(mask) == sorted(mask, reverse=True)
    assert all(0 <= i < v.size for i in seq.ids)
    n = sum(mask)
    assert seq.ids[0] == CLS and seq.ids[n - 1] == SEP
    assert all(i == PAD for i in seq.ids[n:])
