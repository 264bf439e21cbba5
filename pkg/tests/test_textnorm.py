import unicodedata

import pytest
from hypothesis import given, settings, strategies as st

from codemix.textnorm import NO_COLLAPSE, NormConfig, collapse_repeats, normalize, strip_accents


def _oracle_strip(text):
    # hand-rolled table: base letter of each precomposed Latin letter
    table = {"á": "a", "é": "e", "í": "i", "ó": "o", "ú": "u", "ñ": "n", "ü": "u", "ç": "c"}
    return "".join(table.get(c, c) for c in text)


@pytest.mark.parametrize("text", ["café", "año", "pingüino", "acción", "abc", ""])
def test_strip_accents_matches_table(text):
    assert strip_accents(text) == _oracle_strip(text)


def test_strip_accents_never_lengthens():
    for text in ["é", "Å", "ﬁ", "naïve", "x"]:
        assert len(strip_accents(text)) <= len(text)


@pytest.mark.parametrize("text, run, expected", [
    ("holaaa", 3, "hola"),
    ("llama", 3, "llama"),
    ("", 3, ""),
    ("llama", 2, "lama"),
    ("jajajaaaa!!!", 3, "jajaja!"),
])
def test_collapse_repeats(text, run, expected):
    assert collapse_repeats(text, run) == expected


def test_collapse_rejects_short_run():
    with pytest.raises(ValueError):
        collapse_repeats("aa", 1)
    with pytest.raises(ValueError):
        NormConfig(collapse_min_run=1)


@pytest.mark.parametrize("raw, expected", [
    ("Qué GRANDEEE @juan #wow", "que grande"),
    ("Hoy estoy feliiiizzz", "hoy estoy feliz"),
    ("ok", "ok"),
    ("  a\t\tb  ", "a b"),
    ("@solo", ""),
])
def test_normalize_golden(raw, expected):
    assert normalize(raw) == expected


def test_toggles_off_is_lowercase_only():
    cfg = NormConfig(collapse_min_run=NO_COLLAPSE, remove_mentions=False,
                     remove_hashtags=False, strip_marks=False)
    raw = "Qué GRANDEEE @Juan #Wow"
    assert normalize(raw, cfg) == raw.lower()


noisy_text = st.text(alphabet=st.sampled_from(list("abcñlrAEÉÍ@#  \t!aaa")), max_size=40)


@settings(max_examples=500)
@given(noisy_text, st.integers(2, 5))
def test_normalize_output_properties(raw, run):
    cfg = NormConfig(collapse_min_run=run)
    out = normalize(raw, cfg)
    assert normalize(out, cfg) == out
    words = out.split(" ") if out else []
    assert all(w and w[0] not in "@#" for w in words)
    assert out == out.lower()
    assert "  " not in out and out == out.strip()
    assert all(len(set(out[i:i + run])) > 1 for i in range(len(out) - run + 1))
    assert not any(unicodedata.combining(c) for c in unicodedata.normalize("NFD", out))


@settings(max_examples=300)
@given(st.text(max_size=30))
def test_normalize_idempotent_on_any_text(raw):
    once = normalize(raw)
    assert normalize(once) == once
