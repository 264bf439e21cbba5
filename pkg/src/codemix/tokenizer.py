"""Corpus-built subword vocabulary and WordPiece-style encoding."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PAD", "UNK", "CLS", "SEP", "MASK", "SPECIAL_TOKENS",
    "Vocabulary", "TokenSequence", "EmptyCorpus", "UnknownId",
    "build_vocab", "encode", "decode", "batch_arrays",
]

PAD, UNK, CLS, SEP, MASK = range(5)
SPECIAL_TOKENS = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]")
N_SPECIAL = len(SPECIAL_TOKENS)

# longest "##" continuation n-gram considered when words overflow the budget
MAX_NGRAM = 4
# share of the word budget kept for continuations once words overflow it
NGRAM_SHARE = 0.25


class EmptyCorpus(ValueError):
    pass


class UnknownId(ValueError):
    pass


class Vocabulary:
    """Immutable token inventory; ids are line numbers of the vocab file."""

    def __init__(self, tokens: Sequence[str]):
        tokens = tuple(tokens)
        if tokens[:N_SPECIAL] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the five special tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.id_of = {t: i for i, t in enumerate(tokens)}

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self.id_of

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __repr__(self):
        return f"Vocabulary(size={self.size})"

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(t + "\n" for t in self.tokens))

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            return cls([line.rstrip("\n") for line in fh])


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    @property
    def length(self) -> int:
        return len(self.ids)

    @property
    def n_real(self) -> int:
        return sum(self.attention_mask)


def _ranked(counter: Counter) -> list[str]:
    return [w for w, _ in sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))]


def build_vocab(corpus: Iterable[str], target_size: int, min_freq: int = 1) -> Vocabulary:
    """Build a vocabulary from normalized texts.

    Specials take ids 0-4, then whole words by (frequency desc, text asc), then
    every observed character both as a word start and as a ``##`` continuation.
    Characters are always included, so the result may exceed ``target_size``.
    When the words do not fit in ``target_size - 5`` entries, a quarter of that
    budget goes to the most frequent ``##`` n-grams instead.
    """
    if target_size < 6:
        raise ValueError("target_size must be >= 6")
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    words = Counter()
    for text in corpus:
        words.update(text.split())
    if not words:
        raise EmptyCorpus("corpus contains no words")

    chars = Counter()
    for w, n in words.items():
        for c in w:
            chars[c] += n
    char_tokens = _ranked(chars)
    char_tokens = char_tokens + ["##" + c for c in char_tokens]

    ranked = [w for w in _ranked(words) if words[w] >= min_freq and w not in SPECIAL_TOKENS]
    budget = target_size - N_SPECIAL
    ngrams: list[str] = []
    if len(ranked) > budget:
        n_ngram = int(budget * NGRAM_SHARE)
        ranked = ranked[: budget - n_ngram]
        grams = Counter()
        for w, n in words.items():
            for k in range(2, MAX_NGRAM + 1):
                for i in range(1, len(w) - k + 1):
                    grams["##" + w[i:i + k]] += n
        ngrams = _ranked(grams)[:n_ngram]

    tokens = list(SPECIAL_TOKENS)
    seen = set(tokens)
    for t in ranked + char_tokens + ngrams:
        if t not in seen:
            seen.add(t)
            tokens.append(t)
    return Vocabulary(tokens)


def _wordpiece(word: str, vocab: Vocabulary) -> list[int]:
    ids = []
    start = 0
    while start < len(word):
        end = len(word)
        piece = None
        while end > start:
            sub = word[start:end] if start == 0 else "##" + word[start:end]
            if sub in vocab.id_of:
                piece = vocab.id_of[sub]
                break
            end -= 1
        if piece is None:
            ids.append(UNK)
            break
        ids.append(piece)
        start = end
    return ids


def encode(text: str, vocab: Vocabulary, max_len: int = 70) -> TokenSequence:
    if max_len < 3:
        raise ValueError("max_len must be >= 3")
    pieces = []
    for word in text.split():
        pieces.extend(_wordpiece(word, vocab))
    pieces = pieces[: max_len - 2]
    ids = [CLS] + pieces + [SEP]
    n_real = len(ids)
    ids += [PAD] * (max_len - n_real)
    return TokenSequence(tuple(ids), tuple([1] * n_real + [0] * (max_len - n_real)))


def decode(ids: Iterable[int], vocab: Vocabulary) -> str:
    words: list[str] = []
    for i in ids:
        i = int(i)
        if not 0 <= i < vocab.size:
            raise UnknownId(f"id {i} outside vocabulary of size {vocab.size}")
        if i < N_SPECIAL:
            continue
        tok = vocab.tokens[i]
        if tok.startswith("##") and words:
            words[-1] += tok[2:]
        else:
            words.append(tok)
    return " ".join(words)


def batch_arrays(batch: Sequence[TokenSequence]) -> tuple[np.ndarray, np.ndarray]:
    """Stack sequences into (ids, mask) integer arrays of shape [b, max_len]."""
    ids = np.array([s.ids for s in batch], dtype=np.int64)
    mask = np.array([s.attention_mask for s in batch], dtype=np.int64)
    return ids, mask
