"""Reading, writing and synthesizing SentiMix-style code-mixed tweet corpora.

A corpus file is a sequence of records. Each record is a header line
``meta<TAB>uid[<TAB>sentiment]`` followed by one ``surface<TAB>tag`` line per
token and terminated by a blank line (the last record may omit it).
"""

from __future__ import annotations

import enum
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "CorpusError",
    "MalformedMeta",
    "MalformedTokenLine",
    "DuplicateUid",
    "EmptyTweet",
    "EncodingError",
    "EmptyLexicon",
    "LangTag",
    "Sentiment",
    "Tweet",
    "Dataset",
    "SynthConfig",
    "parse_conllu",
    "serialize_conllu",
    "read_corpus",
    "write_corpus",
    "generate_synthetic",
]


class CorpusError(ValueError):
    """Base class for corpus format errors; ``line`` is 1-based."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class MalformedMeta(CorpusError):
    pass


class MalformedTokenLine(CorpusError):
    pass


class DuplicateUid(CorpusError):
    pass


class EmptyTweet(CorpusError):
    pass


class EncodingError(CorpusError):
    pass


class EmptyLexicon(ValueError):
    pass


_ALIASES = {"lang1": "en", "lang2": "spa"}


@dataclass(frozen=True)
class LangTag:
    """Per-token language tag. Unknown tags are kept verbatim."""

    value: str

    KNOWN = ("en", "spa", "hi", "mixed", "univ")

    @classmethod
    def parse(cls, text: str) -> "LangTag":
        return cls(_ALIASES.get(text, text))

    @property
    def is_other(self) -> bool:
        return self.value not in self.KNOWN

    def __str__(self) -> str:
        return self.value


EN = LangTag("en")
SPA = LangTag("spa")
HI = LangTag("hi")
MIXED = LangTag("mixed")
UNIV = LangTag("univ")


class Sentiment(enum.IntEnum):
    """Tweet polarity. The integer value doubles as the class index."""

    POSITIVE = 0
    NEGATIVE = 1
    NEUTRAL = 2

    @classmethod
    def parse(cls, text: str) -> "Sentiment":
        try:
            return cls[text.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown sentiment {text!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Tweet:
    uid: str
    tokens: tuple[tuple[str, LangTag], ...]
    label: Sentiment | None = None

    @property
    def surfaces(self) -> list[str]:
        return [s for s, _ in self.tokens]

    @property
    def text(self) -> str:
        return " ".join(self.surfaces)


@dataclass(frozen=True)
class Dataset:
    tweets: tuple[Tweet, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tweets", tuple(self.tweets))
        seen = set()
        for tw in self.tweets:
            if not tw.uid:
                raise ValueError("empty uid")
            if tw.uid in seen:
                raise DuplicateUid(f"duplicate uid {tw.uid!r}")
            seen.add(tw.uid)

    @property
    def labeled(self) -> bool:
        return all(tw.label is not None for tw in self.tweets)

    def label_counts(self) -> dict[Sentiment, int]:
        counts = Counter(tw.label for tw in self.tweets if tw.label is not None)
        return {s: counts.get(s, 0) for s in Sentiment}

    def __len__(self) -> int:
        return len(self.tweets)

    def __iter__(self):
        return iter(self.tweets)

    def __getitem__(self, i):
        return self.tweets[i]


def _decode(data: bytes) -> str:
    try:
        return data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data[: exc.start].count(b"\n") + 1
        raise EncodingError("invalid UTF-8", line) from None


def parse_conllu(text: str | bytes) -> list[Tweet]:
    """Parse a corpus in the meta/token dialect into tweets, in input order.

    Raises a :class:`CorpusError` subclass carrying the offending line number
    for any malformed input.
    """
    if isinstance(text, (bytes, bytearray)):
        text = _decode(bytes(text))

    tweets: list[Tweet] = []
    seen: set[str] = set()
    header = None  # (uid, label, line number)
    tokens: list[tuple[str, LangTag]] = []

    def flush():
        uid, label, lineno = header
        if not tokens:
            raise EmptyTweet(f"record {uid!r} has no tokens", lineno)
        if uid in seen:
            raise DuplicateUid(f"duplicate uid {uid!r}", lineno)
        seen.add(uid)
        tweets.append(Tweet(uid, tuple(tokens), label))

    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r")
        if line == "":
            if header is not None:
                flush()
                header, tokens = None, []
            continue
        fields = line.split("\t")
        if header is None:
            if fields[0] != "meta":
                raise MalformedMeta("expected a meta header", lineno)
            if len(fields) < 2 or fields[1] == "" or len(fields) > 3:
                raise MalformedMeta("meta line needs a uid and at most one label", lineno)
            label = None
            if len(fields) == 3:
                try:
                    label = Sentiment.parse(fields[2])
                except ValueError as exc:
                    raise MalformedMeta(str(exc), lineno) from None
            header = (fields[1], label, lineno)
            continue
        if len(fields) != 2:
            raise MalformedTokenLine(f"expected 2 tab-separated fields, got {len(fields)}", lineno)
        surface, tag = fields
        if surface == "" or tag == "":
            raise MalformedTokenLine("empty surface or tag", lineno)
        tokens.append((surface, LangTag.parse(tag)))
    if header is not None:
        flush()
    return tweets


def serialize_conllu(tweets: Iterable[Tweet]) -> str:
    out = []
    for tw in tweets:
        meta = f"meta\t{tw.uid}" if tw.label is None else f"meta\t{tw.uid}\t{tw.label}"
        out.append(meta + "\n")
        for surface, tag in tw.tokens:
            out.append(f"{surface}\t{tag}\n")
        out.append("\n")
    return "".join(out)


def read_corpus(path) -> Dataset:
    with open(path, "rb") as fh:
        return Dataset(tuple(parse_conllu(fh.read())))


def write_corpus(tweets: Iterable[Tweet], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_conllu(tweets))


# ---------------------------------------------------------------------------
# synthetic corpora

_POSITIVE = {
    "en": ("good", "great", "happy", "love", "awesome", "nice", "amazing",
           "best", "excellent", "beautiful", "fun", "cool"),
    "spa": ("bueno", "feliz", "genial", "amor", "bonito", "excelente",
            "increíble", "mejor", "alegre", "divertido", "hermoso", "encanta"),
}
_NEGATIVE = {
    "en": ("bad", "sad", "hate", "awful", "terrible", "worst", "ugly",
           "angry", "boring", "stupid", "annoying", "sick"),
    "spa": ("malo", "triste", "odio", "feo", "peor", "aburrido", "enojado",
            "horrible", "fatal", "asco", "pésimo", "molesto"),
}
_FILLERS = {
    "en": ("the", "today", "with", "my", "friend", "house", "we", "going",
           "to", "school", "work", "people", "time", "this", "is", "at",
           "game", "movie", "weekend", "night", "just", "was", "so", "really"),
    "spa": ("el", "la", "hoy", "con", "mi", "amigo", "casa", "vamos",
            "escuela", "mañana", "trabajo", "gente", "tiempo", "que", "para",
            "en", "película", "noche", "fin", "semana", "muy", "está", "fue",
            "también"),
}
_HANDLES = ("juan", "maria", "pepe", "ana", "luis", "sofia", "mike", "jenny")
_ACCENTED = {"a": "á", "e": "é", "i": "í", "o": "ó", "u": "ú", "n": "ñ"}


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings. Noise rates are per-token (elongation, uppercase,
    accent) or per-tweet (mention, hashtag) probabilities."""

    n_per_class: int = 100
    min_words: int = 6
    max_words: int = 14
    elongation_rate: float = 0.0
    uppercase_rate: float = 0.0
    accent_rate: float = 0.0
    mention_rate: float = 0.0
    hashtag_rate: float = 0.0
    minority_cue_rate: float = 0.2
    max_cues: int = 4
    switch_rate: float = 0.2
    topic_rate: float = 0.5
    zipf_exponent: float = 1.5
    positive_cues: dict = field(default_factory=lambda: dict(_POSITIVE))
    negative_cues: dict = field(default_factory=lambda: dict(_NEGATIVE))
    fillers: dict = field(default_factory=lambda: dict(_FILLERS))

    def __post_init__(self):
        if self.n_per_class < 0:
            raise ValueError("n_per_class must be >= 0")
        for name in ("elongation_rate", "uppercase_rate", "accent_rate",
                     "mention_rate", "hashtag_rate", "minority_cue_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {rate}")
        if not 1 <= self.min_words <= self.max_words:
            raise ValueError("need 1 <= min_words <= max_words")
        if not 0.0 <= self.switch_rate <= 1.0:
            raise ValueError(f"switch_rate must lie in [0, 1], got {self.switch_rate}")
        if self.zipf_exponent < 0:
            raise ValueError("zipf_exponent must be >= 0")
        if not 0.0 <= self.topic_rate <= 1.0:
            raise ValueError(f"topic_rate must lie in [0, 1], got {self.topic_rate}")
        if self.max_cues < 1:
            raise ValueError("need max_cues >= 1")

    @classmethod
    def noisy(cls, level: float = 0.3, **kw) -> "SynthConfig":
        """Config with every noise channel set to ``level``."""
        rates = dict(elongation_rate=level, uppercase_rate=level, accent_rate=level,
                     mention_rate=level, hashtag_rate=level)
        rates.update(kw)
        return cls(**rates)


def _lexicon_entries(lex: dict, what: str) -> list[tuple[str, str]]:
    entries = [(w, lang) for lang in sorted(lex) for w in lex[lang]]
    if not entries:
        raise EmptyLexicon(f"{what} lexicon is empty")
    return entries


def _elongate(word: str, rng) -> str:
    i = len(word) - 1
    return word + word[i] * int(rng.integers(2, 6))


def _add_accent(word: str, rng) -> str:
    spots = [i for i, c in enumerate(word) if c in _ACCENTED]
    if not spots:
        return word
    i = spots[int(rng.integers(len(spots)))]
    return word[:i] + _ACCENTED[word[i]] + word[i + 1:]


def _noisy(word: str, cfg: SynthConfig, rng) -> str:
    # always draw the three uniforms so the stream does not depend on the rates
    u = rng.random(3)
    if u[0] < cfg.accent_rate:
        word = _add_accent(word, rng)
    if u[1] < cfg.elongation_rate:
        word = _elongate(word, rng)
    if u[2] < cfg.uppercase_rate:
        word = word.upper()
    return unicodedata.normalize("NFC", word)


def generate_synthetic(config: SynthConfig, seed: int) -> Dataset:
    """Generate a labelled code-mixed corpus with ``n_per_class`` tweets per class.

    Each tweet has a matrix language; every word comes from that language
    and switches to the other one with probability ``switch_rate``. Filler
    words are Zipf-distributed over their lexicon order. Fillers are also
    loosely topical: each filler lexicon is split round-robin into a
    positive, a negative and a neutral third, and with probability
    ``topic_rate`` a filler is drawn from the third matching the tweet's
    label. Cue words are inserted at random positions; the label is the
    majority polarity of the cue words (neutral when there are none).
    Surface noise is applied on top at the configured rates. Hashtags may
    quote cue words of either polarity; they are not counted as cues.
    """
    pos = _lexicon_entries(config.positive_cues, "positive")
    neg = _lexicon_entries(config.negative_cues, "negative")
    fill = _lexicon_entries(config.fillers, "filler")
    rng = np.random.default_rng(seed)

    def by_lang(entries):
        out: dict = {}
        for w, lang in entries:
            out.setdefault(lang, []).append(w)
        return out

    pos_l, neg_l, fill_l = by_lang(pos), by_lang(neg), by_lang(fill)
    langs = sorted(fill_l)

    def zipf_cdf(n: int) -> np.ndarray:
        w = 1.0 / np.arange(1, n + 1) ** config.zipf_exponent
        return np.cumsum(w / w.sum())

    def zipf_pick(words) -> str:
        k = int(np.searchsorted(zipf_cdf(len(words)), rng.random(), side="right"))
        return words[min(k, len(words) - 1)]

    def topic(words, label: Sentiment):
        part = words[int(label)::3]
        return part or words

    def pick(table: dict, lang: str) -> tuple[str, str]:
        if lang not in table:
            lang = sorted(table)[int(rng.integers(len(table)))]
        words = table[lang]
        return words[int(rng.integers(len(words)))], lang

    def switch(lang: str) -> str:
        if len(langs) > 1 and rng.random() < config.switch_rate:
            rest = [x for x in langs if x != lang]
            return rest[int(rng.integers(len(rest)))]
        return lang

    order = np.repeat(np.arange(3), config.n_per_class)
    rng.shuffle(order)

    tweets = []
    for i, cls in enumerate(order):
        label = Sentiment(int(cls))
        matrix = langs[int(rng.integers(len(langs)))]
        n_words = int(rng.integers(config.min_words, config.max_words + 1))
        if label is Sentiment.NEUTRAL:
            cues = []
        else:
            major, minor = (pos_l, neg_l) if label is Sentiment.POSITIVE else (neg_l, pos_l)
            n_major = int(rng.integers(1, config.max_cues + 1))
            n_minor = 1 if (n_major >= 2 and rng.random() < config.minority_cue_rate) else 0
            cues = [pick(major, switch(matrix)) for _ in range(n_major)]
            cues += [pick(minor, switch(matrix)) for _ in range(n_minor)]
        words = []
        for _ in range(max(n_words - len(cues), 1)):
            lang = switch(matrix)
            on_topic = rng.random() < config.topic_rate
            lexicon = fill_l[lang]
            words.append((zipf_pick(topic(lexicon, label) if on_topic else lexicon), lang))
        for cue in cues:
            words.insert(int(rng.integers(len(words) + 1)), cue)

        tokens = [(_noisy(w, config, rng), LangTag(lang)) for w, lang in words]
        if rng.random() < config.mention_rate:
            handle = "@" + _HANDLES[int(rng.integers(len(_HANDLES)))]
            tokens.insert(int(rng.integers(len(tokens) + 1)), (handle, UNIV))
        if rng.random() < config.hashtag_rate:
            pool = fill + pos + neg
            tag = "#" + pool[int(rng.integers(len(pool)))][0]
            tokens.append((tag, UNIV))
        tweets.append(Tweet(str(i + 1), tuple(tokens), label))
    return Dataset(tuple(tweets))


def split_dataset(data: Dataset, valid_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified deterministic split into (train, valid)."""
    rng = np.random.default_rng(seed)
    train, valid = [], []
    by_class: dict = {}
    for tw in data:
        by_class.setdefault(tw.label, []).append(tw)
    for key in sorted(by_class, key=lambda s: -1 if s is None else int(s)):
        group = by_class[key]
        idx = rng.permutation(len(group))
        n_valid = int(round(valid_fraction * len(group)))
        valid.extend(group[i] for i in sorted(idx[:n_valid]))
        train.extend(group[i] for i in sorted(idx[n_valid:]))
    key = {tw.uid: k for k, tw in enumerate(data)}
    train.sort(key=lambda tw: key[tw.uid])
    valid.sort(key=lambda tw: key[tw.uid])
    return Dataset(tuple(train)), Dataset(tuple(valid))


def strip_labels(tweets: Sequence[Tweet]) -> list[Tweet]:
    return [Tweet(tw.uid, tw.tokens, None) for tw in tweets]
