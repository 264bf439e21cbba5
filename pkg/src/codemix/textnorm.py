"""Tweet text normalization: lowercase, accent stripping, mention/hashtag
removal, elongation collapsing and whitespace cleanup."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass

__all__ = ["NormConfig", "strip_accents", "collapse_repeats", "normalize", "tweet_text"]

# effectively disables collapsing
NO_COLLAPSE = 10**9


@dataclass(frozen=True)
class NormConfig:
    collapse_min_run: int = 3
    remove_mentions: bool = True
    remove_hashtags: bool = True
    strip_marks: bool = True

    def __post_init__(self):
        if self.collapse_min_run < 2:
            raise ValueError("collapse_min_run must be >= 2")


def strip_accents(text: str) -> str:
    """Remove every combining mark: ``"año" -> "ano"``."""
    decomposed = unicodedata.normalize("NFD", text)
    kept = "".join(c for c in decomposed if not unicodedata.combining(c))
    return unicodedata.normalize("NFC", kept)


_run_patterns: dict[int, re.Pattern] = {}


def collapse_repeats(text: str, min_run: int) -> str:
    """Replace each maximal run of one character of length >= min_run by a
    single occurrence."""
    if min_run < 2:
        raise ValueError("min_run must be >= 2")
    if min_run >= NO_COLLAPSE:
        return text
    pat = _run_patterns.get(min_run)
    if pat is None:
        pat = _run_patterns[min_run] = re.compile(r"(.)\1{%d,}" % (min_run - 1), re.DOTALL)
    return pat.sub(r"\1", text)


def normalize(raw: str, config: NormConfig = NormConfig()) -> str:
    text = raw.lower()
    if config.strip_marks:
        text = strip_accents(text)
    words = text.split()
    if config.remove_mentions:
        words = [w for w in words if not w.startswith("@")]
    if config.remove_hashtags:
        words = [w for w in words if not w.startswith("#")]
    text = collapse_repeats(" ".join(words), config.collapse_min_run)
    return " ".join(text.split())


def tweet_text(tweet, config: NormConfig | None = NormConfig()) -> str:
    """Plain text of a tweet, normalized unless ``config`` is None."""
    text = " ".join(s for s, _ in tweet.tokens)
    return text if config is None else normalize(text, config)
