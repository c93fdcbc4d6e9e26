"""Closed word-level vocabulary and tokenizer.

Every sentence the system ever produces or consumes is built from the small
template grammar in scenegen, so the vocabulary is a fixed list: seven
special ids followed by the content words, one token per line in vocab.txt,
line number = id. Anything outside the list maps to [UNK].
"""

from __future__ import annotations

from pathlib import Path
from typing import Iterable, Optional

from . import errors

PAD, UNK, CLS, ENC, DEC, EOS, SEP = range(7)
SPECIALS = ("[PAD]", "[UNK]", "[CLS]", "[ENC]", "[DEC]", "[EOS]", "[SEP]")

# every word the caption/QA/statement templates can emit
_WORDS = sorted([
    "a", "small", "large",
    "red", "green", "blue", "yellow",
    "circle", "square", "triangle",
    "above", "below", "left", "right", "of",
    "how", "many", "shapes", "zero", "one", "two", "three",
    "what", "color", "is", "the", "shape", "object",
    "where", "top", "bottom",
    "are", "there", "more", "than", "yes", "no",
])

_PUNCT = str.maketrans("", "", "?!.,;:")


def normalize(text: str) -> str:
    """Lowercase, strip punctuation, collapse whitespace."""
    return " ".join(text.lower().translate(_PUNCT).split())


class Vocab:
    def __init__(self, tokens: Iterable[str]):
        self.tokens = list(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise errors.ConfigError("vocabulary contains duplicate tokens")
        if tuple(self.tokens[:len(SPECIALS)]) != SPECIALS:
            raise errors.ConfigError(
                "vocabulary must begin with the special tokens "
                + " ".join(SPECIALS))
        self._ids = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def default(cls) -> "Vocab":
        return cls(SPECIALS + tuple(_WORDS))

    @classmethod
    def from_file(cls, path) -> "Vocab":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(lines)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, word: str) -> int:
        return self._ids.get(word, UNK)

    def word_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise errors.OutOfRange(f"token id {token_id} outside vocabulary")
        return self.tokens[token_id]

    def encode(self, text: str) -> list[int]:
        return [self.id_of(w) for w in normalize(text).split()]

    def decode(self, ids: Iterable[int]) -> str:
        words = []
        for i in ids:
            word = self.word_of(int(i))
            if not word.startswith("["):
                words.append(word)
        return " ".join(words)


def tokenize(text: str, vocab: Vocab,
             max_len: Optional[int] = None) -> list[int]:
    """Word ids for a sentence, with an optional length budget."""
    ids = vocab.encode(text)
    if max_len is not None and len(ids) > max_len:
        raise errors.TooLong(
            f"{len(ids)} tokens exceed the budget of {max_len}")
    return ids


def detokenize(ids: Iterable[int], vocab: Vocab) -> str:
    return vocab.decode(ids)
