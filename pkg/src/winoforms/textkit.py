"""Word-level tokenizer and vocabulary with fixed special-token ids."""

from __future__ import annotations

SPECIALS = ("[CLS]", "[SEP]", "[MASK]", "[PAD]", "[UNK]")
CLS_ID, SEP_ID, MASK_ID, PAD_ID, UNK_ID = range(5)

_TRAILING_PUNCT = {".", ",", "!", "?", ";", ":"}


def tokenize(text: str) -> list[str]:
    """Lowercase, split on whitespace, peel trailing punctuation into own tokens.

    "The trophy doesn't fit." -> ["the", "trophy", "doesn't", "fit", "."]
    """
    out: list[str] = []
    for word in text.lower().split():
        tail: list[str] = []
        while len(word) > 1 and word[-1] in _TRAILING_PUNCT:
            tail.append(word[-1])
            word = word[:-1]
        out.append(word)
        out.extend(reversed(tail))
    return out


class Vocabulary:
    """Bidirectional token/id map. Ids 0..4 are the special tokens, in order."""

    def __init__(self, tokens: list[str] | None = None):
        self.id_to_token: list[str] = list(SPECIALS)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
        for t in tokens or []:
            self.add(t)

    def __len__(self) -> int:
        return len(self.id_to_token)

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        idx = len(self.id_to_token)
        self.id_to_token.append(token)
        self.token_to_id[token] = idx
        return idx

    def encode(self, tokens: list[str]) -> list[int]:
        """Map tokens to ids; unknown tokens become [UNK]."""
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: list[int]) -> list[str]:
        for i in ids:
            if not 0 <= i < len(self.id_to_token):
                raise ValueError(f"id {i} out of range for vocabulary of {len(self)}")
        return [self.id_to_token[i] for i in ids]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.id_to_token:
                fh.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            tokens = [line.rstrip("\n") for line in fh]
        if tokens[: len(SPECIALS)] != list(SPECIALS):
            raise ValueError("vocabulary file must start with the special tokens")
        vocab = cls()
        for t in tokens[len(SPECIALS):]:
            vocab.add(t)
        return vocab


def build_vocabulary(sentences: list[str]) -> Vocabulary:
    """Collect tokens in first-occurrence order across a corpus."""
    if not sentences:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    vocab = Vocabulary()
    for s in sentences:
        for t in tokenize(s):
            vocab.add(t)
    return vocab
