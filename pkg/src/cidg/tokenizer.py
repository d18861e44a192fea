"""Word-level vocabulary with fixed special and marker tokens.

Normalization is lowercase + ASCII punctuation split + whitespace split, shared
verbatim with the evaluation metrics so model and metric tokenization can never
drift apart. Marker tokens all contain punctuation, so normalized natural text
can never collide with them; encode() additionally maps whitespace-delimited
marker literals to their ids, which is what lets serialized contexts (which
embed markers) round-trip through encode.
"""

from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass

PAD, UNK, BOS, EOS = 0, 1, 2, 3

GEN_RESP = "<gen_resp>"
GEN_INST = "<gen_inst>"
MASK_0 = "<mask_0>"
CTX = "[CTX]"
RSP = "[RSP]"
INS = "[INS]"
PER = "[PER]"
SEP = "[SEP]"
SPKA = "[SPKA]"
SPKB = "[SPKB]"

# ids 0-13, frozen; checkpoints are only portable if this never changes
SPECIAL_TOKENS = (
    "<pad>",
    "<unk>",
    "<bos>",
    "<eos>",
    GEN_RESP,
    GEN_INST,
    MASK_0,
    CTX,
    RSP,
    INS,
    PER,
    SEP,
    SPKA,
    SPKB,
)
NUM_SPECIALS = len(SPECIAL_TOKENS)
_SPECIAL_IDS = {tok: i for i, tok in enumerate(SPECIAL_TOKENS)}

_PUNCT = set(string.punctuation)
_PUNCT_TABLE = str.maketrans({c: f" {c} " for c in string.punctuation})


def normalize(text: str) -> list[str]:
    """Lowercase, split punctuation into standalone tokens, split on whitespace."""
    return text.lower().translate(_PUNCT_TABLE).split()


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple[str, ...]  # id -> token; ids 0..13 are the fixed specials

    def __post_init__(self):
        if self.tokens[:NUM_SPECIALS] != SPECIAL_TOKENS:
            raise ValueError("vocabulary must start with the fixed special tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate token in vocabulary")
        object.__setattr__(self, "_ids", {tok: i for i, tok in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def token_to_id(self, token: str) -> int:
        return self._ids.get(token, UNK)

    def id_to_token(self, idx: int) -> str:
        return self.tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._ids


def build_vocab(texts: list[str], min_freq: int = 1, max_size: int = 2048) -> Vocabulary:
    """Count normalized tokens and admit by descending frequency (ties lexicographic).

    max_size bounds the total size including the 14 specials.
    """
    if max_size < NUM_SPECIALS:
        raise ValueError(f"max_size must be >= {NUM_SPECIALS}, got {max_size}")
    counts: Counter[str] = Counter()
    for text in texts:
        counts.update(normalize(text))
    admitted = sorted(
        (tok for tok, c in counts.items() if c >= min_freq and tok not in _SPECIAL_IDS),
        key=lambda tok: (-counts[tok], tok),
    )
    room = max_size - NUM_SPECIALS
    return Vocabulary(tokens=SPECIAL_TOKENS + tuple(admitted[:room]))


def encode(vocab: Vocabulary, text: str) -> list[int]:
    """Text to ids. Whole whitespace-delimited marker literals map to their ids;
    everything else is normalized and looked up, unknown tokens become UNK.
    No BOS/EOS framing, callers own that."""
    ids: list[int] = []
    for piece in text.split():
        if piece in _SPECIAL_IDS:
            ids.append(_SPECIAL_IDS[piece])
            continue
        for tok in normalize(piece):
            ids.append(vocab.token_to_id(tok))
    return ids


def decode(vocab: Vocabulary, ids: list[int]) -> str:
    """Ids to text: specials and markers dropped, tokens joined by single spaces."""
    words = []
    for idx in ids:
        idx = int(idx)
        if idx < 0 or idx >= len(vocab):
            raise ValueError(f"token id {idx} out of range for vocabulary of {len(vocab)}")
        if idx < NUM_SPECIALS:
            continue
        words.append(vocab.id_to_token(idx))
    return " ".join(words)


def save_vocab(vocab: Vocabulary, path):
    """One token per line, line number = id."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write(tok + "\n")


def load_vocab(path) -> Vocabulary:
    with open(path, encoding="utf-8") as fh:
        tokens = tuple(line.rstrip("\n") for line in fh)
    return Vocabulary(tokens=tokens)
