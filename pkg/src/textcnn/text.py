"""Tweet preprocessing: tokenization, vocabulary, padding, datasets, embeddings.

Raw text goes through ``tokenize`` -> ``build_vocab`` -> ``encode`` and comes
out as fixed-length id sequences ready for the models.  Dataset loading
understands a plain two-column CSV and the six-field sentiment140 layout.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ParseError, RecordError
from .tensor import Pcg32

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_ID = 0
UNK_ID = 1

# Fixed 25-word stopword list, version 1.  Applied only when a caller asks
# for it; neural models keep stopwords because word order carries signal.
STOPWORDS = frozenset(
    "the a an and or but if of at by for with to from in on is are was "
    "were be been it this that".split()
)

_URL_RE = r"(?:https?://|www\.)\S+"
_MENTION_RE = r"@\w+"
_WORD_RE = r"[\w']+"
_TOKEN_RE = re.compile(f"(?P<url>{_URL_RE})|(?P<user>{_MENTION_RE})|(?P<word>{_WORD_RE})")


@dataclass
class TokenizerOptions:
    lowercase: bool = True
    strip_stopwords: bool = False


def tokenize(text: str, options: TokenizerOptions | None = None) -> list[str]:
    """Split text into tokens: URLs -> "<url>", @-mentions -> "<user>",
    everything else stripped of punctuation (and lowercased by default)."""
    opts = options or TokenizerOptions()
    out = []
    for m in _TOKEN_RE.finditer(text):
        if m.lastgroup == "url":
            out.append("<url>")
            continue
        if m.lastgroup == "user":
            out.append("<user>")
            continue
        word = m.group("word").strip("'")
        if not word:
            continue
        if opts.lowercase:
            word = word.lower()
        if opts.strip_stopwords and word.lower() in STOPWORDS:
            continue
        out.append(word)
    return out


@dataclass
class Vocabulary:
    """Token <-> id mapping; ids 0 and 1 are reserved for pad and unk."""

    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: list[str] = field(default_factory=lambda: [PAD_TOKEN, UNK_TOKEN])
    pad_id: int = PAD_ID
    unk_id: int = UNK_ID

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.unk_id)

    def tokens_of(self, ids) -> list[str]:
        return [self.id_to_token[int(i)] for i in ids]


def build_vocab(corpus, min_count: int = 1) -> Vocabulary:
    """Index tokens with frequency >= min_count, most frequent first,
    ties broken lexicographically."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: dict[str, int] = {}
    for tokens in corpus:
        for t in tokens:
            counts[t] = counts.get(t, 0) + 1
    kept = sorted(
        (t for t, c in counts.items() if c >= min_count),
        key=lambda t: (-counts[t], t),
    )
    vocab = Vocabulary()
    for t in kept:
        vocab.token_to_id[t] = len(vocab.id_to_token)
        vocab.id_to_token.append(t)
    return vocab


def encode(tokens, vocab: Vocabulary, max_len: int) -> list[int]:
    """First max_len tokens as ids, unknowns -> unk, right-padded with pad."""
    if max_len < 1:
        raise ValueError(f"max_len must be >= 1, got {max_len}")
    ids = [vocab.id_of(t) for t in tokens[:max_len]]
    ids.extend([vocab.pad_id] * (max_len - len(ids)))
    return ids


def encode_batch(token_lists, vocab: Vocabulary, max_len: int) -> np.ndarray:
    return np.array([encode(t, vocab, max_len) for t in token_lists], dtype=np.int64)


def _split_csv_line(line: str, row: int) -> list[str]:
    """Strict splitter for one CSV record; handles double-quoted fields
    with "" escapes and raises ParseError on unbalanced quotes."""
    fields = []
    i, n = 0, len(line)
    while True:
        if i < n and line[i] == '"':
            i += 1
            buf = []
            while True:
                if i >= n:
                    raise ParseError(f"row {row}: unbalanced quotes")
                ch = line[i]
                if ch == '"':
                    if i + 1 < n and line[i + 1] == '"':
                        buf.append('"')
                        i += 2
                        continue
                    i += 1
                    break
                buf.append(ch)
                i += 1
            if i < n and line[i] != ",":
                raise ParseError(f"row {row}: garbage after closing quote")
            fields.append("".join(buf))
        else:
            j = line.find(",", i)
            if j == -1:
                fields.append(line[i:])
                i = n
            else:
                fields.append(line[i:j])
                i = j
        if i >= n:
            return fields
        i += 1  # skip the comma
        if i == n:  # trailing comma -> empty last field
            fields.append("")
            return fields


def load_dataset(path, fmt: str = "two_col") -> list[tuple[int, str]]:
    """Read (label, text) records.

    two_col: ``label,text`` with label in {0, 1}; text may be quoted.
    sentiment140: six quoted fields, target {0, 4} in field 1 (mapped to
    {0, 1}) and the tweet in field 6.
    """
    if fmt not in ("two_col", "sentiment140"):
        raise ValueError(f"unknown dataset format: {fmt!r}")
    records = []
    with open(path, encoding="utf-8") as fh:
        for row, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = _split_csv_line(line, row)
            if fmt == "two_col":
                if len(fields) != 2:
                    raise ParseError(f"row {row}: expected 2 fields, got {len(fields)}")
                target, text = fields
                if target not in ("0", "1"):
                    raise RecordError(f"row {row}: unknown target value {target!r}")
                records.append((int(target), text))
            else:
                if len(fields) != 6:
                    raise ParseError(f"row {row}: expected 6 fields, got {len(fields)}")
                target, text = fields[0], fields[5]
                if target == "0":
                    records.append((0, text))
                elif target == "4":
                    records.append((1, text))
                else:
                    raise RecordError(f"row {row}: unknown target value {target!r}")
    return records


@dataclass
class EmbeddingMatrix:
    table: np.ndarray  # [vocab_size, emb_dim]
    trainable: bool = True


def load_pretrained(
    path, vocab: Vocabulary, emb_dim: int, rng: Pcg32
) -> tuple[EmbeddingMatrix, int]:
    """Load word vectors for the vocabulary.

    File lines are ``token v1 ... v_emb_dim``.  Rows for tokens present in
    both file and vocab are copied verbatim; absent tokens get uniform
    (-0.25, 0.25) entries; the pad row stays zero.  Returns the matrix and
    the number of vocabulary tokens covered by the file.
    """
    vectors: dict[str, np.ndarray] = {}
    width = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split(" ")
            if len(parts) < 2:
                raise ParseError(f"line {lineno}: expected token and values")
            token, raw = parts[0], parts[1:]
            if width is None:
                width = len(raw)
                if width != emb_dim:
                    raise FormatError(
                        f"embedding width {width} does not match emb_dim {emb_dim}"
                    )
            elif len(raw) != width:
                raise FormatError(
                    f"line {lineno}: vector width {len(raw)} != {width}"
                )
            try:
                vec = np.array([float(v) for v in raw], dtype=np.float64)
            except ValueError as exc:
                raise ParseError(f"line {lineno}: bad float ({exc})") from None
            if token in vocab.token_to_id:
                vectors[token] = vec
    table = np.zeros((vocab.size, emb_dim), dtype=np.float64)
    coverage = 0
    for tid in range(1, vocab.size):  # row 0 (pad) stays zero
        token = vocab.id_to_token[tid]
        if token in vectors:
            table[tid] = vectors[token]
            coverage += 1
        else:
            table[tid] = rng.uniform_array(emb_dim, -0.25, 0.25)
    return EmbeddingMatrix(table), coverage
