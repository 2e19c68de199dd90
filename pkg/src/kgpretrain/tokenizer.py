"""Trainable byte-level BPE codec with byte offsets and span alignment.

Token id layout is dense: ids 0-4 are the special markers, ids 5-260 are
the 256 raw bytes, and merged tokens follow in merge-rank order. Merges
are chosen by highest pair frequency with lexicographic (byte-order)
tie-breaking, so retraining on the same corpus reproduces the vocabulary
exactly.

Pre-tokenization splits text into letter runs, digit runs, other-byte
runs (each optionally absorbing one preceding space) and whitespace
runs; merges never cross pre-token boundaries. Offsets are UTF-8 byte
offsets and always partition the encoded text.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .errors import DataError

PAD, CLS, SEP, MASK, UNK = 0, 1, 2, 3, 4
SPECIAL_TOKENS: dict[int, str] = {PAD: "[PAD]", CLS: "[CLS]", SEP: "[SEP]", MASK: "[MASK]", UNK: "[UNK]"}
NUM_SPECIALS = 5
BYTE_BASE = NUM_SPECIALS  # id of byte 0x00
FIRST_MERGED = BYTE_BASE + 256

_PRETOKEN = re.compile(rb" ?[A-Za-z]+| ?[0-9]+| ?[^\sA-Za-z0-9]+|\s+")

VOCAB_FORMAT_VERSION = 1


@dataclass
class Encoding:
    """Token ids plus per-token (byte_start, byte_end) offsets into the source."""

    ids: list[int]
    offsets: list[tuple[int, int]]

    def __len__(self) -> int:
        return len(self.ids)


@dataclass
class TokenSpan:
    """A half-open token-index range, optionally typed (for replacement)."""

    start: int
    end: int
    type_tag: str | None = None


@dataclass
class Vocabulary:
    merges: list[tuple[bytes, bytes]]
    ranks: dict[tuple[bytes, bytes], int] = field(init=False)
    token_to_id: dict[bytes, int] = field(init=False)
    id_to_bytes: list[bytes] = field(init=False)

    def __post_init__(self) -> None:
        self.ranks = {pair: i for i, pair in enumerate(self.merges)}
        self.id_to_bytes = [b""] * NUM_SPECIALS + [bytes([i]) for i in range(256)]
        for a, b in self.merges:
            self.id_to_bytes.append(a + b)
        self.token_to_id = {}
        for i in range(NUM_SPECIALS, len(self.id_to_bytes)):
            self.token_to_id[self.id_to_bytes[i]] = i

    @property
    def size(self) -> int:
        return FIRST_MERGED + len(self.merges)

    @property
    def special_ids(self) -> frozenset[int]:
        return frozenset(SPECIAL_TOKENS)

    @property
    def num_regular(self) -> int:
        return self.size - NUM_SPECIALS

    def is_special(self, token_id: int) -> bool:
        return token_id < NUM_SPECIALS

    def token_starts_with_space(self, token_id: int) -> bool:
        return not self.is_special(token_id) and self.id_to_bytes[token_id].startswith(b" ")

    def encode(self, text: str) -> Encoding:
        data = text.encode("utf-8")
        ids: list[int] = []
        offsets: list[tuple[int, int]] = []
        for m in _PRETOKEN.finditer(data):
            base = m.start()
            piece = m.group()
            parts = [(bytes([b]), base + i, base + i + 1) for i, b in enumerate(piece)]
            parts = self._merge_parts(parts)
            for tok, s, e in parts:
                ids.append(self.token_to_id[tok])
                offsets.append((s, e))
        return Encoding(ids, offsets)

    def _merge_parts(self, parts: list[tuple[bytes, int, int]]) -> list[tuple[bytes, int, int]]:
        while len(parts) > 1:
            best_rank = None
            for i in range(len(parts) - 1):
                r = self.ranks.get((parts[i][0], parts[i + 1][0]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank = r
            if best_rank is None:
                break
            pair = self.merges[best_rank]
            out: list[tuple[bytes, int, int]] = []
            i = 0
            while i < len(parts):
                if i + 1 < len(parts) and (parts[i][0], parts[i + 1][0]) == pair:
                    out.append((parts[i][0] + parts[i + 1][0], parts[i][1], parts[i + 1][2]))
                    i += 2
                else:
                    out.append(parts[i])
                    i += 1
            parts = out
        return parts

    def decode(self, ids: Iterable[int]) -> str:
        chunks: list[bytes] = []
        for i in ids:
            if i < NUM_SPECIALS:
                chunks.append(SPECIAL_TOKENS[i].encode("utf-8"))
            else:
                chunks.append(self.id_to_bytes[i])
        return b"".join(chunks).decode("utf-8", errors="replace")

    def save(self, path: str | Path) -> None:
        payload = {
            "version": VOCAB_FORMAT_VERSION,
            "merges": [[a.decode("latin-1"), b.decode("latin-1")] for a, b in self.merges],
            "specials": {SPECIAL_TOKENS[i]: i for i in sorted(SPECIAL_TOKENS)},
        }
        Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")

    def to_json_dict(self) -> dict:
        return {
            "version": VOCAB_FORMAT_VERSION,
            "merges": [[a.decode("latin-1"), b.decode("latin-1")] for a, b in self.merges],
            "specials": {SPECIAL_TOKENS[i]: i for i in sorted(SPECIAL_TOKENS)},
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "Vocabulary":
        if payload.get("version") != VOCAB_FORMAT_VERSION:
            raise DataError(f"vocabulary format version {payload.get('version')!r}, expected {VOCAB_FORMAT_VERSION}")
        merges = [(a.encode("latin-1"), b.encode("latin-1")) for a, b in payload["merges"]]
        return cls(merges)

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        try:
            payload = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise DataError(f"cannot read vocabulary {path}: {exc}") from exc
        return cls.from_json_dict(payload)


def train_bpe(corpus: Iterable[str], vocab_size: int) -> Vocabulary:
    """Train merges on a text stream until the vocabulary reaches vocab_size.

    Deterministic given corpus order: the most frequent adjacent pair is
    merged first, ties broken by byte-lexicographic order of the pair.
    Stops early if no pair occurs at least twice.
    """
    if vocab_size <= FIRST_MERGED:
        raise ValueError(f"vocab_size {vocab_size} must exceed the byte floor of {FIRST_MERGED}")
    word_freqs: Counter[tuple[bytes, ...]] = Counter()
    saw_text = False
    for text in corpus:
        saw_text = saw_text or bool(text)
        for m in _PRETOKEN.finditer(text.encode("utf-8")):
            word_freqs[tuple(bytes([b]) for b in m.group())] += 1
    if not saw_text or not word_freqs:
        raise ValueError("cannot train BPE on an empty corpus")

    merges: list[tuple[bytes, bytes]] = []
    words = dict(word_freqs)
    while len(merges) < vocab_size - FIRST_MERGED:
        pair_counts: Counter[tuple[bytes, bytes]] = Counter()
        for word, freq in words.items():
            for i in range(len(word) - 1):
                pair_counts[(word[i], word[i + 1])] += freq
        if not pair_counts:
            break
        top = max(pair_counts.values())
        if top < 2:
            break
        best = min(p for p, c in pair_counts.items() if c == top)
        merges.append(best)
        merged_tok = best[0] + best[1]
        new_words: dict[tuple[bytes, ...], int] = {}
        for word, freq in words.items():
            if len(word) > 1:
                out: list[bytes] = []
                i = 0
                while i < len(word):
                    if i + 1 < len(word) and (word[i], word[i + 1]) == best:
                        out.append(merged_tok)
                        i += 2
                    else:
                        out.append(word[i])
                        i += 1
                word = tuple(out)
            new_words[word] = new_words.get(word, 0) + freq
        words = new_words
    return Vocabulary(merges)


def align_spans(encoding: Encoding, spans: list) -> list[TokenSpan]:
    """Map byte spans to minimal covering token ranges.

    Boundaries that split a token expand outward to whole tokens; ranges
    overlapping an earlier result are dropped. Accepts KnowledgeSpan-like
    objects (``.start``/``.end``/optional ``.type_tag``) or (start, end)
    pairs; input must be sorted by start and lie within the encoded text.
    """
    offsets = encoding.offsets
    total = offsets[-1][1] if offsets else 0
    out: list[TokenSpan] = []
    last_end = 0
    prev_start = -1
    for sp in spans:
        if isinstance(sp, tuple):
            s, e = sp
            tag = None
        else:
            s, e = sp.start, sp.end
            tag = getattr(sp, "type_tag", None)
        if s < prev_start:
            raise ValueError("spans must be sorted by start")
        prev_start = s
        if s < 0 or e > total or s >= e:
            raise ValueError(f"span ({s}, {e}) outside encoded text of {total} bytes")
        t0 = next(i for i, (_, te) in enumerate(offsets) if te > s)
        t1 = max(i for i, (ts, _) in enumerate(offsets) if ts < e) + 1
        if t0 < last_end:
            continue
        out.append(TokenSpan(t0, t1, tag))
        last_end = t1
    return out
