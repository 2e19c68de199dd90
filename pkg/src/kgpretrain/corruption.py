"""Seeded span/subword corruption: masking for the generator, replacement
with per-token labels for the discriminator.

Both operations run the same iterative draw protocol against a token
budget of ceil(ratio * n_non_special):

  1. rng = random.Random(epoch_seed(...)); draws use only rng.random()
     and rng.randrange(), in the exact order documented here.
  2. Each draw flips a coin: rng.random() < span_choice_prob requests a
     whole-span draw, otherwise a single-subword draw. A requested kind
     with an empty candidate pool falls through to the other kind; if
     both pools are empty the loop stops early.
  3. Span candidates are the untouched annotated spans, kept sorted by
     start; rng.randrange(len(candidates)) picks one and it is consumed
     atomically (spans are never partially masked or replaced). Subword
     candidates are the untouched non-special positions outside all
     spans, kept sorted; same randrange selection.
  4. The loop stops as soon as the consumed-token count reaches the
     budget, so the final count overshoots by at most (span length - 1).

Masked positions always become [MASK] (no 80/10/10 split). Replacement
samples a pool entry from the span's type bucket (fallback ANY),
preferring entries whose tokenization has the original token length;
identity redraws are attempted up to 8 times per bucket before the draw
is skipped. Subword replacements sample a uniformly random non-special
vocabulary id.

Epoch/example seeds come from a SplitMix64-style avalanche chain over
(base, epoch, example_id); changing any argument rederives an unrelated
stream, which is what makes per-epoch corruption "dynamic".
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .tokenizer import MASK, NUM_SPECIALS, TokenSpan, Vocabulary

ANY_TAG = "ANY"

# stream separators so mask/replace/sampling draws never share a sequence
REPLACE_SALT = 0x5245504C4143452E  # "REPLACE."
SAMPLE_SALT = 0x53414D504C452E2E  # "SAMPLE.."
SHUFFLE_SALT = 0x53485546464C452E  # "SHUFFLE."

_M64 = (1 << 64) - 1
_MIX_GAMMA = 0x9E3779B97F4B9FC1
_MIX_C1 = 0xBF58476D1CE4E5B9
_MIX_C2 = 0x94D049BB133111EB


def _avalanche(x: int) -> int:
    x &= _M64
    x = ((x ^ (x >> 30)) * _MIX_C1) & _M64
    x = ((x ^ (x >> 27)) * _MIX_C2) & _M64
    return x ^ (x >> 31)


def epoch_seed(base: int, epoch: int, example_id: int) -> int:
    """64-bit mix of (base, epoch, example_id); any argument change avalanches."""
    h = _avalanche(base)
    h = _avalanche(h ^ ((epoch * _MIX_GAMMA + 1) & _M64))
    h = _avalanche(h ^ ((example_id * _MIX_GAMMA + 2) & _M64))
    return h


class CorruptionError(ValueError):
    pass


@dataclass
class MaskConfig:
    mask_ratio: float = 0.15
    span_choice_prob: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.mask_ratio < 1.0:
            raise ValueError(f"mask_ratio {self.mask_ratio} outside (0, 1)")
        if not 0.0 <= self.span_choice_prob <= 1.0:
            raise ValueError(f"span_choice_prob {self.span_choice_prob} outside [0, 1]")


@dataclass
class GenExample:
    input_ids: list[int]
    target_ids: list[int]
    mask_flags: list[int]


@dataclass
class DiscExample:
    input_ids: list[int]
    labels: list[int]
    origin_ids: list[int]  # -1 where a length-changing splice broke alignment
    replaced_regions: list[tuple[int, int, str]] = field(default_factory=list)  # output coords, kind
    consumed: int = 0  # original tokens consumed by draws (the budget measure)


@dataclass(frozen=True)
class PoolEntry:
    surface: str
    ids_bare: tuple[int, ...]
    ids_space: tuple[int, ...]

    def form(self, leading_space: bool) -> tuple[int, ...]:
        return self.ids_space if leading_space else self.ids_bare


@dataclass
class ReplacementPool:
    buckets: dict[str, list[PoolEntry]] = field(default_factory=dict)

    @property
    def any_bucket(self) -> list[PoolEntry]:
        return self.buckets.get(ANY_TAG, [])


def build_replacement_pool(annotated: Iterable, vocab: Vocabulary) -> ReplacementPool:
    """One pre-tokenized entry per distinct surface per type bucket.

    Every surface also lands in the ANY bucket, so ANY is the union of
    all buckets. Order is first-seen, hence deterministic for a fixed
    corpus. Surfaces are tokenized both bare and with a leading space so
    a replacement can match the form of the span it replaces.
    """
    pool = ReplacementPool()
    seen: set[tuple[str, str]] = set()

    def add(tag: str, surface: str) -> None:
        if (tag, surface) in seen:
            return
        seen.add((tag, surface))
        entry = PoolEntry(
            surface,
            tuple(vocab.encode(surface).ids),
            tuple(vocab.encode(" " + surface).ids),
        )
        pool.buckets.setdefault(tag, []).append(entry)

    for aa in annotated:
        for span in aa.spans:
            if not span.surface.strip():
                continue
            if span.type_tag:
                add(span.type_tag, span.surface)
            add(ANY_TAG, span.surface)
    return pool


def _budget(ids: Sequence[int], special_ids: frozenset[int], ratio: float) -> tuple[int, int]:
    n_ns = sum(1 for t in ids if t not in special_ids)
    return n_ns, math.ceil(ratio * n_ns)


def _validate_spans(ids: Sequence[int], span_ranges: Sequence[TokenSpan], special_ids: frozenset[int]) -> list[TokenSpan]:
    prev_end = 0
    out = []
    for sp in span_ranges:
        if not 0 <= sp.start < sp.end <= len(ids):
            raise CorruptionError(f"span range ({sp.start}, {sp.end}) outside sequence of {len(ids)}")
        if sp.start < prev_end:
            raise CorruptionError("span ranges overlap or are unsorted")
        if any(ids[i] in special_ids for i in range(sp.start, sp.end)):
            raise CorruptionError("span range covers a special token")
        prev_end = sp.end
        out.append(sp)
    return out


def _subword_positions(ids: Sequence[int], spans: Sequence[TokenSpan], special_ids: frozenset[int]) -> list[int]:
    covered = set()
    for sp in spans:
        covered.update(range(sp.start, sp.end))
    return [i for i, t in enumerate(ids) if t not in special_ids and i not in covered]


def k_mask(
    ids: Sequence[int],
    span_ranges: Sequence[TokenSpan],
    cfg: MaskConfig,
    epoch: int,
    example_id: int,
    vocab: Vocabulary,
) -> GenExample:
    """Mix of whole-span and single-subword masking up to the token budget."""
    special_ids = vocab.special_ids
    n_ns, budget = _budget(ids, special_ids, cfg.mask_ratio)
    if n_ns < 2:
        raise CorruptionError(f"sequence has {n_ns} non-special tokens; need at least 2")
    spans = _validate_spans(ids, span_ranges, special_ids)
    rng = random.Random(epoch_seed(cfg.seed, epoch, example_id))

    remaining = list(spans)
    subwords = _subword_positions(ids, spans, special_ids)
    masked: set[int] = set()
    count = 0
    while count < budget:
        want_span = rng.random() < cfg.span_choice_prob
        if want_span and remaining:
            sp = remaining.pop(rng.randrange(len(remaining)))
            masked.update(range(sp.start, sp.end))
            count += sp.end - sp.start
        elif subwords:
            masked.add(subwords.pop(rng.randrange(len(subwords))))
            count += 1
        elif remaining:
            sp = remaining.pop(rng.randrange(len(remaining)))
            masked.update(range(sp.start, sp.end))
            count += sp.end - sp.start
        else:
            break

    input_ids = [MASK if i in masked else t for i, t in enumerate(ids)]
    flags = [1 if i in masked else 0 for i in range(len(ids))]
    return GenExample(input_ids, list(ids), flags)


def _sample_entry(
    bucket: list[PoolEntry],
    original: tuple[int, ...],
    leading_space: bool,
    rng: random.Random,
    equal_length_only: bool,
) -> tuple[int, ...] | None:
    if not bucket:
        return None
    forms = [e.form(leading_space) for e in bucket]
    candidates = [f for f in forms if len(f) == len(original)]
    if not candidates:
        if equal_length_only:
            return None
        candidates = forms
    for _ in range(8):
        pick = candidates[rng.randrange(len(candidates))]
        if pick != original:
            return pick
    return None


def k_replace(
    ids: Sequence[int],
    span_ranges: Sequence[TokenSpan],
    pool: ReplacementPool | None,
    vocab: Vocabulary,
    cfg: MaskConfig,
    epoch: int,
    example_id: int,
    *,
    ratio: float | None = None,
    equal_length_only: bool = False,
) -> DiscExample:
    """Same draw protocol as k_mask, but spans are swapped for same-type
    pool entries and subwords for random vocabulary tokens.

    Labels are region-wise 1 inside replaced spans; a replaced subword is
    1 only if the sampled token differs from the original. A span draw
    whose sampling fails (identity after 8+8 redraws, or no equal-length
    entry when required) is skipped without consuming budget.
    """
    special_ids = vocab.special_ids
    use_ratio = cfg.mask_ratio if ratio is None else ratio
    n_ns, budget = _budget(ids, special_ids, use_ratio)
    if n_ns < 2:
        raise CorruptionError(f"sequence has {n_ns} non-special tokens; need at least 2")
    spans = _validate_spans(ids, span_ranges, special_ids)
    if spans and (pool is None or not pool.any_bucket):
        raise CorruptionError("replacement pool is empty at ANY")
    rng = random.Random(epoch_seed(cfg.seed ^ REPLACE_SALT, epoch, example_id))

    remaining = list(spans)
    subwords = _subword_positions(ids, spans, special_ids)
    span_ops: dict[int, tuple[int, tuple[int, ...]]] = {}  # start -> (end, new ids)
    subword_ops: dict[int, int] = {}
    count = 0

    def draw_span() -> None:
        nonlocal count
        sp = remaining.pop(rng.randrange(len(remaining)))
        original = tuple(ids[sp.start : sp.end])
        leading_space = vocab.token_starts_with_space(original[0])
        new = None
        if sp.type_tag and sp.type_tag != ANY_TAG and sp.type_tag in pool.buckets:
            new = _sample_entry(pool.buckets[sp.type_tag], original, leading_space, rng, equal_length_only)
        if new is None:
            new = _sample_entry(pool.any_bucket, original, leading_space, rng, equal_length_only)
        if new is None:
            return  # skipped draw
        span_ops[sp.start] = (sp.end, new)
        count += sp.end - sp.start

    def draw_subword() -> None:
        nonlocal count
        pos = subwords.pop(rng.randrange(len(subwords)))
        subword_ops[pos] = NUM_SPECIALS + rng.randrange(vocab.num_regular)
        count += 1

    while count < budget:
        want_span = rng.random() < cfg.span_choice_prob
        if want_span and remaining:
            draw_span()
        elif subwords:
            draw_subword()
        elif remaining:
            draw_span()
        else:
            break

    out_ids: list[int] = []
    labels: list[int] = []
    origin: list[int] = []
    regions: list[tuple[int, int, str]] = []
    i = 0
    while i < len(ids):
        if i in span_ops:
            end, new = span_ops[i]
            start_out = len(out_ids)
            out_ids.extend(new)
            labels.extend([1] * len(new))
            if len(new) == end - i:
                origin.extend(ids[i:end])
            else:
                origin.extend([-1] * len(new))
            regions.append((start_out, len(out_ids), "span"))
            i = end
        elif i in subword_ops:
            new_tok = subword_ops[i]
            regions.append((len(out_ids), len(out_ids) + 1, "subword"))
            out_ids.append(new_tok)
            labels.append(1 if new_tok != ids[i] else 0)
            origin.append(ids[i])
            i += 1
        else:
            out_ids.append(ids[i])
            labels.append(0)
            origin.append(ids[i])
            i += 1
    return DiscExample(out_ids, labels, origin, regions, count)
