"""Wikipedia-style dump ingestion and knowledge-span annotation.

Spans are located in three steps: collect each article's anchor surfaces,
extend with the anchor surfaces of out-linked articles present in the
same dump (2-hop), then extend with aliases from an optional alias table
(which also contributes type tags). The final surface set is matched
greedily left-to-right, longest match first, at word boundaries; original
anchor ranges always survive, either verbatim or inside a longer match.

All offsets are UTF-8 byte offsets.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import DataError
from .logutil import log

PROV_ANCHOR = "anchor"
PROV_2HOP = "2hop"
PROV_ALIAS = "alias"


@dataclass
class AnchorLink:
    start: int
    end: int
    surface: str
    target_title: str


@dataclass
class Article:
    id: str
    title: str
    text: str
    links: list[AnchorLink]
    _bytes: bytes = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._bytes = self.text.encode("utf-8")

    @property
    def text_bytes(self) -> bytes:
        return self._bytes


@dataclass
class KnowledgeSpan:
    start: int
    end: int
    surface: str
    provenance: str
    type_tag: str | None = None


@dataclass
class AnnotatedArticle:
    article: Article
    spans: list[KnowledgeSpan]


@dataclass(frozen=True)
class LexiconEntry:
    surface: str
    provenance: str
    type_tag: str | None = None


# article id -> surface -> entry
SpanLexicon = dict[str, dict[str, LexiconEntry]]


def parse_dump(path: str | Path, format: str = "jsonl", strict: bool = False) -> Iterator[Article]:
    """Yield articles from a JSONL dump in file order.

    Malformed lines are skipped with a warning, or raise DataError naming
    the line when ``strict`` is set.
    """
    if format != "jsonl":
        raise ValueError(f"unsupported dump format {format!r}")
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read dump {path}: {exc}") from exc
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            article = _parse_article_line(line)
        except (UnicodeDecodeError, json.JSONDecodeError, DataError, KeyError, TypeError) as exc:
            if strict:
                raise DataError(f"{path}:{lineno}: malformed article record: {exc}") from exc
            log("skip_malformed_line", file=str(path), line=lineno, reason=str(exc))
            continue
        yield article


def _parse_article_line(line: bytes) -> Article:
    record = json.loads(line.decode("utf-8"))
    if not isinstance(record, dict):
        raise DataError("record is not an object")
    aid = record["id"]
    title = record["title"]
    text = record["text"]
    if not isinstance(aid, str) or not aid or not isinstance(title, str) or not isinstance(text, str):
        raise DataError("id/title/text must be non-empty strings")
    data = text.encode("utf-8")
    links = []
    for raw_link in record.get("links", []):
        s, e, target = raw_link["start"], raw_link["end"], raw_link["target"]
        if not (isinstance(s, int) and isinstance(e, int) and 0 <= s < e <= len(data)):
            raise DataError(f"link range ({s}, {e}) invalid for text of {len(data)} bytes")
        if not isinstance(target, str) or not target:
            raise DataError("link target must be a non-empty title")
        try:
            surface = data[s:e].decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DataError(f"link range ({s}, {e}) splits a UTF-8 sequence") from exc
        links.append(AnchorLink(s, e, surface, target))
    return Article(aid, title, text, links)


def load_alias_table(path: str | Path) -> dict[str, tuple[list[str], str | None]]:
    """surface -> (aliases, type_tag); first occurrence of a surface wins."""
    table: dict[str, tuple[list[str], str | None]] = {}
    path = Path(path)
    try:
        lines = path.read_bytes().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read alias table {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line.decode("utf-8"))
            surface = record["surface"]
            aliases = record["aliases"]
            type_tag = record.get("type")
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path}:{lineno}: malformed alias record: {exc}") from exc
        if not isinstance(surface, str) or not isinstance(aliases, list):
            raise DataError(f"{path}:{lineno}: alias record fields have wrong types")
        if surface not in table:
            table[surface] = ([a for a in aliases if isinstance(a, str) and a], type_tag)
    return table


def build_lexicon(
    articles: Iterable[Article],
    alias_table: dict[str, tuple[list[str], str | None]] | None = None,
) -> SpanLexicon:
    """Assemble the per-article candidate surface sets (anchor / 2hop / alias).

    Two passes: the first collects every article's own anchor surfaces and
    link targets, the second expands each article with the anchor surfaces
    of its out-linked articles (restricted to articles in the dump) and
    with alias-table entries for anything already in the set. Output is
    independent of iteration order; surfaces deduplicate case-sensitively
    with the strongest provenance (anchor > 2hop > alias) kept.
    """
    own_anchors: dict[str, list[str]] = {}
    out_targets: dict[str, list[str]] = {}
    by_title: dict[str, str] = {}
    order: list[str] = []
    for art in articles:
        if art.id in own_anchors:
            raise DataError(f"duplicate article id {art.id!r}")
        seen: set[str] = set()
        anchors: list[str] = []
        targets: list[str] = []
        for link in art.links:
            if link.surface not in seen:
                seen.add(link.surface)
                anchors.append(link.surface)
            targets.append(link.target_title)
        own_anchors[art.id] = anchors
        out_targets[art.id] = targets
        by_title.setdefault(art.title, art.id)
        order.append(art.id)

    def tag_of(surface: str) -> str | None:
        if alias_table and surface in alias_table:
            return alias_table[surface][1]
        return None

    lexicon: SpanLexicon = {}
    for aid in order:
        entries: dict[str, LexiconEntry] = {}
        for surface in own_anchors[aid]:
            entries[surface] = LexiconEntry(surface, PROV_ANCHOR, tag_of(surface))
        for target in out_targets[aid]:
            target_id = by_title.get(target)
            if target_id is None:
                continue
            for surface in own_anchors[target_id]:
                if surface not in entries:
                    entries[surface] = LexiconEntry(surface, PROV_2HOP, tag_of(surface))
        if alias_table:
            for surface in list(entries):
                if surface in alias_table:
                    for alias in alias_table[surface][0]:
                        if alias not in entries:
                            entries[alias] = LexiconEntry(alias, PROV_ALIAS, alias_table[surface][1])
        lexicon[aid] = entries
    return lexicon


def _is_word_byte(c: int) -> bool:
    # ASCII alnum/underscore; bytes >= 0x80 belong to multi-byte letters
    return 48 <= c <= 57 or 65 <= c <= 90 or 97 <= c <= 122 or c == 95 or c >= 128


def _word_bounded(data: bytes, s: int, e: int) -> bool:
    left_ok = s == 0 or not (_is_word_byte(data[s - 1]) and _is_word_byte(data[s]))
    right_ok = e == len(data) or not (_is_word_byte(data[e - 1]) and _is_word_byte(data[e]))
    return left_ok and right_ok


def match_spans(article: Article, lexicon_entry: dict[str, LexiconEntry]) -> AnnotatedArticle:
    """Greedy left-to-right longest-match annotation over one article.

    Deterministic and independent of lexicon iteration order: candidates
    are tried longest-first at each position, matches must sit on word
    boundaries, and a candidate that would partially overlap an anchor
    range is rejected (anchors are either emitted verbatim or swallowed
    whole by a longer match).
    """
    data = article.text_bytes
    anchors: list[AnchorLink] = []
    for link in sorted(article.links, key=lambda l: (l.start, -l.end)):
        if not anchors or link.start >= anchors[-1].end:
            anchors.append(link)

    by_first: dict[int, list[tuple[bytes, LexiconEntry]]] = {}
    for surface, entry in lexicon_entry.items():
        sb = surface.encode("utf-8")
        if sb:
            by_first.setdefault(sb[0], []).append((sb, entry))
    for bucket in by_first.values():
        bucket.sort(key=lambda it: (-len(it[0]), it[0]))

    def anchors_compatible(s: int, e: int, ai: int) -> bool:
        # every anchor overlapping [s, e) must be fully contained
        j = ai
        while j < len(anchors) and anchors[j].start < e:
            if anchors[j].start < s or anchors[j].end > e:
                return False
            j += 1
        return True

    def best_match_at(pos: int, ai: int, must_cover_end: int | None = None) -> tuple[int, LexiconEntry] | None:
        for sb, entry in by_first.get(data[pos], ()):  # longest first
            end = pos + len(sb)
            if must_cover_end is not None and end < must_cover_end:
                break  # sorted by length: nothing longer remains
            if data.startswith(sb, pos) and _word_bounded(data, pos, end) and anchors_compatible(pos, end, ai):
                return end, entry
        return None

    spans: list[KnowledgeSpan] = []

    def emit(s: int, e: int, entry: LexiconEntry | None) -> None:
        surface = data[s:e].decode("utf-8")
        if entry is None:
            fallback = lexicon_entry.get(surface)
            prov = PROV_ANCHOR
            tag = fallback.type_tag if fallback else None
        else:
            prov, tag = entry.provenance, entry.type_tag
        spans.append(KnowledgeSpan(s, e, surface, prov, tag))

    pos = 0
    ai = 0
    n = len(data)
    while pos < n:
        while ai < len(anchors) and anchors[ai].start < pos:
            ai += 1
        if ai < len(anchors) and anchors[ai].start == pos:
            anchor = anchors[ai]
            m = best_match_at(pos, ai, must_cover_end=anchor.end) if data[pos] in by_first else None
            if m is not None and m[0] >= anchor.end:
                end, entry = m
                emit(pos, end, entry)
                pos = end
            else:
                emit(anchor.start, anchor.end, lexicon_entry.get(anchor.surface))
                pos = anchor.end
            continue
        m = best_match_at(pos, ai) if pos < n and data[pos] in by_first else None
        if m is not None:
            end, entry = m
            emit(pos, end, entry)
            pos = end
        else:
            pos += 1
    return AnnotatedArticle(article, spans)


@dataclass
class CorpusStats:
    articles: int
    spans: int
    mean_spans: float
    max_spans: int

    def to_json_dict(self) -> dict:
        return {
            "articles": self.articles,
            "spans": self.spans,
            "mean_spans": round(self.mean_spans, 4),
            "max_spans": self.max_spans,
        }


def corpus_stats(annotated: Iterable[AnnotatedArticle]) -> CorpusStats:
    articles = 0
    spans = 0
    max_spans = 0
    for aa in annotated:
        articles += 1
        spans += len(aa.spans)
        max_spans = max(max_spans, len(aa.spans))
    mean = spans / articles if articles else 0.0
    return CorpusStats(articles, spans, mean, max_spans)


# ---------------------------------------------------------------------------
# annotated JSONL i/o
# ---------------------------------------------------------------------------


def annotated_to_record(aa: AnnotatedArticle) -> dict:
    art = aa.article
    return {
        "id": art.id,
        "title": art.title,
        "text": art.text,
        "links": [{"start": l.start, "end": l.end, "target": l.target_title} for l in art.links],
        "spans": [
            {"start": s.start, "end": s.end, "surface": s.surface, "source": s.provenance, "type": s.type_tag}
            for s in aa.spans
        ],
    }


def record_to_annotated(record: dict) -> AnnotatedArticle:
    article = Article(
        record["id"],
        record["title"],
        record["text"],
        [
            AnchorLink(
                l["start"],
                l["end"],
                record["text"].encode("utf-8")[l["start"] : l["end"]].decode("utf-8"),
                l["target"],
            )
            for l in record.get("links", [])
        ],
    )
    spans = [
        KnowledgeSpan(s["start"], s["end"], s["surface"], s["source"], s.get("type"))
        for s in record.get("spans", [])
    ]
    return AnnotatedArticle(article, spans)


def write_annotated(path: str | Path, annotated: Iterable[AnnotatedArticle]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for aa in annotated:
            fh.write(json.dumps(annotated_to_record(aa), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


def read_annotated(path: str | Path) -> Iterator[AnnotatedArticle]:
    path = Path(path)
    try:
        lines = path.read_bytes().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read annotated corpus {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield record_to_annotated(json.loads(line.decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
            raise DataError(f"{path}:{lineno}: malformed annotated record: {exc}") from exc


def extract_spans(
    dump_path: str | Path,
    aliases_path: str | Path | None = None,
    strict: bool = False,
    threads: int = 1,
) -> list[AnnotatedArticle]:
    """Full extraction pipeline: parse, build lexicon, match, in input order."""
    articles = list(parse_dump(dump_path, strict=strict))
    alias_table = load_alias_table(aliases_path) if aliases_path else None
    lexicon = build_lexicon(articles, alias_table)
    if threads > 1:
        # per-article matching is pure; pool output is ordered by imap
        from multiprocessing import Pool

        with Pool(threads) as pool:
            return pool.starmap(match_spans, [(a, lexicon[a.id]) for a in articles])
    return [match_spans(a, lexicon[a.id]) for a in articles]
