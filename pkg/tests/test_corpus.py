"""Dump parsing, lexicon assembly, and greedy span matching."""

import json

import pytest

from kgpretrain.corpus import (
    AnchorLink,
    Article,
    LexiconEntry,
    build_lexicon,
    corpus_stats,
    extract_spans,
    load_alias_table,
    match_spans,
    parse_dump,
    read_annotated,
    record_to_annotated,
    write_annotated,
)
from kgpretrain.errors import DataError


def _write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")


def _article(aid, title, text, links=()):
    return Article(aid, title, text, [AnchorLink(s, e, text.encode()[s:e].decode(), t) for s, e, t in links])


def test_parse_empty_file(tmp_path):
    p = tmp_path / "dump.jsonl"
    p.write_text("")
    assert list(parse_dump(p)) == []


def test_parse_one_record_with_two_links(tmp_path):
    text = "Paris is in France ."
    rec = {
        "id": "a1",
        "title": "Paris",
        "text": text,
        "links": [
            {"start": 0, "end": 5, "target": "Paris"},
            {"start": 12, "end": 18, "target": "France"},
        ],
    }
    p = tmp_path / "dump.jsonl"
    _write_jsonl(p, [rec])
    arts = list(parse_dump(p))
    assert len(arts) == 1
    art = arts[0]
    assert art.id == "a1" and art.title == "Paris"
    assert len(art.links) == 2
    assert art.links[0].surface == "Paris"
    assert art.links[1].surface == "France"


def test_parse_invalid_utf8_strict_names_line(tmp_path):
    p = tmp_path / "dump.jsonl"
    good = json.dumps({"id": "a", "title": "A", "text": "x", "links": []}).encode()
    p.write_bytes(good + b"\n" + b'{"id": "b", "title": "\xff\xfe"}\n')
    with pytest.raises(DataError, match=":2"):
        list(parse_dump(p, strict=True))


def test_parse_skips_malformed_when_lenient(tmp_path, capsys):
    p = tmp_path / "dump.jsonl"
    good = {"id": "a", "title": "A", "text": "x", "links": []}
    bad = {"id": "b", "title": "B", "text": "hi", "links": [{"start": 0, "end": 99, "target": "T"}]}
    _write_jsonl(p, [good, bad])
    arts = list(parse_dump(p))
    assert [a.id for a in arts] == ["a"]
    assert "skip_malformed_line" in capsys.readouterr().err


def test_parse_rejects_unknown_format(tmp_path):
    with pytest.raises(ValueError, match="format"):
        list(parse_dump(tmp_path / "x", format="xml"))


def test_parse_missing_file(tmp_path):
    with pytest.raises(DataError, match="cannot read"):
        list(parse_dump(tmp_path / "missing.jsonl"))


def test_lexicon_article_without_links_is_empty():
    lex = build_lexicon([_article("a", "A", "no links here")])
    assert lex == {"a": {}}


def test_lexicon_two_hop_trace():
    a = _article("a", "A", "A links to Paris here", [(11, 16, "Paris")])
    b = _article("b", "Paris", "France is anchored", [(0, 6, "France")])
    lex = build_lexicon([a, b])
    assert lex["a"]["Paris"] == LexiconEntry("Paris", "anchor", None)
    assert lex["a"]["France"] == LexiconEntry("France", "2hop", None)
    assert set(lex["b"]) == {"France"}


def test_lexicon_alias_trace():
    a = _article("a", "A", "A links to Paris here", [(11, 16, "Paris")])
    b = _article("b", "Paris", "France is anchored", [(0, 6, "France")])
    aliases = {"Paris": (["City of Light"], "CITY")}
    lex = build_lexicon([a, b], aliases)
    assert lex["a"]["City of Light"] == LexiconEntry("City of Light", "alias", "CITY")
    # type tag rides along onto the base surface too
    assert lex["a"]["Paris"].type_tag == "CITY"


def test_lexicon_monotone_growth():
    a = _article("a", "A", "A links to Paris here", [(11, 16, "Paris")])
    b = _article("b", "Paris", "France is anchored", [(0, 6, "France")])
    aliases = {"Paris": (["City of Light"], "CITY"), "France": (["Hexagon"], "COUNTRY")}
    anchor_only = {aid: set(e) for aid, e in build_lexicon([_strip(a), _strip(b)]).items()}
    with_2hop = {aid: set(e) for aid, e in build_lexicon([a, b]).items()}
    with_alias = {aid: set(e) for aid, e in build_lexicon([a, b], aliases).items()}
    for aid in ("a", "b"):
        assert anchor_only[aid] <= with_2hop[aid] <= with_alias[aid]


def _strip(art):
    # drop out-links but keep anchors, to isolate the anchor-only set
    return Article(art.id, art.title, art.text, [AnchorLink(l.start, l.end, l.surface, "<<nowhere>>") for l in art.links])


def test_lexicon_duplicate_id_rejected():
    a1 = _article("a", "A", "x")
    a2 = _article("a", "B", "y")
    with pytest.raises(DataError, match="duplicate"):
        build_lexicon([a1, a2])


def test_match_no_candidates_no_anchors():
    art = _article("a", "A", "nothing to see here")
    assert match_spans(art, {}).spans == []


def test_match_longest_wins_hand_traced():
    art = _article("a", "A", "Paris is in France")
    entries = {
        s: LexiconEntry(s, "anchor", None) for s in ("Paris", "France", "in France")
    }
    out = match_spans(art, entries)
    assert [(s.start, s.end, s.surface) for s in out.spans] == [(0, 5, "Paris"), (9, 18, "in France")]


def test_match_overlapping_candidates_longest_only():
    art = _article("a", "A", "I saw New York today")
    entries = {s: LexiconEntry(s, "anchor", None) for s in ("New York", "York")}
    out = match_spans(art, entries)
    assert [s.surface for s in out.spans] == ["New York"]


def test_match_requires_word_boundaries():
    art = _article("a", "A", "Parisian cuisine in Paris")
    entries = {"Paris": LexiconEntry("Paris", "anchor", None)}
    out = match_spans(art, entries)
    assert [(s.start, s.end) for s in out.spans] == [(20, 25)]


def test_match_spans_slice_back_to_surface():
    text = "Zürich and Paris are cities; Zürich is in Switzerland"
    art = _article("a", "A", text)
    entries = {s: LexiconEntry(s, "anchor", None) for s in ("Zürich", "Paris", "Switzerland")}
    out = match_spans(art, entries)
    data = text.encode("utf-8")
    assert len(out.spans) == 4
    for sp in out.spans:
        assert data[sp.start : sp.end].decode("utf-8") == sp.surface
    starts = [sp.start for sp in out.spans]
    assert starts == sorted(starts)


def test_match_independent_of_lexicon_order():
    art = _article("a", "A", "Paris is in France")
    surfaces = ["Paris", "France", "in France"]
    e1 = {s: LexiconEntry(s, "anchor", None) for s in surfaces}
    e2 = {s: LexiconEntry(s, "anchor", None) for s in reversed(surfaces)}
    r1 = match_spans(art, e1).spans
    r2 = match_spans(art, e2).spans
    assert [(s.start, s.end) for s in r1] == [(s.start, s.end) for s in r2]


def test_anchor_preserved_when_not_longest():
    # anchor on "B C"; candidate "A B" would overlap it partially and must lose
    text = "A B C"
    art = _article("a", "A", text, [(2, 5, "BC")])
    entries = {
        "A B": LexiconEntry("A B", "2hop", None),
        "B C": LexiconEntry("B C", "anchor", None),
    }
    out = match_spans(art, entries)
    assert [(s.start, s.end, s.surface) for s in out.spans] == [(2, 5, "B C")]


def test_anchor_extended_by_containing_match():
    text = "the Eiffel Tower stands"
    art = _article("a", "A", text, [(4, 10, "Eiffel")])
    entries = {
        "Eiffel": LexiconEntry("Eiffel", "anchor", None),
        "Eiffel Tower": LexiconEntry("Eiffel Tower", "alias", "LANDMARK"),
    }
    out = match_spans(art, entries)
    assert [(s.start, s.end, s.provenance) for s in out.spans] == [(4, 16, "alias")]


def test_anchor_emitted_even_if_absent_from_lexicon():
    art = _article("a", "A", "plain Foo here", [(6, 9, "Foo")])
    out = match_spans(art, {})
    assert [(s.start, s.end, s.provenance) for s in out.spans] == [(6, 9, "anchor")]


def test_stats_empty_stream():
    st = corpus_stats([])
    assert (st.articles, st.spans, st.mean_spans, st.max_spans) == (0, 0, 0.0, 0)


def test_stats_two_article_fixture():
    a = match_spans(_article("a", "A", "x y z"), {s: LexiconEntry(s, "anchor", None) for s in ("x", "y", "z")})
    b = match_spans(
        _article("b", "B", "p q r s t"),
        {s: LexiconEntry(s, "anchor", None) for s in ("p", "q", "r", "s", "t")},
    )
    assert len(a.spans) == 3 and len(b.spans) == 5
    st = corpus_stats([a, b])
    assert st.mean_spans == 4.0
    assert st.max_spans == 5


def test_annotated_roundtrip(tmp_path):
    art = _article("a", "A", "Paris is in France", [(0, 5, "Paris")])
    aa = match_spans(art, {"France": LexiconEntry("France", "2hop", "COUNTRY")})
    p = tmp_path / "annotated.jsonl"
    write_annotated(p, [aa])
    back = list(read_annotated(p))
    assert len(back) == 1
    assert [(s.start, s.end, s.surface, s.provenance, s.type_tag) for s in back[0].spans] == [
        (s.start, s.end, s.surface, s.provenance, s.type_tag) for s in aa.spans
    ]


def test_alias_table_loader(tmp_path):
    p = tmp_path / "aliases.jsonl"
    _write_jsonl(
        p,
        [
            {"surface": "Paris", "aliases": ["City of Light"], "type": "CITY"},
            {"surface": "France", "aliases": [], "type": None},
        ],
    )
    table = load_alias_table(p)
    assert table["Paris"] == (["City of Light"], "CITY")
    assert table["France"] == ([], None)


def test_extract_spans_threads_match_sequential(tmp_path):
    records = []
    for i in range(6):
        text = f"Entity{i} links to Paris and more text about Entity{(i + 1) % 6}"
        records.append(
            {
                "id": f"a{i}",
                "title": f"Entity{i}",
                "text": text,
                "links": [{"start": text.index("Paris"), "end": text.index("Paris") + 5, "target": "Paris"}],
            }
        )
    records.append({"id": "p", "title": "Paris", "text": "France anchors here",
                    "links": [{"start": 0, "end": 6, "target": "France"}]})
    p = tmp_path / "dump.jsonl"
    _write_jsonl(p, records)
    seq = extract_spans(p)
    par = extract_spans(p, threads=2)
    assert [[(s.start, s.end, s.provenance) for s in aa.spans] for aa in seq] == [
        [(s.start, s.end, s.provenance) for s in aa.spans] for aa in par
    ]
