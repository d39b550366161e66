import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from conftest import GATT_ANNOTATED, GATT_REFERENCE, GATT_SOURCE
from termmt.terminology import (
    Dictionary,
    DictionaryFormatError,
    TermMapping,
    TermMappingSet,
    draw_random_terms,
    inline_annotate,
    load_dictionary,
    match_terms,
    strict_match,
    term_accuracy,
)
from termmt.text_norm import tokenize


def _dict(lines):
    return load_dictionary(lines, "en", "es")


def test_load_dictionary_gatt_entry():
    d = _dict(["clause\tcláusula"])
    assert len(d) == 1
    assert d.lookup(("clause",))[0].target == "cláusula"


def test_load_empty():
    d = _dict([])
    assert len(d) == 0 and d.skipped == 0


def test_six_token_term_skipped():
    d = _dict(["one two three four five six\tx", "a b c d e\ty"])
    assert d.skipped == 1 and len(d) == 1


def test_malformed_line_reports_line_number():
    with pytest.raises(DictionaryFormatError, match="line 2"):
        _dict(["a\tb", "only-one-field"])
    with pytest.raises(DictionaryFormatError, match="line 1"):
        _dict(["a\tb\tc"])


def test_match_gatt():
    d = _dict(["clause\tcláusula", "GATT\tAGAAC"])
    m = match_terms(GATT_SOURCE, d, reference=GATT_REFERENCE)
    # AGAAC is not in the reference, so only the clause mapping survives
    assert m.pairs() == (("clause", "cláusula"),)


def test_match_nothing():
    assert len(match_terms("nothing to see", _dict(["clause\tcláusula"]))) == 0


def test_longest_match_consumes_span():
    entries = {("a", "b"): "X", ("b",): "Y"}
    d = _dict(["a b\tX", "b\tY"])
    m = match_terms("a b c", d, reference="X Y")
    assert m.pairs() == (("a b", "X"),)
    best = oracles.best_non_overlapping(["a", "b", "c"], entries)
    assert len(best) == 1
    assert [(entries[k]) for _, _, k in best[0]] == ["X"]


def test_case_insensitive_default():
    d = _dict(["clause\tcláusula"])
    assert match_terms("Clause one", d).pairs() == (("Clause", "cláusula"),)
    assert len(match_terms("Clause one", d, case_insensitive=False)) == 0


def test_repeated_term_deduplicated():
    d = _dict(["clause\tcláusula"])
    m = match_terms("clause and clause", d)
    assert len(m) == 1 and m[0].source_span == (0, 1)


def test_inline_annotate_gatt():
    d = _dict(["clause\tcláusula"])
    m = match_terms(GATT_SOURCE, d, reference=GATT_REFERENCE)
    assert inline_annotate(GATT_SOURCE, m, "append") == GATT_ANNOTATED
    assert inline_annotate(GATT_SOURCE, TermMappingSet(), "append") == GATT_SOURCE
    assert inline_annotate(GATT_SOURCE, m, "none") == GATT_SOURCE


def test_inline_annotate_unanchored():
    with pytest.raises(ValueError, match="unanchored mapping"):
        inline_annotate("a clause", TermMappingSet.from_pairs([("clause", "x")]), "append")


def test_draw_random_terms():
    d = _dict(["contract\tcontrato", "party\tparte", "the\tel", "1990\tmil"])
    src = "The contract binds the party since 1990."
    assert len(draw_random_terms(src, d, 0, 1)) == 0
    a = draw_random_terms(src, d, 2, seed=5)
    assert a == draw_random_terms(src, d, 2, seed=5)
    assert len(a) == 2
    assert len(draw_random_terms("zzz yyy", d, 5, 1)) == 0
    # numbers carry no letter, so they are never drawn
    everything = draw_random_terms(src, d, 10, 3)
    assert "1990" not in [m.source_term for m in everything]
    src_tokens = set(tokenize(src).tokens)
    for m in everything:
        assert m.source_term in src_tokens and d.lookup((m.source_term,))


def test_strict_match():
    assert strict_match("con la cláusula de habilitación", "cláusula")
    assert strict_match("cláusula", "cláusula")
    assert not strict_match("Cláusula de", "cláusula")
    # composed vs decomposed accents still match
    assert strict_match("la cla\u0301usula", "cl\u00e1usula")


def test_term_accuracy():
    m1 = TermMappingSet.from_pairs([("a", "x")])
    m2 = TermMappingSet.from_pairs([("b", "y")])
    assert term_accuracy([("x", m1), ("y", m2)]) == 1.0
    assert term_accuracy([("x", m1), ("z", m2)]) == 0.5
    with pytest.raises(ValueError, match="no terms to score"):
        term_accuracy([("x", TermMappingSet())])


def test_term_accuracy_matches_flat_enumeration():
    rng = random.Random(3)
    vocab = ["alpha", "beta", "gamma", "delta", "eps", "zeta"]
    records = []
    for _ in range(20):
        targets = rng.sample(vocab, rng.randint(1, 4))
        hyp = " ".join(rng.sample(vocab, rng.randint(0, 6)))
        records.append((hyp, TermMappingSet.from_pairs([(f"s{t}", t) for t in targets])))
    expected = oracles.term_accuracy([(h, m.targets) for h, m in records])
    assert term_accuracy(records) == expected


def test_mapping_rejects_empty():
    with pytest.raises(ValueError):
        TermMapping("", "x")


VOCAB = ["a", "b", "c", "d", "e"]
dict_entries = st.lists(
    st.tuples(st.lists(st.sampled_from(VOCAB), min_size=1, max_size=3), st.sampled_from(["X", "Y", "Z W"])),
    max_size=8,
)


@settings(max_examples=300, deadline=None)
@given(dict_entries, st.lists(st.sampled_from(VOCAB), min_size=1, max_size=10), st.sampled_from(["X", "Y Z", "W X Y"]))
def test_match_properties(entries, src_tokens, ref):
    d = Dictionary("en", "xx")
    for src, tgt in entries:
        d.add(" ".join(src), tgt)
    source = " ".join(src_tokens)
    free = match_terms(source, d)
    filtered = match_terms(source, d, reference=ref)
    spans = sorted(m.source_span for m in free)
    for (a, b), (c, _) in zip(spans, spans[1:]):
        assert b <= c
    for m in free:
        s, e = m.source_span
        assert tuple(t.casefold() for t in src_tokens[s:e]) in d.entries
    assert set(filtered.pairs()) <= set(free.pairs())
    for m in filtered:
        assert strict_match(ref, m.target_term)
    annotated = inline_annotate(source, free, "append")
    assert all(strict_match(annotated, t) for t in free.targets)
