import random

import httpx
import pytest

import oracles
from termmt.evalharness import (
    EvalInput,
    EvalReport,
    EvalSetting,
    HttpQualityClient,
    build_eval_inputs,
    evaluate,
    parse_report,
    read_terms_file,
    render_report,
)
from termmt.reward import parse_mappings, r_term
from termmt.terminology import TermMappingSet, load_dictionary

SOURCES = [
    "To this end, it must comply with the GATT enabling clause of 1979.",
    "The contract binds each party.",
    "No terms here.",
]
TERMS_FILE = ["clause → cláusula", "contract → contrato, party -> parte", ""]
DICT = load_dictionary(["contract\tcontrato", "party\tparte", "clause\tcláusula", "binds\tvincula"], "en", "es")


class FixedQuality:
    def __init__(self, fail=False):
        self.fail = fail

    def score_batch(self, items):
        if self.fail:
            raise ConnectionError("down")
        return [0.5 + 0.1 * (i % 2) for i in range(len(items))]


def test_read_terms_file():
    terms = read_terms_file(TERMS_FILE)
    assert terms[0].pairs() == (("clause", "cláusula"),)
    assert terms[1].pairs() == (("contract", "contrato"), ("party", "parte"))
    assert len(terms[2]) == 0
    with pytest.raises(ValueError, match="line 1"):
        read_terms_file(["no arrow"])


def test_build_noterm():
    inputs = build_eval_inputs(SOURCES, "noterm", target_lang="es")
    assert all(len(i.mappings) == 0 for i in inputs)
    assert all("→" not in i.prompt for i in inputs)


def test_build_proper_prompts_roundtrip():
    terms = read_terms_file(TERMS_FILE)
    inputs = build_eval_inputs(SOURCES, EvalSetting.PROPER, terms=terms, target_lang="es")
    assert "clause → cláusula" in inputs[0].prompt
    for inp, m in zip(inputs, terms):
        assert parse_mappings(inp.prompt) == m


def test_build_proper_requires_terms():
    with pytest.raises(ValueError, match="terminology"):
        build_eval_inputs(SOURCES, "proper")
    with pytest.raises(ValueError):
        build_eval_inputs(SOURCES, "proper", terms=read_terms_file(TERMS_FILE[:2]))


def test_build_random_reproducible():
    a = build_eval_inputs(SOURCES, "random", dictionary=DICT, k_random=2, seed=11)
    b = build_eval_inputs(SOURCES, "random", dictionary=DICT, k_random=2, seed=11)
    assert a == b
    assert len(a[1].mappings) == 2


def test_evaluate_all_terms_present():
    inputs = build_eval_inputs(SOURCES, "proper", terms=read_terms_file(TERMS_FILE))
    hyps = ["con la cláusula", "el contrato vincula a cada parte", "nada"]
    seg = evaluate(hyps, inputs, setting="proper", lang_pair="en-es").segments[0]
    assert seg.term_pct == 1.0 and seg.sentence_count == 3 and seg.quality_score is None


def test_evaluate_noterm_has_no_term_pct():
    inputs = build_eval_inputs(SOURCES, "noterm")
    seg = evaluate(["a", "b", "c"], inputs, setting="noterm").segments[0]
    assert seg.term_pct is None and seg.sentence_count == 3


def test_evaluate_length_mismatch():
    inputs = build_eval_inputs(SOURCES, "noterm")
    with pytest.raises(ValueError, match="length mismatch"):
        evaluate(["a"], inputs, setting="noterm")


def _synthetic(n, seed):
    rng = random.Random(seed)
    vocab = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta"]
    inputs, hyps = [], []
    for i in range(n):
        targets = rng.sample(vocab, rng.randint(0, 3))
        m = TermMappingSet.from_pairs([(f"src{t}", t) for t in targets])
        inputs.append(EvalInput(f"sentence {i}", f"prompt {i}", m))
        hyps.append(" ".join(rng.sample(vocab, rng.randint(0, 5))))
    return hyps, inputs


def test_term_pct_matches_enumeration_and_reward():
    hyps, inputs = _synthetic(10, 8)
    seg = evaluate(hyps, inputs, setting="proper").segments[0]
    assert seg.term_pct == oracles.term_accuracy([(h, i.mappings.targets) for h, i in zip(hyps, inputs)])
    # same predicate as the reward: micro-aggregate of r_term * |M|
    num = sum(r_term(h, i.mappings) * len(i.mappings) for h, i in zip(hyps, inputs))
    den = sum(len(i.mappings) for i in inputs)
    assert seg.term_pct == pytest.approx(num / den, abs=1e-12)
    for d, h, i in zip(seg.details, hyps, inputs):
        assert set(d.matched) | set(d.unmatched) == set(i.mappings.targets)


def test_quality_client_and_failure():
    hyps, inputs = _synthetic(4, 1)
    seg = evaluate(hyps, inputs, setting="random", quality_client=FixedQuality()).segments[0]
    assert seg.quality_score == pytest.approx(0.55)
    seg = evaluate(hyps, inputs, setting="random", quality_client=FixedQuality(fail=True)).segments[0]
    assert seg.quality_score is None and seg.term_pct is not None


def test_http_quality_client():
    def handler(request):
        import json

        n = len(json.loads(request.content)["items"])
        return httpx.Response(200, json={"scores": [0.8] * n})

    client = HttpQualityClient("http://q", batch_size=3, client=httpx.Client(transport=httpx.MockTransport(handler)))
    assert client.score_batch([("s", "h")] * 7) == [0.8] * 7


def _full_report():
    report = EvalReport()
    terms = read_terms_file(TERMS_FILE)
    for lp in ("en-de", "en-es"):
        for setting in ("proper", "random", "noterm"):
            inputs = build_eval_inputs(SOURCES, setting, terms=terms, dictionary=DICT, seed=1)
            hyps = ["la cláusula", "contrato", "x"]
            report = report.merge(
                evaluate(hyps, inputs, setting=setting, lang_pair=lp, model="Qwen3", quality_client=FixedQuality())
            )
    return report


def test_render_plain_table():
    text = render_report(_full_report(), "plain")
    lines = text.splitlines()
    assert lines[0].split() == ["model", "setting", "en-de", "quality", "en-de", "term%", "en-es", "quality", "en-es", "term%"]
    rows = [l.split() for l in lines[2:]]
    assert [r[1] for r in rows] == ["proper", "random", "noterm"]
    noterm = rows[2]
    assert noterm[3] == "-" and noterm[5] == "-"
    assert noterm[2] != "-"


def test_render_omits_empty_pairs():
    report = _full_report()
    report.segments[0].sentence_count = 0
    report.segments = [s for s in report.segments if s.lang_pair == "en-de"] + [
        type(report.segments[0])("Qwen3", "en-ru", EvalSetting.NOTERM, 0)
    ]
    assert "en-ru" not in render_report(report)


def test_machine_readable_roundtrip_and_stability():
    report = _full_report()
    assert parse_report(render_report(report, "json")) == report.canonical()
    shuffled = EvalReport(list(reversed(report.segments)))
    assert render_report(shuffled, "plain") == render_report(report, "plain")
    assert render_report(shuffled, "json") == render_report(report, "json")
