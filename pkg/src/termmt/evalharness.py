"""Three-setting terminology evaluation (proper / random / noterm) and reporting."""
from __future__ import annotations

import enum
import json
import logging
import os
from collections.abc import Iterable, Sequence
from dataclasses import asdict, dataclass, field
from typing import Protocol

import httpx

from .instruction_gen import PLAIN_TEMPLATE, TEMPLATES, InstructionTemplate, parse_mapping_list, render_instruction
from .terminology import Dictionary, TermMappingSet, draw_random_terms, matched_flags
from .util import derive_seed

log = logging.getLogger(__name__)

QUALITY_URL_ENV = "TERMMT_QUALITY_URL"


class EvalSetting(str, enum.Enum):
    PROPER = "proper"
    RANDOM = "random"
    NOTERM = "noterm"


SETTING_ORDER = {s: i for i, s in enumerate(EvalSetting)}


@dataclass(frozen=True)
class EvalInput:
    source: str
    prompt: str
    mappings: TermMappingSet

    def to_record(self) -> dict:
        return {"source": self.source, "prompt": self.prompt, "mappings": self.mappings.to_records()}

    @classmethod
    def from_record(cls, rec: dict) -> EvalInput:
        return cls(rec["source"], rec["prompt"], TermMappingSet.from_records(rec["mappings"]))


def read_terms_file(lines: Iterable[str]) -> list[TermMappingSet]:
    """One mapping list per line, aligned with the source file; blank means no terms."""
    out = []
    for lineno, line in enumerate(lines, 1):
        line = line.rstrip("\r\n").strip()
        if not line:
            out.append(TermMappingSet())
            continue
        parsed = parse_mapping_list(line)
        if parsed is None:
            raise ValueError(f"line {lineno}: malformed mapping list")
        out.append(parsed)
    return out


def build_eval_inputs(
    sources: Sequence[str],
    setting: EvalSetting | str,
    *,
    terms: Sequence[TermMappingSet] | None = None,
    dictionary: Dictionary | None = None,
    k_random: int = 3,
    seed: int = 0,
    source_lang: str = "en",
    target_lang: str = "de",
    template: InstructionTemplate | None = None,
) -> list[EvalInput]:
    setting = EvalSetting(setting)
    if not sources:
        raise ValueError("empty test set")
    if setting is EvalSetting.PROPER:
        if terms is None:
            raise ValueError("proper setting requires a terminology file")
        if len(terms) != len(sources):
            raise ValueError(f"{len(terms)} terminology lines for {len(sources)} sources")
    if setting is EvalSetting.RANDOM and dictionary is None:
        raise ValueError("random setting requires a dictionary")
    template = template or TEMPLATES[0]

    inputs = []
    for i, src in enumerate(sources):
        if setting is EvalSetting.PROPER:
            mappings = terms[i]
        elif setting is EvalSetting.RANDOM:
            mappings = draw_random_terms(src, dictionary, k_random, derive_seed(seed, i))
        else:
            mappings = TermMappingSet()
        tpl = template if mappings else PLAIN_TEMPLATE
        prompt = render_instruction(tpl, source_lang, target_lang, mappings, src)
        inputs.append(EvalInput(src, prompt, mappings))
    return inputs


class QualityClient(Protocol):
    def score_batch(self, items: Sequence[tuple[str, str]]) -> list[float]: ...


class HttpQualityClient:
    """Reference-free quality scorer behind HTTP.

    POST ``{"items": [{"source": ..., "hypothesis": ...}]}``, expect ``{"scores": [...]}``.
    """

    def __init__(self, url: str | None = None, batch_size: int = 32, timeout: float = 120.0, client=None):
        self.url = url or os.environ.get(QUALITY_URL_ENV)
        if not self.url:
            raise ValueError(f"no quality endpoint (pass a URL or set {QUALITY_URL_ENV})")
        self.batch_size = batch_size
        self._client = client or httpx.Client(timeout=timeout)

    def score_batch(self, items: Sequence[tuple[str, str]]) -> list[float]:
        scores: list[float] = []
        for i in range(0, len(items), self.batch_size):
            chunk = items[i : i + self.batch_size]
            body = {"items": [{"source": s, "hypothesis": h} for s, h in chunk]}
            resp = self._client.post(self.url, json=body)
            resp.raise_for_status()
            got = resp.json()["scores"]
            if len(got) != len(chunk):
                raise ValueError(f"quality client returned {len(got)} scores for {len(chunk)} items")
            scores.extend(float(s) for s in got)
        return scores


@dataclass
class SentenceDetail:
    index: int
    matched: list[str]
    unmatched: list[str]
    quality: float | None = None


@dataclass
class Segment:
    model: str
    lang_pair: str
    setting: EvalSetting
    sentence_count: int
    quality_score: float | None = None
    term_pct: float | None = None
    details: list[SentenceDetail] = field(default_factory=list)

    def sort_key(self):
        return (self.model, self.lang_pair, SETTING_ORDER[self.setting])

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["setting"] = self.setting.value
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> Segment:
        return cls(
            model=rec["model"],
            lang_pair=rec["lang_pair"],
            setting=EvalSetting(rec["setting"]),
            sentence_count=rec["sentence_count"],
            quality_score=rec.get("quality_score"),
            term_pct=rec.get("term_pct"),
            details=[SentenceDetail(**d) for d in rec.get("details", [])],
        )


@dataclass
class EvalReport:
    segments: list[Segment] = field(default_factory=list)

    def canonical(self) -> EvalReport:
        return EvalReport(sorted(self.segments, key=Segment.sort_key))

    def merge(self, other: EvalReport) -> EvalReport:
        return EvalReport(self.segments + other.segments).canonical()


def evaluate(
    hypotheses: Sequence[str],
    inputs: Sequence[EvalInput],
    *,
    setting: EvalSetting | str,
    lang_pair: str = "en-de",
    model: str = "system",
    quality_client: QualityClient | None = None,
) -> EvalReport:
    setting = EvalSetting(setting)
    if len(hypotheses) != len(inputs):
        raise ValueError(f"length mismatch: {len(hypotheses)} hypotheses for {len(inputs)} inputs")

    details = []
    matched = total = 0
    for i, (hyp, inp) in enumerate(zip(hypotheses, inputs)):
        flags = matched_flags(hyp, inp.mappings)
        details.append(
            SentenceDetail(
                index=i,
                matched=[m.target_term for m, ok in zip(inp.mappings, flags) if ok],
                unmatched=[m.target_term for m, ok in zip(inp.mappings, flags) if not ok],
            )
        )
        matched += sum(flags)
        total += len(flags)

    term_pct = None
    if setting is not EvalSetting.NOTERM:
        if total:
            term_pct = matched / total
        else:
            log.warning("%s/%s: no terms to score", lang_pair, setting.value)

    quality = None
    if quality_client is not None:
        try:
            scores = quality_client.score_batch([(inp.source, h) for inp, h in zip(inputs, hypotheses)])
            if len(scores) != len(hypotheses):
                raise ValueError("score count mismatch")
            for d, s in zip(details, scores):
                d.quality = s
            quality = sum(scores) / len(scores)
        except Exception as e:  # noqa: BLE001 - report is still useful without quality
            log.warning("quality client failed, reporting term%% only: %s", e)
            for d in details:
                d.quality = None

    seg = Segment(model, lang_pair, setting, len(inputs), quality, term_pct, details)
    return EvalReport([seg])


def _fmt(x: float | None) -> str:
    return "-" if x is None else f"{x:.4f}"


def render_report(report: EvalReport, fmt: str = "plain") -> str:
    report = report.canonical()
    if fmt == "json":
        return json.dumps({"segments": [s.to_record() for s in report.segments]}, ensure_ascii=False, indent=1) + "\n"
    if fmt != "plain":
        raise ValueError(f"unknown report format {fmt!r}")

    segments = [s for s in report.segments if s.sentence_count > 0]
    pairs = sorted({s.lang_pair for s in segments})
    rows = sorted({(s.model, s.setting) for s in segments}, key=lambda r: (r[0], SETTING_ORDER[r[1]]))
    by_key = {(s.model, s.setting, s.lang_pair): s for s in segments}

    header = ["model", "setting"]
    for lp in pairs:
        header += [f"{lp} quality", f"{lp} term%"]
    table = [header]
    for model, setting in rows:
        row = [model, setting.value]
        for lp in pairs:
            seg = by_key.get((model, setting, lp))
            row += [_fmt(seg.quality_score), _fmt(seg.term_pct)] if seg else ["-", "-"]
        table.append(row)
    widths = [max(len(r[c]) for r in table) for c in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() for r in table]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def parse_report(text: str) -> EvalReport:
    data = json.loads(text)
    if not isinstance(data, dict) or not isinstance(data.get("segments"), list):
        raise ValueError("not a report: expected an object with a 'segments' list")
    try:
        return EvalReport([Segment.from_record(r) for r in data["segments"]]).canonical()
    except (KeyError, TypeError) as e:
        raise ValueError(f"malformed report segment: {e!r}") from None
