"""Chat-format instruction samples with terminology constraints and loss masks."""
from __future__ import annotations

import json
import random
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from importlib import resources

from .terminology import ARROW, ASCII_ARROW, ITEM_SEPARATOR, TermMapping, TermMappingSet, inline_annotate
from .util import derive_seed, iter_jsonl, language_name

PLACEHOLDERS = ("[src_lang]", "[tgt_lang]", "[mapping_list]", "[text]")
REQUIRED = ("[tgt_lang]", "[text]")
CHAT_FORMATS = ("format_a", "format_b")
# empty thinking block prepended to format_a assistant turns; never loss-bearing
THINK_PREFIX = "<think>\n\n</think>\n\n"
ROLES = ("system", "user", "assistant")


class SampleFormatError(ValueError):
    pass


@dataclass(frozen=True)
class InstructionTemplate:
    id: int
    pattern: str

    def __post_init__(self):
        for ph in REQUIRED:
            if ph not in self.pattern:
                raise ValueError(f"template {self.id} is missing placeholder {ph}")
        for ph in PLACEHOLDERS:
            if self.pattern.count(ph) > 1:
                raise ValueError(f"template {self.id} repeats placeholder {ph}")

    @property
    def has_terminology(self) -> bool:
        return "[mapping_list]" in self.pattern

    def regex(self) -> re.Pattern:
        parts = re.split(r"(\[src_lang\]|\[tgt_lang\]|\[mapping_list\]|\[text\])", self.pattern)
        out = []
        for part in parts:
            if part == "[text]":
                out.append(r"(?P<text>[\s\S]*?)")
            elif part == "[mapping_list]":
                out.append(r"(?P<mapping_list>[^\n]+?)")
            elif part in ("[src_lang]", "[tgt_lang]"):
                out.append(r"[^\n]*?")
            else:
                # literal whitespace is matched loosely so re-wrapped prompts still parse, but a
                # line break stays a line break: it is what ends a mapping list like "Inc. → X"
                words = re.split(r"(\s+)", part)
                out.append("".join(
                    (r"\s*\n\s*" if "\n" in w else r"\s+") if i % 2 else re.escape(w) for i, w in enumerate(words)
                ))
        return re.compile("".join(out))


def load_templates(path=None) -> tuple[list[InstructionTemplate], InstructionTemplate]:
    """Return (terminology templates, plain template) from a JSON config file."""
    if path is None:
        text = resources.files("termmt").joinpath("data/templates.json").read_text(encoding="utf-8")
    else:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    cfg = json.loads(text)
    term = [InstructionTemplate(t["id"], t["pattern"]) for t in cfg["terminology"]]
    plain = InstructionTemplate(cfg["plain"]["id"], cfg["plain"]["pattern"])
    if not all(t.has_terminology for t in term) or plain.has_terminology:
        raise ValueError("terminology templates need [mapping_list]; the plain template must not have it")
    return term, plain


TEMPLATES, PLAIN_TEMPLATE = load_templates()


def render_mapping_list(mappings: TermMappingSet, arrow: str = ARROW) -> str:
    return ITEM_SEPARATOR.join(f"{m.source_term} {arrow} {m.target_term}" for m in mappings)


def render_instruction(
    template: InstructionTemplate,
    source_lang: str,
    target_lang: str,
    mappings: TermMappingSet,
    annotated_source: str,
    arrow: str = ARROW,
) -> str:
    if template.has_terminology and not mappings:
        raise ValueError(f"template {template.id} needs at least one mapping")
    if mappings and not template.has_terminology:
        raise ValueError(f"template {template.id} is missing placeholder [mapping_list]")
    out = template.pattern
    out = out.replace("[src_lang]", language_name(source_lang))
    out = out.replace("[tgt_lang]", language_name(target_lang))
    out = out.replace("[mapping_list]", render_mapping_list(mappings, arrow))
    # [text] last: the sentence itself may contain bracketed placeholder-like strings
    return out.replace("[text]", annotated_source)


_ARROW_RE = re.compile(r"\s*(?:→|->)\s*")


def parse_mapping_list(text: str) -> TermMappingSet | None:
    """Parse ``a → x, b → y``; None if any item is not a well-formed pair."""
    pairs = []
    for item in text.strip().split(ITEM_SEPARATOR):
        m = _ARROW_RE.search(item)
        if m is None:
            return None
        src, tgt = item[: m.start()].strip(), item[m.end() :].strip()
        if not src or not tgt or ARROW in tgt or ASCII_ARROW in tgt:
            return None
        pairs.append((src, tgt))
    return TermMappingSet.from_pairs(pairs)


def parse_mappings(prompt: str, templates: Sequence[InstructionTemplate] | None = None) -> TermMappingSet:
    """Recover the constraint set from a user prompt.

    Known templates are tried first; otherwise every line holding an arrow is
    read as a mapping list, starting after its last colon.
    """
    if ARROW not in prompt and ASCII_ARROW not in prompt:
        return TermMappingSet()
    for tpl in templates if templates is not None else TEMPLATES:
        if not tpl.has_terminology:
            continue
        m = tpl.regex().fullmatch(prompt.strip())
        if m:
            parsed = parse_mapping_list(m.group("mapping_list"))
            if parsed is not None:
                return parsed
    found: list[TermMapping] = []
    for line in prompt.splitlines():
        if ARROW not in line and ASCII_ARROW not in line:
            continue
        head = line[: _ARROW_RE.search(line).start()]
        if ":" in head:
            line = line[head.rindex(":") + 1 :]
        parsed = parse_mapping_list(line.strip().rstrip("."))
        if parsed is not None:
            found.extend(parsed)
    return TermMappingSet(found)


@dataclass
class InstructionSample:
    messages: list[dict]
    mappings: TermMappingSet
    source_lang: str
    target_lang: str
    template_id: int
    chat_format: str = "format_a"
    loss_spans: list[tuple[int, int, int]] = field(default_factory=list)

    @property
    def assistant_index(self) -> int:
        idx = [i for i, m in enumerate(self.messages) if m["role"] == "assistant"]
        if len(idx) != 1:
            raise SampleFormatError("sample must have exactly one assistant message")
        return idx[0]

    @property
    def user_content(self) -> str:
        return next(m["content"] for m in self.messages if m["role"] == "user")

    def loss_text(self) -> str:
        return "".join(self.messages[i]["content"][s:e] for i, s, e in self.loss_spans)

    def to_record(self) -> dict:
        return {
            "messages": [{"role": m["role"], "content": m["content"]} for m in self.messages],
            "mappings": self.mappings.to_records(),
            "source_lang": self.source_lang,
            "target_lang": self.target_lang,
            "template_id": self.template_id,
            "chat_format": self.chat_format,
            "loss_spans": [list(s) for s in self.loss_spans],
        }

    @classmethod
    def from_record(cls, rec: dict) -> InstructionSample:
        messages = rec["messages"]
        if not isinstance(messages, list) or any(m.get("role") not in ROLES for m in messages):
            raise ValueError("messages must be a list of {role, content}")
        if rec["chat_format"] not in CHAT_FORMATS:
            raise ValueError(f"unknown chat_format {rec['chat_format']!r}")
        sample = cls(
            messages=[{"role": m["role"], "content": m["content"]} for m in messages],
            mappings=TermMappingSet.from_records(rec["mappings"]),
            source_lang=rec["source_lang"],
            target_lang=rec["target_lang"],
            template_id=int(rec["template_id"]),
            chat_format=rec["chat_format"],
            loss_spans=[tuple(s) for s in rec["loss_spans"]],
        )
        sample.assistant_index  # noqa: B018 - validates
        return sample


def choose_template(seed: int, has_terms: bool, templates=None, plain=None) -> InstructionTemplate:
    if not has_terms:
        return plain or PLAIN_TEMPLATE
    return random.Random(seed).choice(templates or TEMPLATES)


def build_sample(
    source: str,
    reference: str,
    mappings: TermMappingSet,
    *,
    seed: int,
    source_lang: str = "en",
    target_lang: str = "es",
    chat_format: str = "format_a",
    inline_mode: str = "append",
    system_prompt: str | None = None,
    arrow: str = ARROW,
    templates: Sequence[InstructionTemplate] | None = None,
    plain_template: InstructionTemplate | None = None,
) -> InstructionSample:
    if not source.strip() or not reference.strip():
        raise ValueError("source and reference must be non-empty")
    if chat_format not in CHAT_FORMATS:
        raise ValueError(f"unknown chat format {chat_format!r}")
    template = choose_template(seed, bool(mappings), templates, plain_template)
    text = inline_annotate(source, mappings, inline_mode) if mappings else source
    user = render_instruction(template, source_lang, target_lang, mappings, text, arrow)

    messages = []
    if system_prompt:
        messages.append({"role": "system", "content": system_prompt})
    messages.append({"role": "user", "content": user})
    prefix = THINK_PREFIX if chat_format == "format_a" else ""
    messages.append({"role": "assistant", "content": prefix + reference})
    span = (len(messages) - 1, len(prefix), len(prefix) + len(reference))
    return InstructionSample(
        messages=messages,
        mappings=mappings,
        source_lang=source_lang,
        target_lang=target_lang,
        template_id=template.id,
        chat_format=chat_format,
        loss_spans=[span],
    )


def build_samples(records: Iterable[tuple[str, str, TermMappingSet]], seed: int, **kwargs) -> list[InstructionSample]:
    """Per-record seeds are derived from (seed, index) so any partition of the work agrees."""
    return [
        build_sample(src, ref, m, seed=derive_seed(seed, i), **kwargs)
        for i, (src, ref, m) in enumerate(records)
    ]


def emit_samples(samples: Iterable[InstructionSample]) -> str:
    return "".join(json.dumps(s.to_record(), ensure_ascii=False) + "\n" for s in samples)


def read_samples(lines: Iterable[str] | str) -> list[InstructionSample]:
    if isinstance(lines, str):
        lines = lines.splitlines()
    out = []
    for lineno, rec in iter_jsonl(lines):
        try:
            out.append(InstructionSample.from_record(rec))
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise SampleFormatError(f"line {lineno}: {e!r}") from None
    return out
