"""``termmt`` command line: filter → sample → annotate → gen-instructions →
(external trainer) → eval-build → eval-score → report, plus reward/grpo-sim/serve.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
import time
from pathlib import Path

from . import __version__

log = logging.getLogger("termmt")


class CliError(Exception):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError("usage", message)


def _read_lines(path) -> list[str]:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read().splitlines()
    except FileNotFoundError:
        raise CliError("missing_input", f"no such file: {path}") from None


def _write(path, text: str) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def _jsonl(records) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def _seed(args) -> int:
    if getattr(args, "seed", None) is None:
        args.seed = secrets.randbits(31)
        log.info("no --seed given, using %d", args.seed)
    return args.seed


def write_manifest(args, argv: list[str], inputs: list[str], outputs: list[str]) -> None:
    """Record enough to replay the run: argv (with the effective seed), input digests, version."""
    from .util import file_digest

    if getattr(args, "no_manifest", False):
        return
    argv = list(argv)
    if getattr(args, "seed", None) is not None and "--seed" not in argv:
        argv += ["--seed", str(args.seed)]
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "no_manifest", "_started")}
    manifest = {
        "command": args.command,
        "argv": argv,
        "flags": flags,
        "seed": getattr(args, "seed", None),
        "inputs": {p: file_digest(p) for p in inputs if p and os.path.exists(p)},
        "outputs": {p: file_digest(p) for p in outputs if p and os.path.exists(p)},
        "version": __version__,
        "cwd": os.getcwd(),
        "started": args._started,
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _write(f"{outputs[0]}.manifest.json", json.dumps(manifest, indent=1, ensure_ascii=False, default=str) + "\n")


def cmd_filter(args):
    from .pipeline import HttpScorer, LexicalScorer, filter_pairs, read_pairs

    pairs = read_pairs(_read_lines(args.input))
    scorer = HttpScorer(args.endpoint) if args.scorer == "http" else LexicalScorer()
    res = filter_pairs(pairs, scorer, args.threshold, args.workers)
    _write(args.out, _jsonl(p.to_record() for p in res.kept))
    log.info("kept %d, discarded %d, scorer errors %d", len(res.kept), res.discarded, res.errors)
    return [args.input], [args.out]


def cmd_sample(args):
    from .pipeline import read_pairs, sample_split

    pairs = read_pairs(_read_lines(args.input))
    sft, grpo = sample_split(pairs, args.n_sft, args.n_grpo, _seed(args))
    _write(args.sft_out, _jsonl(p.to_record() for p in sft))
    _write(args.grpo_out, _jsonl(p.to_record() for p in grpo))
    return [args.input], [args.sft_out, args.grpo_out]


def cmd_annotate(args):
    from .pipeline import read_pairs
    from .terminology import load_dictionary, match_terms

    d = load_dictionary(_read_lines(args.dict), args.src_lang, args.tgt_lang)
    out = []
    for p in read_pairs(_read_lines(args.input)):
        m = match_terms(p.source, d, reference=p.target, case_insensitive=not args.case_sensitive)
        out.append({**p.to_record(), "mappings": m.to_records()})
    _write(args.out, _jsonl(out))
    return [args.input, args.dict], [args.out]


def cmd_gen_instructions(args):
    from .instruction_gen import build_samples, emit_samples, load_templates
    from .terminology import TermMappingSet
    from .util import iter_jsonl

    templates, plain = load_templates(args.templates)
    records = []
    for lineno, rec in iter_jsonl(_read_lines(args.input)):
        try:
            records.append((rec["source"], rec["target"], TermMappingSet.from_records(rec.get("mappings", []))))
        except (KeyError, TypeError, ValueError) as e:
            raise CliError("bad_input", f"{args.input} line {lineno}: {e}") from None
    samples = build_samples(
        records,
        _seed(args),
        source_lang=args.src_lang,
        target_lang=args.tgt_lang,
        chat_format=args.chat_format,
        inline_mode=args.inline,
        system_prompt=args.system_prompt,
        templates=templates,
        plain_template=plain,
    )
    _write(args.out, emit_samples(samples))
    return [args.input] + ([args.templates] if args.templates else []), [args.out]


def cmd_reward(args):
    from .reward import RewardWeights
    from .service import ServiceConfig, handle_body
    from .util import canonical_json

    body = Path(args.input).read_bytes() if args.input != "-" else sys.stdin.buffer.read()
    cfg = ServiceConfig(RewardWeights(args.w_bleu, args.w_term), max_batch_size=sys.maxsize)
    status, resp = handle_body(body, cfg)
    if status == 200 and args.group_size is not None:
        req = json.loads(body)
        req["group_size"] = args.group_size
        status, resp = handle_body(json.dumps(req).encode(), cfg)
    if status != 200:
        e = resp["error"]
        where = f" (item {e['item_index']})" if e["item_index"] is not None else ""
        where += f" (position {e['position']})" if e.get("position") is not None else ""
        raise CliError(e["code"], e["message"] + where)
    _write(args.out, canonical_json(resp) + "\n")
    return [args.input], [args.out]


def cmd_grpo_sim(args):
    from .grpo_sim import init_policy, read_pools, train, write_policy
    from .reward import RewardWeights

    pools = read_pools(_read_lines(args.pools))
    policy, trace = train(
        init_policy(pools),
        pools,
        args.steps,
        args.group_size,
        RewardWeights(args.w_bleu, args.w_term),
        args.lr,
        _seed(args),
        args.l2,
    )
    _write(args.trace_out, trace.to_tsv())
    outputs = [args.trace_out]
    if args.policy_out:
        _write(args.policy_out, write_policy(policy))
        outputs.append(args.policy_out)
    log.info("final mean reward %.4f", trace.steps[-1].mean_reward)
    return [args.pools], outputs


def cmd_eval_build(args):
    from .evalharness import EvalSetting, build_eval_inputs, read_terms_file
    from .terminology import load_dictionary

    sources = _read_lines(args.src)
    terms = read_terms_file(_read_lines(args.terms)) if args.terms else None
    d = load_dictionary(_read_lines(args.dict), args.src_lang, args.tgt_lang) if args.dict else None
    setting = EvalSetting(args.setting)
    seed = _seed(args) if setting is EvalSetting.RANDOM else args.seed
    inputs = build_eval_inputs(
        sources,
        setting,
        terms=terms,
        dictionary=d,
        k_random=args.k_random,
        seed=seed or 0,
        source_lang=args.src_lang,
        target_lang=args.tgt_lang,
    )
    _write(args.out, _jsonl(i.to_record() for i in inputs))
    return [args.src, args.terms, args.dict], [args.out]


def cmd_eval_score(args):
    from .evalharness import EvalInput, HttpQualityClient, evaluate, render_report
    from .util import iter_jsonl

    inputs = [EvalInput.from_record(r) for _, r in iter_jsonl(_read_lines(args.inputs))]
    hyps = _read_lines(args.hyp)
    client = HttpQualityClient(args.quality_endpoint) if args.quality_endpoint else None
    report = evaluate(
        hyps, inputs, setting=args.setting, lang_pair=args.lang_pair, model=args.model, quality_client=client
    )
    _write(args.out, render_report(report, "json"))
    return [args.inputs, args.hyp], [args.out]


def cmd_report(args):
    from .evalharness import EvalReport, parse_report, render_report

    report = EvalReport()
    for path in args.reports:
        try:
            report = report.merge(parse_report("\n".join(_read_lines(path))))
        except ValueError as e:
            raise CliError("bad_input", f"{path}: {e}") from None
    text = render_report(report, args.format)
    if args.out:
        _write(args.out, text)
        return args.reports, [args.out]
    sys.stdout.write(text)
    return None


def cmd_serve(args):
    from .reward import RewardWeights
    from .service import ServiceConfig, ServiceStartupError, serve

    try:
        serve(args.host, args.port, ServiceConfig(RewardWeights(args.w_bleu, args.w_term), args.max_batch))
    except ServiceStartupError as e:
        raise CliError("bind_failed", str(e)) from None


def cmd_replay(args):
    from .util import file_digest

    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    if manifest.get("version") != __version__:
        log.warning("manifest written by version %s, running %s", manifest.get("version"), __version__)
    here = os.getcwd()
    os.chdir(manifest.get("cwd", here))
    try:
        for path, digest in manifest.get("inputs", {}).items():
            if not os.path.exists(path):
                raise CliError("missing_input", f"no such file: {path}")
            if file_digest(path) != digest:
                raise CliError("input_changed", f"{path} differs from the recorded digest")
        return main(manifest["argv"])
    finally:
        os.chdir(here)


def _env_float(name: str, default: float) -> float:
    raw = os.environ.get(name)
    if not raw:
        return default
    try:
        return float(raw)
    except ValueError:
        raise CliError("bad_env", f"{name}={raw!r} is not a number") from None


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="termmt", description="Terminology-constrained MT data, reward and evaluation tools.")
    p.add_argument("--version", action="version", version=f"termmt {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    def langs(sp, tgt="es"):
        sp.add_argument("--src-lang", default="en", help="source language code (default: en)")
        sp.add_argument("--tgt-lang", default=tgt, help=f"target language code (default: {tgt})")

    def seed(sp):
        sp.add_argument("--seed", type=int, help="random seed; generated and recorded when omitted")

    def manifest(sp):
        sp.add_argument("--no-manifest", action="store_true", help="do not write <out>.manifest.json")

    def weights(sp):
        sp.add_argument("--w-bleu", type=float, default=_env_float("TERMMT_W_BLEU", 0.5),
                        help="BLEU reward weight (env TERMMT_W_BLEU, default 0.5)")
        sp.add_argument("--w-term", type=float, default=_env_float("TERMMT_W_TERM", 0.5),
                        help="terminology reward weight (env TERMMT_W_TERM, default 0.5)")

    sp = add("filter", cmd_filter, "drop sentence pairs whose similarity is below a threshold")
    sp.add_argument("--in", dest="input", required=True, help="pairs as TSV or JSONL")
    sp.add_argument("--out", required=True, help="kept pairs (JSONL)")
    sp.add_argument("--threshold", type=float, default=0.9, help="minimum similarity kept (default 0.9)")
    sp.add_argument("--scorer", choices=["lexical", "http"], default="lexical",
                    help="built-in token-overlap scorer or external endpoint")
    sp.add_argument("--endpoint", default=os.environ.get("TERMMT_SCORER_URL"),
                    help="similarity endpoint URL (env TERMMT_SCORER_URL)")
    sp.add_argument("--workers", type=int, default=4, help="concurrent scorer requests")
    manifest(sp)

    sp = add("sample", cmd_sample, "draw disjoint SFT and GRPO splits")
    sp.add_argument("--in", dest="input", required=True, help="filtered pairs (JSONL or TSV)")
    sp.add_argument("--sft-out", required=True, help="SFT split (JSONL)")
    sp.add_argument("--grpo-out", required=True, help="GRPO split (JSONL)")
    sp.add_argument("--n-sft", type=int, default=10_000, help="SFT split size (default 10000)")
    sp.add_argument("--n-grpo", type=int, default=1_000, help="GRPO split size (default 1000)")
    seed(sp)
    manifest(sp)

    sp = add("annotate", cmd_annotate, "attach dictionary term mappings to sentence pairs")
    sp.add_argument("--dict", required=True, help="source<TAB>target term dictionary")
    sp.add_argument("--in", dest="input", required=True, help="pairs as TSV or JSONL")
    sp.add_argument("--out", required=True, help="annotated pairs (JSONL)")
    sp.add_argument("--case-sensitive", action="store_true", help="match source terms case-sensitively")
    langs(sp)
    manifest(sp)

    sp = add("gen-instructions", cmd_gen_instructions, "render annotated pairs as chat instruction samples")
    sp.add_argument("--in", dest="input", required=True, help="annotated pairs (JSONL)")
    sp.add_argument("--out", required=True, help="instruction samples (JSONL)")
    sp.add_argument("--chat-format", choices=["format_a", "format_b"], default="format_a",
                    help="format_a adds an empty, loss-excluded thinking block")
    sp.add_argument("--inline", choices=["append", "none"], default="append",
                    help="append target terms after source terms in the text")
    sp.add_argument("--templates", help="template config JSON (default: bundled)")
    sp.add_argument("--system-prompt", help="optional system message")
    langs(sp)
    seed(sp)
    manifest(sp)

    sp = add("reward", cmd_reward, "score a reward request file offline")
    sp.add_argument("--in", dest="input", required=True, help="request JSON (same schema as POST /v1/reward)")
    sp.add_argument("--out", required=True, help="response JSON")
    sp.add_argument("--group-size", type=int, help="override group_size")
    weights(sp)
    manifest(sp)

    sp = add("grpo-sim", cmd_grpo_sim, "run desk-scale GRPO over candidate pools")
    sp.add_argument("--pools", required=True, help="pool records (JSONL)")
    sp.add_argument("--trace-out", required=True, help="per-step trace (TSV)")
    sp.add_argument("--policy-out", help="final logits (JSON)")
    sp.add_argument("--steps", type=int, default=500, help="update steps (default 500)")
    sp.add_argument("--group-size", type=int, default=16, help="samples per pool per step (default 16)")
    sp.add_argument("--lr", type=float, default=0.5, help="learning rate (default 0.5)")
    sp.add_argument("--l2", type=float, default=0.0, help="L2 pull of logits toward init")
    weights(sp)
    seed(sp)
    manifest(sp)

    sp = add("eval-build", cmd_eval_build, "build evaluation prompts for one setting")
    sp.add_argument("--src", required=True, help="source sentences, one per line")
    sp.add_argument("--setting", choices=["proper", "random", "noterm"], required=True,
                    help="terminology setting")
    sp.add_argument("--terms", help="per-line mapping lists (proper setting)")
    sp.add_argument("--dict", help="term dictionary (random setting)")
    sp.add_argument("--k-random", type=int, default=3, help="terms drawn per sentence (random setting)")
    sp.add_argument("--out", required=True, help="eval inputs (JSONL)")
    langs(sp, tgt="de")
    seed(sp)
    manifest(sp)

    sp = add("eval-score", cmd_eval_score, "score hypotheses against eval inputs")
    sp.add_argument("--inputs", required=True, help="eval inputs from eval-build")
    sp.add_argument("--hyp", required=True, help="hypotheses, one per line, aligned with inputs")
    sp.add_argument("--setting", choices=["proper", "random", "noterm"], required=True,
                    help="terminology setting")
    sp.add_argument("--lang-pair", default="en-de", help="report column, e.g. en-de (default en-de)")
    sp.add_argument("--model", default="system", help="row label in the report")
    sp.add_argument("--quality-endpoint", default=os.environ.get("TERMMT_QUALITY_URL"),
                    help="quality scorer URL (env TERMMT_QUALITY_URL)")
    sp.add_argument("--out", required=True, help="report JSON")
    manifest(sp)

    sp = add("report", cmd_report, "merge report JSON files and render a table")
    sp.add_argument("reports", nargs="+", help="report JSON files from eval-score")
    sp.add_argument("--format", choices=["plain", "json"], default="plain", help="table or JSON (default plain)")
    sp.add_argument("--out", help="write here instead of stdout")
    manifest(sp)

    sp = add("serve", cmd_serve, "run the HTTP reward service")
    sp.add_argument("--host", default=os.environ.get("TERMMT_HOST", "127.0.0.1"),
                    help="bind address (env TERMMT_HOST, default 127.0.0.1)")
    sp.add_argument("--port", type=int, default=int(os.environ.get("TERMMT_PORT", 8000)),
                    help="bind port (env TERMMT_PORT, default 8000)")
    sp.add_argument("--max-batch", type=int, default=int(os.environ.get("TERMMT_MAX_BATCH", 4096)),
                    help="largest accepted batch (env TERMMT_MAX_BATCH, default 4096)")
    weights(sp)

    sp = add("replay", cmd_replay, "re-run the command recorded in a manifest")
    sp.add_argument("manifest", help="a <out>.manifest.json file")
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        args._started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
        produced = args.func(args)
        if isinstance(produced, int):
            return produced
        if produced:
            write_manifest(args, argv, *produced)
        return 0
    except CliError as e:
        print(f"termmt: error: {e.code}: {e}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError) as e:
        msg = str(e).replace("\n", " ")
        print(f"termmt: error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
