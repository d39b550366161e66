"""Stateless batch reward scoring over HTTP.

Wire format (UTF-8 JSON; responses are serialized with sorted keys and no
insignificant whitespace)::

    POST /v1/reward
    {"items": [{"hypothesis": str, "reference": str?, "prompt": str?,
                "mappings": [{"source": str, "target": str}, ...]?}, ...],
     "weights": {"w_bleu": float, "w_term": float}?,
     "group_size": int?}

    200 {"results": [{"r_bleu", "r_term", "combined", "matched_terms"}, ...],
         "groups": [{"mean", "std", "advantages": [...]}, ...] | null}
    4xx/5xx {"error": {"code", "message", "item_index", "position"}}

    GET /v1/health -> {"status": "ok", "version": str}
"""
from __future__ import annotations

import json
import logging
import math
import os
import socket
from dataclasses import dataclass, field

from fastapi import FastAPI, Request
from fastapi.responses import Response
from starlette.concurrency import run_in_threadpool

from . import __version__
from .reward import RewardWeights, combined_reward, group_advantages, parse_mappings
from .terminology import TermMappingSet
from .util import canonical_json

log = logging.getLogger(__name__)


class RequestError(Exception):
    def __init__(self, status: int, code: str, message: str, item_index: int | None = None, position: int | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.item_index = item_index
        self.position = position

    def body(self) -> dict:
        return {
            "error": {
                "code": self.code,
                "message": self.message,
                "item_index": self.item_index,
                "position": self.position,
            }
        }


@dataclass
class ServiceConfig:
    weights: RewardWeights = field(default_factory=RewardWeights)
    max_batch_size: int = 4096

    @classmethod
    def from_env(cls) -> ServiceConfig:
        w = RewardWeights(
            float(os.environ.get("TERMMT_W_BLEU", 0.5)), float(os.environ.get("TERMMT_W_TERM", 0.5))
        )
        return cls(w, int(os.environ.get("TERMMT_MAX_BATCH", 4096)))


@dataclass(frozen=True)
class RewardItem:
    hypothesis: str
    reference: str | None
    prompt: str | None
    mappings: TermMappingSet | None

    def constraint_set(self) -> TermMappingSet:
        # explicit mappings win over prompt parsing
        return self.mappings if self.mappings is not None else parse_mappings(self.prompt)


@dataclass(frozen=True)
class RewardRequest:
    items: tuple[RewardItem, ...]
    weights: RewardWeights
    group_size: int | None = None


def _bad(msg: str, idx: int | None = None) -> RequestError:
    return RequestError(422, "invalid_request", msg, idx)


def _number(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x)


def _parse_mappings(raw, idx: int) -> TermMappingSet:
    if not isinstance(raw, list):
        raise _bad("mappings must be a list", idx)
    pairs = []
    for m in raw:
        if isinstance(m, dict):
            src, tgt = m.get("source"), m.get("target")
        elif isinstance(m, list) and len(m) == 2:
            src, tgt = m
        else:
            raise _bad("each mapping must be {source, target} or [source, target]", idx)
        if not (isinstance(src, str) and isinstance(tgt, str) and src and tgt):
            raise _bad("mapping terms must be non-empty strings", idx)
        pairs.append((src, tgt))
    return TermMappingSet.from_pairs(pairs)


def parse_request(data, config: ServiceConfig) -> RewardRequest:
    if not isinstance(data, dict):
        raise _bad("body must be a JSON object")
    items = data.get("items")
    if not isinstance(items, list) or not items:
        raise _bad("items must be a non-empty list")
    if len(items) > config.max_batch_size:
        raise RequestError(413, "batch_too_large", f"batch of {len(items)} exceeds {config.max_batch_size}")

    weights = config.weights
    if data.get("weights") is not None:
        w = data["weights"]
        if not isinstance(w, dict) or not all(_number(w.get(k)) for k in ("w_bleu", "w_term")):
            raise _bad("weights must be {w_bleu: number, w_term: number}")
        try:
            weights = RewardWeights(float(w["w_bleu"]), float(w["w_term"]))
        except ValueError as e:
            raise _bad(str(e)) from None

    group_size = data.get("group_size")
    if group_size is not None:
        if not isinstance(group_size, int) or isinstance(group_size, bool) or group_size < 2:
            raise _bad("group_size must be an integer >= 2")
        if len(items) % group_size:
            raise _bad(f"batch size {len(items)} is not a multiple of group_size {group_size}")

    parsed = []
    for i, it in enumerate(items):
        if not isinstance(it, dict):
            raise _bad("item must be an object", i)
        hyp, ref, prompt = it.get("hypothesis"), it.get("reference"), it.get("prompt")
        if not isinstance(hyp, str):
            raise _bad("hypothesis must be a string", i)
        if prompt is not None and not isinstance(prompt, str):
            raise _bad("prompt must be a string", i)
        if ref is not None and not isinstance(ref, str):
            raise _bad("reference must be a string", i)
        if weights.w_bleu > 0 and not (ref and ref.strip()):
            raise _bad("reference required when w_bleu > 0", i)
        mappings = _parse_mappings(it["mappings"], i) if it.get("mappings") is not None else None
        if mappings is None and prompt is None:
            raise _bad("item needs mappings or a prompt", i)
        parsed.append(RewardItem(hyp, ref, prompt, mappings))
    return RewardRequest(tuple(parsed), weights, group_size)


def score_batch(request: RewardRequest) -> dict:
    results = []
    for i, item in enumerate(request.items):
        try:
            b = combined_reward(item.hypothesis, item.reference, item.constraint_set(), request.weights)
        except Exception as e:  # noqa: BLE001
            log.exception("scoring failed on item %d", i)
            raise RequestError(500, "scoring_failed", str(e), i) from None
        results.append(b.to_record())

    groups = None
    g = request.group_size
    if g:
        groups = []
        for start in range(0, len(results), g):
            gr = group_advantages([r["combined"] for r in results[start : start + g]])
            groups.append({"mean": gr.mean, "std": gr.std, "advantages": list(gr.advantages)})
    return {"results": results, "groups": groups}


def handle_body(body: bytes, config: ServiceConfig) -> tuple[int, dict]:
    """Full request pipeline minus HTTP framing; returns (status, response object)."""
    try:
        try:
            data = json.loads(body.decode("utf-8"))
        except UnicodeDecodeError as e:
            raise RequestError(400, "malformed_body", "body is not UTF-8", position=e.start) from None
        except json.JSONDecodeError as e:
            raise RequestError(400, "malformed_body", e.msg, position=e.pos) from None
        return 200, score_batch(parse_request(data, config))
    except RequestError as e:
        return e.status, e.body()


def _json(status: int, obj) -> Response:
    return Response(canonical_json(obj).encode(), status_code=status, media_type="application/json")


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    app = FastAPI(title="termmt reward service", version=__version__)

    @app.get("/v1/health")
    def health():
        return _json(200, {"status": "ok", "version": __version__})

    @app.post("/v1/reward")
    async def reward(request: Request):
        body = await request.body()
        status, obj = await run_in_threadpool(handle_body, body, config)
        return _json(status, obj)

    return app


class ServiceStartupError(RuntimeError):
    pass


def bind_socket(host: str, port: int) -> socket.socket:
    family = socket.AF_INET6 if ":" in host else socket.AF_INET
    sock = socket.socket(family, socket.SOCK_STREAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    # accepted connections inherit this; without it small responses stall on delayed ACKs
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    try:
        sock.bind((host, port))
    except OSError as e:
        sock.close()
        raise ServiceStartupError(f"cannot bind {host}:{port}: {e.strerror}") from None
    sock.set_inheritable(True)
    return sock


def serve(host: str = "127.0.0.1", port: int = 8000, config: ServiceConfig | None = None, log_level: str = "info") -> None:
    """Run until SIGINT/SIGTERM; uvicorn drains in-flight requests on shutdown."""
    import uvicorn

    sock = bind_socket(host, port)
    server = uvicorn.Server(uvicorn.Config(create_app(config), log_level=log_level))
    server.run(sockets=[sock])
