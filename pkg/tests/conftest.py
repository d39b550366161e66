import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

GATT_SOURCE = (
    "To this end, it must comply with the WTO requirements and, in particular, "
    "with the GATT enabling clause of 1979."
)
GATT_ANNOTATED = (
    "To this end, it must comply with the WTO requirements and, in particular, "
    "with the GATT enabling clause cláusula of 1979."
)
GATT_REFERENCE = (
    "A tal fin, debe cumplir con los requisitos de la OMC y, en especial, "
    "con la cláusula de habilitación del GATT de 1979."
)
GATT_PROMPT = (
    "Generate a Spanish translation that accurately reflects the terminology specified in "
    "clause → cláusula.\n\nText to translate: " + GATT_ANNOTATED
)

_WORDS = {
    "en": "the contract clause must comply with all requirements of this agreement and each party".split(),
    "de": "der Vertrag muss alle Anforderungen dieser Vereinbarung erfüllen und jede Partei Straße".split(),
    "es": "el contrato debe cumplir con la cláusula de habilitación y cada parte año niño".split(),
    "ru": "договор должен соответствовать всем требованиям этого соглашения и каждой стороны".split(),
}
_PUNCT = [",", ".", ";", ":", "!", "?", "(", ")", '"', "'", "-", "/", "%", "&", "$", "—", "«", "»"]


def make_sentence(rng: random.Random) -> str:
    lang = rng.choice(list(_WORDS))
    parts = []
    for _ in range(rng.randint(1, 18)):
        r = rng.random()
        if r < 0.7:
            w = rng.choice(_WORDS[lang])
            parts.append(w.capitalize() if rng.random() < 0.1 else w)
        elif r < 0.85:
            parts.append(rng.choice(["1,000", "3.14", "1990", "2-3", "pre-1990", "10%", "$5", "v1.2.3"]))
        else:
            p = rng.choice(_PUNCT)
            if rng.random() < 0.5 and parts:
                parts[-1] += p
            else:
                parts.append(p)
    return " ".join(parts)


def make_corpus(n: int, seed: int) -> list[str]:
    rng = random.Random(seed)
    return [make_sentence(rng) for _ in range(n)]


@pytest.fixture(scope="session")
def corpus():
    return make_corpus(1000, 1234)


@pytest.fixture(scope="session")
def live_server():
    """A real uvicorn server on an ephemeral port, shared by the HTTP tests."""
    import threading
    import time

    import uvicorn

    from termmt.service import ServiceConfig, bind_socket, create_app

    sock = bind_socket("127.0.0.1", 0)
    port = sock.getsockname()[1]
    server = uvicorn.Server(uvicorn.Config(create_app(ServiceConfig()), log_level="warning"))
    thread = threading.Thread(target=server.run, kwargs={"sockets": [sock]}, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server did not start")
        time.sleep(0.02)
    yield f"http://127.0.0.1:{port}"
    server.should_exit = True
    thread.join(timeout=10)
