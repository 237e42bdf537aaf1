import json
import socket
import threading
import time
from pathlib import Path

import numpy as np
import pytest
import uvicorn
from fastapi.testclient import TestClient
from scorer_service.app import create_app
from support import png_b64

REPO_ROOT = Path(__file__).resolve().parents[2]
SCHEMA_PATH = REPO_ROOT / "src" / "stormforge" / "schemas" / "scorer_protocol.json"


@pytest.fixture(scope="session")
def protocol_schema():
    return json.loads(SCHEMA_PATH.read_text())


@pytest.fixture()
def client():
    return TestClient(create_app(model_name="stub"))


@pytest.fixture()
def probe_image_b64(rng):
    return png_b64(rng.random((24, 24, 3)))


@pytest.fixture()
def rng():
    return np.random.default_rng(7)


@pytest.fixture(scope="module")
def live_server():
    """Real uvicorn server on an ephemeral port, stub backend."""
    with socket.socket() as probe:
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
    config = uvicorn.Config(
        create_app(model_name="stub"), host="127.0.0.1", port=port, log_level="error"
    )
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.monotonic() + 15.0
    import requests

    endpoint = f"http://127.0.0.1:{port}"
    while time.monotonic() < deadline:
        try:
            if requests.get(endpoint + "/health", timeout=1.0).status_code == 200:
                break
        except requests.RequestException:
            time.sleep(0.05)
    else:
        raise RuntimeError("sidecar did not come up")
    yield endpoint
    server.should_exit = True
    thread.join(timeout=10)
