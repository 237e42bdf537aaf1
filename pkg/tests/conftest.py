import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from stormforge.scorer import LabelSet


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_image(rng):
    return rng.random((24, 24, 3))


@pytest.fixture
def toy_labels():
    return LabelSet.from_labels(["cat", "dog", "car"])


class ScriptedScorerHandler(BaseHTTPRequestHandler):
    """Configurable stub endpoint for client tests.

    The owning server instance carries the behavior knobs: ``score_vector``,
    ``fail_times`` (5xx responses before succeeding), ``malformed`` (send a
    non-protocol body), and a request log.
    """

    def log_message(self, *args):
        pass

    def _read_json(self):
        length = int(self.headers.get("Content-Length", 0))
        return json.loads(self.rfile.read(length))

    def _send(self, status, body):
        payload = json.dumps(body).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def do_POST(self):
        server = self.server
        server.requests.append(self.path)
        if server.fail_times > 0:
            server.fail_times -= 1
            self._send(503, {"error": "transient"})
            return
        body = self._read_json()
        if self.path == "/session":
            if not body.get("labels"):
                self._send(400, {"error": "empty labels"})
                return
            server.sessions += 1
            self._send(200, {"session": f"sess-{server.sessions}"})
        elif self.path == "/score":
            if server.malformed:
                self._send(200, {"unexpected": True})
                return
            self._send(200, {"scores": list(server.score_vector)})
        elif self.path == "/features":
            if server.malformed:
                self._send(200, {"levels": "nope"})
                return
            self._send(200, {
                "levels": server.feature_levels,
                "metadata": {"layers": [f"level_{i}" for i in range(len(server.feature_levels))]},
            })
        else:
            self._send(404, {"error": "unknown route"})


@pytest.fixture
def stub_scorer_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), ScriptedScorerHandler)
    server.score_vector = [0.1, 0.2]
    server.feature_levels = [[0.0, 1.0], [2.0, 3.0]]
    server.fail_times = 0
    server.malformed = False
    server.sessions = 0
    server.requests = []
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.endpoint = f"http://127.0.0.1:{server.server_address[1]}"
    yield server
    server.shutdown()
    thread.join(timeout=5)
