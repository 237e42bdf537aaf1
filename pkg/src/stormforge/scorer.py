"""The black-box victim abstraction: anything that maps an image to one
similarity score per label.

Two implementations ship here. ``ToyScorer`` is a deterministic seeded
random-projection encoder that makes the whole attack loop exercisable
offline; it is deliberately sensitive to low-frequency structure so rain
and illumination measurably move its scores. ``RemoteScorer`` speaks the
HTTP wire protocol to a sidecar serving a real image-text model. Both are
query-only: callers see scores, never gradients, and an exact query counter.
"""

from __future__ import annotations

import base64
import hashlib
import threading
import time
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np
import requests

from .image import check_image, encode_png

DEFAULT_PROMPT_TEMPLATE = "a photo of a {}"


class ScorerError(Exception):
    """Base class for scorer failures."""

    retryable = False


class ScorerTransportError(ScorerError):
    """The scorer endpoint could not be reached; safe to retry."""

    retryable = True


class ScorerProtocolError(ScorerError):
    """The endpoint answered with something outside the wire protocol."""


class LabelSetMismatchError(ScorerError):
    """The endpoint's score vector does not match the registered labels."""


@dataclass(frozen=True)
class LabelSet:
    """Ordered label strings and their prompt strings."""

    labels: tuple[str, ...]
    prompts: tuple[str, ...]

    def __post_init__(self):
        labels = tuple(self.labels)
        prompts = tuple(self.prompts)
        if not labels:
            raise ValueError("label set must be nonempty")
        if len(set(labels)) != len(labels):
            raise ValueError("labels must be unique")
        if len(prompts) != len(labels):
            raise ValueError("need exactly one prompt per label")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "prompts", prompts)

    @classmethod
    def from_labels(cls, labels, template: str = DEFAULT_PROMPT_TEMPLATE) -> "LabelSet":
        labels = tuple(labels)
        return cls(labels, tuple(template.format(lbl) for lbl in labels))

    def __len__(self) -> int:
        return len(self.labels)


def check_scores(scores, n_labels: int | None = None) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 1 or scores.size < 1:
        raise ValueError("score vector must be a nonempty 1-D array")
    if not np.all(np.isfinite(scores)):
        raise ValueError("scores must be finite")
    if n_labels is not None and scores.size != n_labels:
        raise LabelSetMismatchError(
            f"expected {n_labels} scores, got {scores.size}"
        )
    return scores


def predict(scores) -> int:
    """Index of the highest similarity; ties break toward the lowest index."""
    return int(np.argmax(check_scores(scores)))


@runtime_checkable
class Scorer(Protocol):
    labels: LabelSet

    def score(self, img) -> np.ndarray: ...

    @property
    def query_count(self) -> int: ...


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "big")


def area_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Exact area-average resize via the (piecewise-bilinear) integral image."""
    h, w = img.shape[:2]
    integral = np.zeros((h + 1, w + 1, img.shape[2]))
    integral[1:, 1:] = np.cumsum(np.cumsum(img, axis=0), axis=1)

    def interp(values: np.ndarray, coords: np.ndarray, axis: int) -> np.ndarray:
        size = values.shape[axis]
        idx = np.clip(np.floor(coords).astype(int), 0, size - 2)
        frac = coords - idx
        lo = np.take(values, idx, axis=axis)
        hi = np.take(values, idx + 1, axis=axis)
        shape = [1] * values.ndim
        shape[axis] = len(coords)
        frac = frac.reshape(shape)
        return lo * (1.0 - frac) + hi * frac

    ys = np.linspace(0.0, h, out_h + 1)
    xs = np.linspace(0.0, w, out_w + 1)
    grid = interp(interp(integral, ys, 0), xs, 1)
    cell = grid[1:, 1:] - grid[:-1, 1:] - grid[1:, :-1] + grid[:-1, :-1]
    area = (h / out_h) * (w / out_w)
    return cell / area


class ToyScorer:
    """Seeded random-projection encoder scoring cosine similarities.

    The image path downsamples to 32x32, flattens, projects to 64
    dimensions with a fixed seeded Gaussian matrix, and L2-normalizes; each
    label gets a fixed seeded unit vector. Scores are inner products of unit
    vectors, so they always lie in [-1, 1].
    """

    patch = 32
    dim = 64

    def __init__(self, labels: LabelSet, seed: int = 0):
        self.labels = labels
        self.seed = seed
        rng = np.random.default_rng(_stable_seed("toy-projection", seed))
        self._projection = rng.standard_normal((self.dim, self.patch * self.patch * 3))
        vecs = []
        for label in labels.labels:
            lrng = np.random.default_rng(_stable_seed("toy-label", seed, label))
            v = lrng.standard_normal(self.dim)
            vecs.append(v / np.linalg.norm(v))
        self._label_vectors = np.array(vecs)
        self._count = 0
        self._lock = threading.Lock()

    def embed(self, img) -> np.ndarray:
        """Unit-norm image embedding; does not count as a query."""
        img = check_image(img)
        flat = area_resize(img, self.patch, self.patch).ravel()
        v = self._projection @ flat
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return v
        return v / norm

    def label_vector(self, index: int) -> np.ndarray:
        return self._label_vectors[index].copy()

    @property
    def projection_matrix(self) -> np.ndarray:
        return self._projection.copy()

    def score(self, img) -> np.ndarray:
        scores = self._label_vectors @ self.embed(img)
        with self._lock:
            self._count += 1
        return scores

    @property
    def query_count(self) -> int:
        return self._count


class RemoteScorer:
    """HTTP client for a sidecar scorer speaking the wire protocol.

    Registers the label set as a session on construction. Transport
    failures are retried up to ``max_retries`` times with exponential
    backoff; protocol and label-set errors are not retryable. The query
    counter increments once per successful ``score`` call regardless of
    retries.
    """

    def __init__(self, endpoint: str, labels: LabelSet,
                 prompt_template: str = DEFAULT_PROMPT_TEMPLATE,
                 timeout: float = 30.0, max_retries: int = 3,
                 backoff: float = 0.25, http=None):
        self.endpoint = endpoint.rstrip("/")
        self.labels = labels
        self.prompt_template = prompt_template
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._http = http if http is not None else requests.Session()
        self._count = 0
        self._lock = threading.Lock()
        payload = {"labels": list(labels.labels), "prompt_template": prompt_template}
        body = self._post("/session", payload)
        session = body.get("session")
        if not isinstance(session, str) or not session:
            raise ScorerProtocolError(f"invalid session response: {body!r}")
        self.session_id = session

    def _post(self, route: str, payload: dict) -> dict:
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt > 0:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(
                    self.endpoint + route, json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = ScorerTransportError(
                    f"{route} returned {resp.status_code}: {resp.text[:200]}"
                )
                continue
            if resp.status_code != 200:
                raise ScorerProtocolError(
                    f"{route} returned {resp.status_code}: {resp.text[:200]}"
                )
            try:
                body = resp.json()
            except ValueError as exc:
                raise ScorerProtocolError(f"{route} returned non-JSON body") from exc
            if not isinstance(body, dict):
                raise ScorerProtocolError(f"{route} returned non-object JSON")
            return body
        raise ScorerTransportError(
            f"{route} unreachable after {self.max_retries + 1} attempts: {last_exc}"
        )

    def score(self, img) -> np.ndarray:
        payload = {
            "session": self.session_id,
            "image_png_b64": base64.b64encode(encode_png(img)).decode("ascii"),
        }
        body = self._post("/score", payload)
        raw = body.get("scores")
        if not isinstance(raw, list) or not all(isinstance(v, (int, float)) for v in raw):
            raise ScorerProtocolError(f"invalid score response: {body!r}")
        scores = check_scores(raw, n_labels=len(self.labels))
        with self._lock:
            self._count += 1
        return scores

    @property
    def query_count(self) -> int:
        return self._count


class RemoteFeatureExtractor:
    """Perceptual feature extractor backed by the sidecar ``/features`` route."""

    def __init__(self, endpoint: str, timeout: float = 30.0, max_retries: int = 3,
                 backoff: float = 0.25, http=None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self._http = http if http is not None else requests.Session()

    def extract(self, img) -> list[np.ndarray]:
        payload = {"image_png_b64": base64.b64encode(encode_png(img)).decode("ascii")}
        last_exc: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt > 0:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            try:
                resp = self._http.post(
                    self.endpoint + "/features", json=payload, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500:
                last_exc = ScorerTransportError(f"/features returned {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise ScorerProtocolError(f"/features returned {resp.status_code}")
            body = resp.json()
            levels = body.get("levels") if isinstance(body, dict) else None
            if not isinstance(levels, list) or len(levels) < 2:
                raise ScorerProtocolError(f"invalid features response: {type(body)}")
            return [np.asarray(level, dtype=np.float64) for level in levels]
        raise ScorerTransportError(
            f"/features unreachable after {self.max_retries + 1} attempts: {last_exc}"
        )
