"""Classifier access: two built-in models and a client for external services.

Every model answers ``predict_proba(rows) -> (k, m)``. Calls are counted in
:mod:`dfax.guard`, so tests can prove a code path never touched the model.

External protocol (one JSON document per request and per response)::

    request:  {"id": 7, "instances": [[...d floats...], ...]}
    response: {"id": 7, "probabilities": [[...m floats...], ...]}

over HTTP (``POST <url>``, normally ending in ``/predict``) or over a
subprocess's stdin/stdout, one document per line.
"""

import itertools
import json
import os
import selectors
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import requests

from dfax import guard
from dfax.core import Dataset, LabelVector
from dfax.errors import (
    DimensionMismatch,
    InsufficientClasses,
    InvalidData,
    InvalidModelOutput,
    InvalidParameter,
    ModelUnavailable,
)

PROBA_TOL = 1e-6


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class ModelHandle:
    kind = "abstract"

    def __init__(self, m, d):
        self.m = int(m)
        self.d = int(d)

    def predict_proba(self, rows):
        rows = np.asarray(rows, dtype=float)
        single = rows.ndim == 1
        rows = np.atleast_2d(rows)
        if rows.shape[1] != self.d:
            raise DimensionMismatch(f"model expects {self.d} features, got {rows.shape[1]}")
        if not np.all(np.isfinite(rows)):
            raise InvalidData("rows passed to the model must be finite")
        guard.record_query(rows.shape[0])
        out = self._predict_proba(rows)
        return out[0] if single else out

    def predict(self, rows):
        return np.argmax(self.predict_proba(rows), axis=-1)

    def _predict_proba(self, rows):
        raise NotImplementedError


class CallableModel(ModelHandle):
    """Wrap ``fn(rows) -> (k, m) probabilities`` as a model."""

    kind = "callable"

    def __init__(self, fn, m, d):
        super().__init__(m, d)
        self.fn = fn

    def _predict_proba(self, rows):
        return np.asarray(self.fn(rows), dtype=float)


class NearestCentroidModel(ModelHandle):
    """Softmax over negative squared distances to the class centroids."""

    kind = "nearest-centroid"

    def __init__(self, centroids):
        centroids = np.asarray(centroids, dtype=float)
        super().__init__(*centroids.shape)
        self.centroids = centroids

    def _predict_proba(self, rows):
        if self.d == 0:
            return np.full((rows.shape[0], self.m), 1.0 / self.m)
        dist = ((rows[:, None, :] - self.centroids[None]) ** 2).sum(axis=2)
        return _softmax(-dist)

    def to_dict(self):
        return {"kind": self.kind, "centroids": self.centroids.tolist()}


class LogisticModel(ModelHandle):
    """Multinomial logistic regression; ``weights`` has a trailing bias row."""

    kind = "logistic"

    def __init__(self, weights, loss_history=()):
        weights = np.asarray(weights, dtype=float)
        super().__init__(weights.shape[1], weights.shape[0] - 1)
        self.weights = weights
        self.loss_history = tuple(loss_history)

    def _predict_proba(self, rows):
        return _softmax(rows @ self.weights[:-1] + self.weights[-1])

    def to_dict(self):
        return {"kind": self.kind, "weights": self.weights.tolist()}


def _cross_entropy(xb, onehot, w):
    z = xb @ w
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -(onehot * logp).sum() / xb.shape[0]


def fit_logistic(x, y, m, iterations=500, l2=1e-4):
    """Full-batch gradient descent from zero weights.

    Step size is ``1 / L`` where ``L = 0.5 * ||[X 1]||_2^2 / n + l2`` bounds the
    curvature of the mean cross-entropy, which makes every step a descent step.
    """
    n = x.shape[0]
    xb = np.hstack([x, np.ones((n, 1))])
    onehot = np.eye(m)[y]
    lipschitz = 0.5 * np.linalg.norm(xb, 2) ** 2 / n + l2
    step = 1.0 / lipschitz
    w = np.zeros((xb.shape[1], m))
    history = []
    for _ in range(iterations):
        p = _softmax(xb @ w)
        grad = xb.T @ (p - onehot) / n
        grad[:-1] += l2 * w[:-1]
        w = w - step * grad
        history.append(_cross_entropy(xb, onehot, w) + 0.5 * l2 * np.sum(w[:-1] ** 2))
    return w, history


BUILTIN_KINDS = ("logistic", "nearest-centroid")


def train_builtin(kind, data, labels, seed=0, iterations=500):
    """Train a built-in classifier.

    Both trainers are deterministic (zero init, full batch); ``seed`` is
    accepted so every entry point has the same signature.
    """
    rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    labels = labels if isinstance(labels, LabelVector) else LabelVector(labels)
    if len(labels) != rows.shape[0]:
        raise InvalidData(f"{len(labels)} labels for {rows.shape[0]} rows")
    counts = labels.counts()
    if rows.shape[0] < labels.m or np.any(counts == 0):
        missing = np.flatnonzero(counts == 0).tolist()
        raise InsufficientClasses(f"classes without training rows: {missing}")
    if kind == "nearest-centroid":
        cents = np.stack([rows[labels.labels == c].mean(axis=0) for c in range(labels.m)])
        return NearestCentroidModel(cents)
    if kind == "logistic":
        w, hist = fit_logistic(rows, labels.labels, labels.m, iterations=iterations)
        return LogisticModel(w, hist)
    raise InvalidParameter(f"unknown builtin model {kind!r}")


def model_from_dict(doc):
    if doc.get("kind") == "logistic":
        return LogisticModel(doc["weights"])
    if doc.get("kind") == "nearest-centroid":
        return NearestCentroidModel(doc["centroids"])
    raise InvalidParameter(f"cannot rebuild model of kind {doc.get('kind')!r}")


@dataclass(frozen=True)
class EndpointDescriptor:
    """Where an external model lives.

    ``transport`` is ``"http"`` (``target`` is a URL) or ``"subprocess"``
    (``target`` is a shell-style command line).
    """

    transport: str
    target: str
    timeout_ms: int = 30_000
    max_batch: int = 128
    retries: int = 2
    concurrency: int = 1

    def __post_init__(self):
        if self.transport not in ("http", "subprocess"):
            raise InvalidParameter(f"unknown transport {self.transport!r}")
        if self.max_batch < 1:
            raise InvalidParameter("max_batch must be at least 1")
        if self.concurrency < 1:
            raise InvalidParameter("concurrency must be at least 1")

    @classmethod
    def parse(cls, spec, **kw):
        if spec.startswith(("http://", "https://")):
            return cls("http", spec, **kw)
        if spec.startswith("cmd:"):
            return cls("subprocess", spec[4:], **kw)
        raise InvalidParameter(f"cannot parse endpoint {spec!r}")


class _SubprocessChannel:
    def __init__(self, command, timeout):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            shlex.split(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        self.sel = selectors.DefaultSelector()
        self.sel.register(self.proc.stdout, selectors.EVENT_READ)
        self.lock = threading.Lock()

    def exchange(self, lines):
        """Write all request lines, then read the same number of responses."""
        with self.lock:
            if self.proc.poll() is not None:
                raise ModelUnavailable(f"model process exited with code {self.proc.returncode}")
            try:
                for line in lines:
                    self.proc.stdin.write(line + "\n")
                self.proc.stdin.flush()
            except (BrokenPipeError, OSError) as err:
                raise ModelUnavailable(f"cannot write to model process: {err}") from err
            out = []
            for _ in lines:
                if not self.sel.select(self.timeout):
                    raise ModelUnavailable("model process timed out")
                reply = self.proc.stdout.readline()
                if not reply:
                    raise ModelUnavailable("model process closed its output")
                out.append(reply)
            return out

    def close(self):
        if self.proc.poll() is None:
            self.proc.stdin.close()
            try:
                self.proc.wait(timeout=self.timeout)
            except subprocess.TimeoutExpired:
                self.proc.kill()


class ExternalModel(ModelHandle):
    """Client for a black-box model speaking the JSON protocol above.

    Requests are chunked at ``max_batch`` rows and reassembled in order; each
    carries a sequence id that the response must echo, so several requests
    may be in flight at once. Requests are stateless: nothing is cached.
    """

    kind = "external"

    def __init__(self, endpoint, m, d):
        # m=None: take the class count from the first response
        super().__init__(0 if m is None else m, d)
        if m is None:
            self.m = None
        self.endpoint = endpoint
        self._ids = itertools.count()
        self._id_lock = threading.Lock()
        self._session = requests.Session() if endpoint.transport == "http" else None
        self._channel = None

    def _next_id(self):
        with self._id_lock:
            return next(self._ids)

    def close(self):
        if self._channel is not None:
            self._channel.close()
            self._channel = None
        if self._session is not None:
            self._session.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def _decode(self, raw, rid, k):
        try:
            doc = json.loads(raw) if isinstance(raw, (str, bytes)) else raw
        except ValueError as err:
            raise ModelUnavailable(f"response is not valid JSON: {err}") from err
        if not isinstance(doc, dict) or doc.get("id") != rid or "probabilities" not in doc:
            raise ModelUnavailable(f"malformed or mismatched response for request {rid}")
        try:
            probs = np.asarray(doc["probabilities"], dtype=float)
        except (TypeError, ValueError) as err:
            raise InvalidModelOutput(f"probabilities are not numeric: {err}") from err
        if self.m is None and probs.ndim == 2 and probs.shape[1] >= 1:
            self.m = probs.shape[1]
        if probs.shape != (k, self.m):
            raise InvalidModelOutput(f"expected a {k}x{self.m} probability matrix, got {probs.shape}")
        if not np.all(np.isfinite(probs)):
            raise InvalidModelOutput("model returned non-finite probabilities")
        if np.any(np.abs(probs.sum(axis=1) - 1.0) > PROBA_TOL) or np.any(probs < 0):
            raise InvalidModelOutput("probability rows must be non-negative and sum to 1")
        return probs

    def _http_call(self, chunk):
        rid = self._next_id()
        body = {"id": rid, "instances": chunk.tolist()}
        try:
            resp = self._session.post(
                self.endpoint.target, json=body, timeout=self.endpoint.timeout_ms / 1000.0
            )
        except requests.RequestException as err:
            raise ModelUnavailable(f"request to {self.endpoint.target} failed: {err}") from err
        if resp.status_code != 200:
            raise ModelUnavailable(f"endpoint answered HTTP {resp.status_code}")
        return self._decode(resp.text, rid, chunk.shape[0])

    def _with_retries(self, fn, *args):
        last = None
        for attempt in range(self.endpoint.retries + 1):
            try:
                return fn(*args)
            except InvalidModelOutput:
                raise
            except ModelUnavailable as err:
                last = err
                if self.endpoint.transport == "subprocess":
                    # a desynchronised stream cannot be reused
                    self.close()
        raise ModelUnavailable(str(last), retries=self.endpoint.retries)

    def _subprocess_calls(self, chunks):
        if self._channel is None:
            self._channel = _SubprocessChannel(self.endpoint.target, self.endpoint.timeout_ms / 1000.0)
        ids = [self._next_id() for _ in chunks]
        lines = [json.dumps({"id": i, "instances": c.tolist()}) for i, c in zip(ids, chunks)]
        replies = self._channel.exchange(lines)
        by_id = {}
        for raw in replies:
            try:
                by_id[json.loads(raw).get("id")] = raw
            except (ValueError, AttributeError) as err:
                raise ModelUnavailable(f"response is not valid JSON: {err}") from err
        return [self._decode(by_id.get(i, "{}"), i, c.shape[0]) for i, c in zip(ids, chunks)]

    def _predict_proba(self, rows):
        if rows.shape[0] == 0:
            return np.zeros((0, self.m or 0))
        step = self.endpoint.max_batch
        chunks = [rows[i : i + step] for i in range(0, rows.shape[0], step)]
        if self.endpoint.transport == "subprocess":
            width = self.endpoint.concurrency
            parts = []
            for i in range(0, len(chunks), width):
                parts.extend(self._with_retries(self._subprocess_calls, chunks[i : i + width]))
        elif self.endpoint.concurrency > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.endpoint.concurrency) as pool:
                parts = list(pool.map(lambda c: self._with_retries(self._http_call, c), chunks))
        else:
            parts = [self._with_retries(self._http_call, c) for c in chunks]
        return np.vstack(parts)


def serve_stdio(model, stdin, stdout):
    """Answer protocol requests line by line (used by scripts and test doubles)."""
    for line in stdin:
        if not line.strip():
            continue
        req = json.loads(line)
        probs = model.predict_proba(np.asarray(req["instances"], dtype=float).reshape(-1, model.d))
        stdout.write(json.dumps({"id": req["id"], "probabilities": probs.tolist()}) + "\n")
        stdout.flush()


def endpoint_from_env(spec=None, **kw):
    """Build an endpoint, letting DFAX_ENDPOINT_URL / DFAX_ENDPOINT_TIMEOUT override."""
    spec = os.environ.get("DFAX_ENDPOINT_URL", spec)
    if "DFAX_ENDPOINT_TIMEOUT" in os.environ:
        kw["timeout_ms"] = int(os.environ["DFAX_ENDPOINT_TIMEOUT"])
    return EndpointDescriptor.parse(spec, **kw)
