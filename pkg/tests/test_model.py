import json
import sys
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from dfax.core import Dataset, LabelVector
from dfax.errors import InsufficientClasses, InvalidModelOutput, InvalidParameter, ModelUnavailable
from dfax.model import (
    EndpointDescriptor,
    ExternalModel,
    LogisticModel,
    NearestCentroidModel,
    model_from_dict,
    train_builtin,
)


def separable(n=100, seed=0):
    rng = np.random.default_rng(seed)
    y = np.repeat([0, 1], n // 2)
    x = np.where(y[:, None] == 1, 1.0, -1.0) + 0.2 * rng.standard_normal((n, 2))
    return Dataset(x), LabelVector(y)


def test_logistic_separable_and_deterministic():
    data, y = separable()
    m1 = train_builtin("logistic", data, y, seed=1)
    m2 = train_builtin("logistic", data, y, seed=1)
    assert np.mean(m1.predict(data.rows) == y.labels) == 1.0
    assert m1.weights.tobytes() == m2.weights.tobytes()


def test_logistic_loss_non_increasing():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((300, 4))
    y = LabelVector(rng.integers(0, 3, 300))
    model = train_builtin("logistic", Dataset(x), y, iterations=200)
    hist = np.array(model.loss_history)
    assert np.all(np.diff(hist) <= 1e-12)


def test_nearest_centroid():
    data, y = separable()
    model = train_builtin("nearest-centroid", data, y)
    assert model.predict(model.centroids).tolist() == [0, 1]
    mid = model.centroids.mean(axis=0)
    np.testing.assert_allclose(model.predict_proba(mid), [0.5, 0.5], atol=1e-12)


def test_probabilities_sum_to_one():
    data, y = separable()
    for kind in ("logistic", "nearest-centroid"):
        p = train_builtin(kind, data, y).predict_proba(np.random.default_rng(0).standard_normal((50, 2)) * 5)
        np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-6)


def test_missing_class_rejected():
    with pytest.raises(InsufficientClasses):
        train_builtin("logistic", Dataset(np.zeros((4, 1))), LabelVector([0, 0, 0, 0], m=2))
    with pytest.raises(InvalidParameter):
        train_builtin("svm", *separable())


def test_model_dict_round_trip():
    data, y = separable()
    for kind in ("logistic", "nearest-centroid"):
        m = train_builtin(kind, data, y)
        back = model_from_dict(json.loads(json.dumps(m.to_dict())))
        np.testing.assert_array_equal(back.predict_proba(data.rows), m.predict_proba(data.rows))


# ---- external endpoint test doubles -------------------------------------

class _Server:
    def __init__(self, respond):
        outer = self
        self.requests = []

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.requests.append(body)
                status, doc = respond(body)
                raw = json.dumps(doc).encode() if not isinstance(doc, bytes) else doc
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(raw)))
                self.end_headers()
                self.wfile.write(raw)

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/predict"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


@pytest.fixture
def server():
    servers = []

    def start(respond):
        s = _Server(respond)
        servers.append(s)
        return s

    yield start
    for s in servers:
        s.close()


def reference_model():
    data, y = separable()
    return train_builtin("logistic", data, y)


def serve_model(model):
    def respond(body):
        rows = np.asarray(body["instances"], dtype=float)
        return 200, {"id": body["id"], "probabilities": model.predict_proba(rows).tolist()}

    return respond


def test_echo_server_fixed_probabilities(server):
    s = server(lambda body: (200, {"id": body["id"], "probabilities": [[0.2, 0.8]] * len(body["instances"])}))
    with ExternalModel(EndpointDescriptor("http", s.url), 2, 2) as m:
        assert m.predict_proba(np.zeros((1, 2))).tolist() == [[0.2, 0.8]]
    assert s.requests[0]["instances"] == [[0.0, 0.0]]


@pytest.mark.parametrize("concurrency", [1, 4])
def test_batched_equals_single_shot(server, concurrency):
    ref = reference_model()
    s = server(serve_model(ref))
    rows = np.random.default_rng(0).standard_normal((300, 2))
    with ExternalModel(EndpointDescriptor("http", s.url, max_batch=128, concurrency=concurrency), 2, 2) as m:
        got = m.predict_proba(rows)
    assert sorted(len(r["instances"]) for r in s.requests) == [44, 128, 128]
    np.testing.assert_array_equal(got, ref.predict_proba(rows))


def test_argmax_invariant_to_batch_partitioning(server):
    ref = reference_model()
    s = server(serve_model(ref))
    rows = np.random.default_rng(1).standard_normal((97, 2))
    preds = []
    for mb in (1, 7, 97, 500):
        with ExternalModel(EndpointDescriptor("http", s.url, max_batch=mb), 2, 2) as m:
            preds.append(m.predict(rows))
    assert all(np.array_equal(p, preds[0]) for p in preds)


def test_class_count_learned_from_response(server):
    s = server(serve_model(reference_model()))
    with ExternalModel(EndpointDescriptor("http", s.url), None, 2) as m:
        m.predict_proba(np.zeros((2, 2)))
        assert m.m == 2


def test_http_error_status(server):
    s = server(lambda body: (503, {"error": "busy"}))
    with ExternalModel(EndpointDescriptor("http", s.url, retries=2), 2, 2) as m:
        with pytest.raises(ModelUnavailable) as info:
            m.predict_proba(np.zeros((1, 2)))
    assert info.value.retries == 2
    assert len(s.requests) == 3


def test_timeout(server):
    def slow(body):
        time.sleep(0.5)
        return 200, {"id": body["id"], "probabilities": [[0.5, 0.5]]}

    s = server(slow)
    with ExternalModel(EndpointDescriptor("http", s.url, timeout_ms=50, retries=0), 2, 2) as m:
        with pytest.raises(ModelUnavailable):
            m.predict_proba(np.zeros((1, 2)))


@pytest.mark.parametrize("probs", [[[np.nan, 1.0]], [[0.3, 0.3]], [[0.5, 0.5, 0.0]]])
def test_invalid_output(server, probs):
    s = server(lambda body: (200, {"id": body["id"], "probabilities": probs}))
    with ExternalModel(EndpointDescriptor("http", s.url), 2, 2) as m:
        with pytest.raises(InvalidModelOutput):
            m.predict_proba(np.zeros((1, 2)))


def test_mismatched_id(server):
    s = server(lambda body: (200, {"id": body["id"] + 1, "probabilities": [[0.5, 0.5]]}))
    with ExternalModel(EndpointDescriptor("http", s.url, retries=0), 2, 2) as m:
        with pytest.raises(ModelUnavailable):
            m.predict_proba(np.zeros((1, 2)))


def test_unreachable_endpoint():
    with ExternalModel(EndpointDescriptor("http", "http://127.0.0.1:9/predict", timeout_ms=200, retries=1), 2, 2) as m:
        with pytest.raises(ModelUnavailable):
            m.predict_proba(np.zeros((1, 2)))


def test_stateless_requests(server):
    s = server(serve_model(reference_model()))
    rows = np.random.default_rng(2).standard_normal((10, 2))
    with ExternalModel(EndpointDescriptor("http", s.url), 2, 2) as m:
        first = m.predict_proba(rows)
        m.predict_proba(rows * 3)
        again = m.predict_proba(rows)
    np.testing.assert_array_equal(first, again)
    assert len(s.requests) == 3


STDIO_SCRIPT = """
import sys, json
from dfax.model import LogisticModel, serve_stdio
serve_stdio(LogisticModel(json.loads(sys.argv[1])), sys.stdin, sys.stdout)
"""


@pytest.mark.parametrize("concurrency", [1, 3])
def test_subprocess_transport(tmp_path, concurrency):
    ref = reference_model()
    script = tmp_path / "serve.py"
    script.write_text(STDIO_SCRIPT)
    weights = json.dumps(ref.weights.tolist())
    cmd = f"{sys.executable} {script} '{weights}'"
    rows = np.random.default_rng(3).standard_normal((50, 2))
    ep = EndpointDescriptor.parse("cmd:" + cmd, max_batch=16, concurrency=concurrency)
    with ExternalModel(ep, 2, 2) as m:
        np.testing.assert_array_equal(m.predict_proba(rows), ref.predict_proba(rows))


def test_subprocess_that_dies(tmp_path):
    ep = EndpointDescriptor("subprocess", f"{sys.executable} -c 'pass'", timeout_ms=2000, retries=1)
    with ExternalModel(ep, 2, 2) as m:
        with pytest.raises(ModelUnavailable):
            m.predict_proba(np.zeros((1, 2)))


def test_endpoint_validation(monkeypatch):
    with pytest.raises(InvalidParameter):
        EndpointDescriptor("http", "x", max_batch=0)
    with pytest.raises(InvalidParameter):
        EndpointDescriptor.parse("ftp://x")
    from dfax.model import endpoint_from_env

    monkeypatch.setenv("DFAX_ENDPOINT_URL", "http://example.invalid/predict")
    monkeypatch.setenv("DFAX_ENDPOINT_TIMEOUT", "1234")
    ep = endpoint_from_env("http://other/predict")
    assert ep.target == "http://example.invalid/predict" and ep.timeout_ms == 1234
