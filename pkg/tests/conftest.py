"""Shared fixtures: trained toy models, cached across sessions.

Training the copy-k model takes several minutes on one core, so weights are
cached in pytest's cache directory under a key built from the training
configuration and the source of every module that affects training.  Any
source or config change retrains.
"""

import hashlib
import inspect
import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import smartcrop.canvas
import smartcrop.model
import smartcrop.neural
import smartcrop.tasks
import smartcrop.vocab
from smartcrop.model import DiffusionLM, ModelConfig, TrainingConfig, load_weights, save_weights, train
from smartcrop.neural import OptimizerConfig
from smartcrop.tasks import gen_arith, gen_copyk
from smartcrop.vocab import Vocabulary

_TRAINING_SOURCES = (smartcrop.canvas, smartcrop.model, smartcrop.neural, smartcrop.tasks, smartcrop.vocab)

MODEL_SPECS = {
    # copy-k with k in 1..40 on the 160-slot canvas
    "copyk": dict(generator=gen_copyk, n=2000, seed=0, l_new=160, epochs=20),
    # two-digit addition on the 32-slot canvas
    "arith": dict(generator=gen_arith, n=2000, seed=0, l_new=32, epochs=12),
}

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def _cache_key(name, spec):
    h = hashlib.sha256()
    h.update(repr(sorted((k, getattr(v, "__name__", v)) for k, v in spec.items())).encode())
    h.update(name.encode())
    for mod in _TRAINING_SOURCES:
        h.update(inspect.getsource(mod).encode())
    return h.hexdigest()[:16]


def _trained(request, name):
    spec = MODEL_SPECS[name]
    cache_dir = Path(request.config.cache.mkdir("smartcrop-models"))
    path = cache_dir / f"{name}-{_cache_key(name, spec)}.bin"
    if path.exists():
        return load_weights(path), None
    vocab = Vocabulary.standard(64)
    model = DiffusionLM(ModelConfig(vocab=vocab), seed=spec["seed"])
    corpus = spec["generator"](vocab, spec["seed"], spec["n"])
    cfg = TrainingConfig(epochs=spec["epochs"], batch_size=16, l_new=spec["l_new"], seed=spec["seed"],
                         optimizer=OptimizerConfig(3e-3), log_every=0)
    t0 = time.perf_counter()
    train(model, corpus, cfg)
    elapsed = time.perf_counter() - t0
    save_weights(model, path)
    return model, elapsed


@pytest.fixture(scope="session")
def copyk_model(request):
    """(model, training seconds or None when loaded from cache)."""
    return _trained(request, "copyk")


@pytest.fixture(scope="session")
def arith_model(request):
    return _trained(request, "arith")


# ---------------------------------------------------------------------------
# one pass/fail line per acceptance criterion


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "detail": []})
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False
    if report.when == "call":
        entry["detail"].extend(v for k, v in item.user_properties if k == "detail")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] else "FAIL"
        detail = "; ".join(e["detail"])
        terminalreporter.write_line(f"criterion {number}: {status} - {e['title']}" + (f" [{detail}]" if detail else ""))
