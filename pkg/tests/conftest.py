import os
from pathlib import Path

import numpy as np
import pytest

from bimodel_slu import tensor as T
from bimodel_slu.config import RunConfig
from bimodel_slu.data import build_vocab, load_corpus

TOY = Path(__file__).resolve().parents[1] / "src" / "bimodel_slu" / "resources" / "toy.conll"


def central_difference(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Gradient of scalar ``f()`` w.r.t. array ``x`` (modified in place, then restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, g = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = float(f())
        flat[i] = old - h
        down = float(f())
        flat[i] = old
        g[i] = (up - down) / (2 * h)
    return grad


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_corpus():
    return load_corpus(TOY)


@pytest.fixture(scope="session")
def toy_vocab(toy_corpus):
    return build_vocab(toy_corpus)


def small_config(variant="with_decoder", **kw) -> RunConfig:
    base = dict(variant=variant, hidden_dim=8, num_layers=2, embed_dim=6, label_embed_dim=4,
                batch_size=4, seed=3)
    base.update(kw)
    return RunConfig(**base)


def param_tensor(data) -> T.Tensor:
    return T.Tensor(np.asarray(data, dtype=np.float64), requires_grad=True)


def atis_dir():
    d = os.environ.get("BIMODEL_ATIS_DIR")
    return Path(d) if d else None


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(lines):
        terminalreporter.write_line(lines[n])
