import numpy as np
import pytest

from sate.corpus import SynthSpec, collate, generate
from sate.nn import ModelConfig
from sate.numerics import Tensor

TINY_SPEC = SynthSpec(vocab_size=4, min_len=2, max_len=4, d_feat=4, n_train=24, n_dev=8, n_test=8, seed=3)


def tiny_config(**overrides) -> ModelConfig:
    base = dict(d_model=8, n_heads=2, d_ffn=8, n_layers_acoustic=2, n_layers_textual=1, n_layers_decoder=1,
                vocab_size=TINY_SPEC.model_vocab_size, d_feat=4, dropout=0.0)
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    return generate(TINY_SPEC)


@pytest.fixture
def tiny_batch(tiny_corpus):
    return collate(tiny_corpus.train[:3])


def _resolve(model, name):
    obj = model
    *path, leaf = name.split(".")
    for part in path:
        obj = obj[int(part)] if isinstance(obj, list) else getattr(obj, part)
    return obj, leaf


def bind(model, tensors):
    """Point the model's parameters at ``tensors`` (in named_parameters order)."""
    names = [n for n, _ in model.named_parameters()]
    for name, t in zip(names, tensors):
        obj, leaf = _resolve(model, name)
        setattr(obj, leaf, t)


def parameter_point(model):
    return [p.data.astype(np.float64) for p in model.parameters()]


def as_tensor64(x):
    return Tensor(np.asarray(x, dtype=np.float64))


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
