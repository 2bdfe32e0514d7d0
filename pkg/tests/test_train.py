import math

import numpy as np
import pytest

from sate import numerics as nx
from sate import train as train_mod
from sate.model import LossOutput
from sate.nn import ConfigError
from sate.numerics import Tensor
from sate.train import (
    Adam,
    DivergenceError,
    ExperimentRecipe,
    TrainConfig,
    lr_at,
    train,
)

from conftest import tiny_config


def test_lr_schedule_closed_form():
    # peak 1e-3, warmup 400: ramp 2.5e-4 at 100, peak at 400, halved at 1600
    assert lr_at(100, 1e-3, 400) == pytest.approx(2.5e-4, abs=1e-15)
    assert lr_at(400, 1e-3, 400) == pytest.approx(1e-3, abs=1e-15)
    assert lr_at(1600, 1e-3, 400) == pytest.approx(5e-4, abs=1e-15)
    for s in range(1, 5000, 7):
        expect = 1e-3 * min(s / 400, math.sqrt(400 / s))
        assert abs(lr_at(s, 1e-3, 400) - expect) <= 1e-9


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(warmup_steps=0)
    with pytest.raises(ConfigError):
        TrainConfig(keep_best_k=0)
    with pytest.raises(ConfigError):
        ExperimentRecipe(loss="mtkd", asr_ckpt="a.ckpt")
    with pytest.raises(ConfigError):
        ExperimentRecipe(init="both", mt_ckpt="m.ckpt")


def test_adam_first_step_moves_by_lr():
    # with bias correction the first update is lr * g / (|g| + eps)
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, -4.0])
    Adam([p]).step(0.1)
    np.testing.assert_allclose(p.data, [0.9, -1.9], atol=1e-7)


def _tiny_run(tmp_path, corpus, name, kind="sate", seed=0, **overrides):
    cfg = dict(seed=seed, max_steps=6, epochs=50, eval_interval=3, warmup_steps=2, batch_frames=80,
               dev_subset=4, keep_best_k=2)
    cfg.update(overrides)
    data = {"train": corpus.train, "dev": corpus.dev}
    return train(ExperimentRecipe(model=kind), TrainConfig(**cfg), tiny_config(), data, tmp_path / name)


def test_training_is_bit_reproducible(tmp_path, tiny_corpus):
    a = _tiny_run(tmp_path, tiny_corpus, "a")
    b = _tiny_run(tmp_path, tiny_corpus, "b")
    assert a.steps == 6 and len(a.best) == 2
    assert a.checkpoint.read_bytes() == b.checkpoint.read_bytes()
    for _, step, path in a.best:
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()
    c = _tiny_run(tmp_path, tiny_corpus, "c", seed=1)
    assert c.checkpoint.read_bytes() != a.checkpoint.read_bytes()


def test_training_outputs(tmp_path, tiny_corpus):
    res = _tiny_run(tmp_path, tiny_corpus, "asr", kind="asr", max_steps=7)
    out = tmp_path / "asr"
    # evals at 3, 6 and the final partial interval at 7; only best 2 kept
    assert sorted(p.name for p in out.glob("step*.ckpt")) == sorted(p.name for _, _, p in res.best)
    assert (out / "last_good.ckpt").exists() and (out / "average.ckpt").exists()
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "step,split,metric,value"
    assert {l.split(",")[0] for l in lines[1:]} == {"3", "6", "7"}
    assert all(l.split(",")[2] == "wer" for l in lines[1:])
    assert not res.model.training


def test_divergence_aborts_with_last_good(tmp_path, tiny_corpus, monkeypatch):
    calls = {"n": 0}
    real = train_mod.loss_sate

    def flaky(model, batch):
        calls["n"] += 1
        out = real(model, batch)
        if calls["n"] == 5:
            return LossOutput(nx.scale(out.total, float("nan")))
        return out

    monkeypatch.setattr(train_mod, "loss_sate", flaky)
    with pytest.raises(DivergenceError) as info:
        _tiny_run(tmp_path, tiny_corpus, "div")
    assert info.value.step == 5
    assert info.value.last_good == tmp_path / "div" / "last_good.ckpt"
    assert info.value.last_good.exists()


def test_cascade_is_not_trainable(tmp_path, tiny_corpus):
    with pytest.raises(ConfigError):
        train(ExperimentRecipe(model="cascade"), TrainConfig(), tiny_config(), {"train": [], "dev": []}, tmp_path)
