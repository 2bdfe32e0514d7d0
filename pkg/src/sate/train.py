"""Optimization, checkpoint lifecycle and evaluation."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .checkpoint import average_checkpoints, load_checkpoint, save_checkpoint
from .corpus import Example, make_batches, spec_augment_lite
from .metrics import bleu4, corpus_wer
from .model import (
    Cascade,
    TeacherBundle,
    build_model,
    init_from_pretrained,
    loss_mtkd,
    loss_sate,
    transcribe,
    translate,
)
from .nn import ConfigError, ModelConfig

log = logging.getLogger(__name__)


class DivergenceError(RuntimeError):
    def __init__(self, step: int, last_good: Path | None):
        super().__init__(f"loss became non-finite at step {step}; last good checkpoint: {last_good}")
        self.step = step
        self.last_good = last_good


@dataclass
class TrainConfig:
    adam_beta1: float = 0.9
    adam_beta2: float = 0.997
    adam_eps: float = 1e-8
    warmup_steps: int = 400
    peak_lr: float = 1e-3
    epochs: int = 10
    max_steps: int = 0  # 0: run all epochs
    seed: int = 0
    checkpoint_dir: str = "checkpoints"
    eval_interval: int = 200
    keep_best_k: int = 5
    batch_frames: int = 2000
    dev_subset: int = 200  # 0: whole dev split
    dev_beam: int = 0  # 0: greedy decoding for checkpoint selection
    clip_norm: float = 0.0

    def __post_init__(self):
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")
        if self.keep_best_k < 1:
            raise ConfigError("keep_best_k must be >= 1")
        if self.eval_interval < 1 or self.batch_frames < 1:
            raise ConfigError("eval_interval and batch_frames must be positive")


@dataclass
class ExperimentRecipe:
    model: str = "sate"  # asr | mt | e2e_st | sate | cascade
    init: str = "none"  # none | asr_ckpt | mt_ckpt | both
    loss: str = "sate"  # sate | mtkd
    adaptor: str = "fusion"  # none | soft | mapping | fusion
    ctc_layer_index: int | None = None
    asr_ckpt: str | None = None
    mt_ckpt: str | None = None
    spec_augment: bool = False
    load_asr_encoder: bool = True
    load_mt_encoder: bool = True
    load_mt_decoder: bool = True
    tag: str = ""

    def __post_init__(self):
        if self.model not in ("asr", "mt", "e2e_st", "sate", "cascade"):
            raise ConfigError(f"unknown model kind {self.model!r}")
        if self.init not in ("none", "asr_ckpt", "mt_ckpt", "both"):
            raise ConfigError(f"unknown init source {self.init!r}")
        if self.loss not in ("sate", "mtkd"):
            raise ConfigError(f"unknown loss kind {self.loss!r}")
        if self.loss == "mtkd" and not (self.asr_ckpt and self.mt_ckpt):
            raise ConfigError("mtkd needs both teacher checkpoints (asr_ckpt and mt_ckpt)")
        if self.init in ("asr_ckpt", "both") and not self.asr_ckpt:
            raise ConfigError("init from ASR needs asr_ckpt")
        if self.init in ("mt_ckpt", "both") and not self.mt_ckpt:
            raise ConfigError("init from MT needs mt_ckpt")

    @property
    def name(self) -> str:
        return self.tag or self.model


def lr_at(step: int, peak: float, warmup: int) -> float:
    """peak * min(step / warmup, sqrt(warmup / step))."""
    step = max(step, 1)
    return peak * min(step / warmup, math.sqrt(warmup / step))


class Adam:
    def __init__(self, params, beta1=0.9, beta2=0.997, eps=1e-8):
        self.params = list(params)
        self.b1, self.b2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= (lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.dtype)


def _clip(params, max_norm: float) -> float:
    total = math.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params if p.grad is not None))
    if max_norm > 0 and total > max_norm:
        for p in params:
            if p.grad is not None:
                p.grad *= max_norm / total
    return total


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


def evaluate(model, examples: list[Example], beam_size: int = 4, batch_frames: int = 4000) -> dict:
    """BLEU for translation models, WER for ASR, plus mean decode seconds per utterance."""
    kind = model.kind
    refs, hyps = [], []
    start = time.perf_counter()
    for batch in make_batches(examples, batch_frames):
        if kind == "asr":
            hyps.extend(transcribe(model, batch))
            refs.extend(batch.src_list)
        else:
            if kind == "mt":
                model.eval()
            hyps.extend(h.tokens for h in translate(model, batch, beam_size))
            refs.extend(batch.tgt_list)
    elapsed = time.perf_counter() - start
    out = {"n": len(examples), "decode_seconds_per_utt": elapsed / max(len(examples), 1)}
    if kind == "asr":
        out["wer"] = corpus_wer(hyps, refs)
    else:
        out["bleu"] = bleu4(hyps, refs)
    return out


def dev_score(metrics: dict) -> float:
    """Higher is better: BLEU, or negated WER for ASR."""
    return metrics["bleu"] if "bleu" in metrics else -metrics["wer"]


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    model: object
    checkpoint: Path
    best: list[tuple[float, int, Path]]
    log: list[dict] = field(default_factory=list)
    steps: int = 0


def prepare_model(recipe: ExperimentRecipe, model_cfg: ModelConfig, rng: np.random.Generator):
    model = build_model(recipe.model, model_cfg, rng)
    if recipe.init != "none":
        asr_state = load_checkpoint(recipe.asr_ckpt) if recipe.init in ("asr_ckpt", "both") else None
        mt_state = load_checkpoint(recipe.mt_ckpt) if recipe.init in ("mt_ckpt", "both") else None
        init_from_pretrained(model, asr_state, mt_state, recipe.load_asr_encoder,
                             recipe.load_mt_encoder, recipe.load_mt_decoder)
    return model


def load_teachers(recipe: ExperimentRecipe, model_cfg: ModelConfig) -> TeacherBundle:
    asr = build_model("asr", model_cfg, 0)
    asr.load_state_dict(load_checkpoint(recipe.asr_ckpt))
    mt = build_model("mt", model_cfg, 0)
    mt.load_state_dict(load_checkpoint(recipe.mt_ckpt))
    return TeacherBundle(asr, mt)


def resolve_model_config(recipe: ExperimentRecipe, model_cfg: ModelConfig) -> ModelConfig:
    d = model_cfg.to_dict()
    d["adaptor"] = recipe.adaptor
    if recipe.ctc_layer_index is not None:
        d["ctc_layer_index"] = recipe.ctc_layer_index
    return ModelConfig.from_dict(d)


def train(
    recipe: ExperimentRecipe,
    train_cfg: TrainConfig,
    model_cfg: ModelConfig,
    data: dict[str, list[Example]],
    out_dir=None,
) -> TrainResult:
    """Train one model; the returned model holds the average of the best-k checkpoints."""
    if recipe.model == "cascade":
        raise ConfigError("a cascade is assembled from trained ASR and MT models, not trained")
    model_cfg = resolve_model_config(recipe, model_cfg)
    out_dir = Path(out_dir or train_cfg.checkpoint_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    init_rng, drop_rng, shuffle_rng, aug_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(train_cfg.seed).spawn(4)
    )
    model = prepare_model(recipe, model_cfg, init_rng)
    model.set_dropout_rng(drop_rng)
    teachers = load_teachers(recipe, model_cfg) if recipe.loss == "mtkd" else None
    params = model.parameters()
    opt = Adam(params, train_cfg.adam_beta1, train_cfg.adam_beta2, train_cfg.adam_eps)
    dev = data["dev"][: train_cfg.dev_subset or None]

    best: list[tuple[float, int, Path]] = []
    history: list[dict] = []
    last_good: Path | None = None
    step = 0

    def checkpoint_and_score():
        nonlocal last_good, best
        model.eval()
        metrics = evaluate(model, dev, train_cfg.dev_beam)
        model.train()
        path = save_checkpoint(out_dir / f"step{step:06d}.ckpt", model.state_dict())
        last_good = save_checkpoint(out_dir / "last_good.ckpt", model.state_dict())
        score = dev_score(metrics)
        best.append((score, step, path))
        best.sort(key=lambda r: (r[0], r[1]), reverse=True)
        for _, _, stale in best[train_cfg.keep_best_k:]:
            stale.unlink(missing_ok=True)
        best = best[: train_cfg.keep_best_k]
        row = {"step": step, "split": "dev", **{k: v for k, v in metrics.items() if k in ("bleu", "wer")}}
        history.append(row)
        log.info("%s step %d dev %s", recipe.name, step, row)

    model.train()
    done = False
    for epoch in range(train_cfg.epochs):
        for batch in make_batches(data["train"], train_cfg.batch_frames, shuffle_rng):
            step += 1
            if recipe.spec_augment:
                batch = batch.with_features(spec_augment_lite(batch.x, aug_rng, batch.x_lens))
            out = loss_mtkd(model, batch, teachers) if teachers else loss_sate(model, batch)
            value = out.total.item()
            if not math.isfinite(value):
                raise DivergenceError(step, last_good)
            model.zero_grad()
            nx.backward(out.total)
            if train_cfg.clip_norm > 0:
                _clip(params, train_cfg.clip_norm)
            opt.step(lr_at(step, train_cfg.peak_lr, train_cfg.warmup_steps))
            if step % 50 == 0:
                history.append({"step": step, "split": "train", **out.log_values()})
            if step % train_cfg.eval_interval == 0:
                checkpoint_and_score()
            if train_cfg.max_steps and step >= train_cfg.max_steps:
                done = True
                break
        if done:
            break
    if step % train_cfg.eval_interval:
        checkpoint_and_score()

    averaged = average_checkpoints([p for _, _, p in best])
    final = save_checkpoint(out_dir / "average.ckpt", averaged)
    model.load_state_dict(averaged)
    model.eval()
    write_metrics_csv(out_dir / "metrics.csv", history)
    return TrainResult(model, final, best, history, step)


def write_metrics_csv(path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,split,metric,value\n")
        for row in rows:
            for k, v in row.items():
                if k in ("step", "split"):
                    continue
                fh.write(f"{row['step']},{row['split']},{k},{v:.6f}\n")


def load_model(kind: str, model_cfg: ModelConfig, path) -> object:
    model = build_model(kind, model_cfg, 0)
    model.load_state_dict(load_checkpoint(path))
    return model.eval()


def load_cascade(model_cfg: ModelConfig, asr_path, mt_path) -> Cascade:
    return Cascade(load_model("asr", model_cfg, asr_path), load_model("mt", model_cfg, mt_path))


def config_dict(*objs) -> dict:
    out = {}
    for o in objs:
        out.update(asdict(o))
    return out
