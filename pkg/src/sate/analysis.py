"""Attention localness: how much attention mass stays near the query position."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import numerics as nx
from .checkpoint import save_checkpoint
from .corpus import Example, make_batches
from .model import encode_batch
from .nn import AttentionTrace

WINDOW_RULE = "two-sided self-inclusive |i-j|<=w, w=max(1,round(0.05*L)), mean over heads"


def window_size(L: int) -> int:
    # round half to even like Python's round(); 0.05*L only hits .5 at L=10,30,...
    return max(1, int(round(0.05 * L)))


def localness(A: np.ndarray, L: int | None = None, w: int | None = None) -> np.ndarray | None:
    """Per-query score: attention mass within ``w`` positions of the query.

    ``A`` may be padded; only the leading ``L`` rows and columns are used.
    Returns None when ``L < 2`` (localness is undefined there).
    """
    A = np.asarray(A, dtype=np.float64)
    L = A.shape[-1] if L is None else int(L)
    if L < 2:
        return None
    w = window_size(L) if w is None else int(w)
    valid = A[..., :L, :L]
    i = np.arange(L)
    band = np.abs(i[:, None] - i[None, :]) <= w
    return (valid * band).sum(axis=-1)


@dataclass
class LayerStat:
    layer: int  # 1-based
    group: str
    mean: float
    n_utterances: int


@dataclass
class LocalnessReport:
    model_tag: str
    ctc_layer_index: int | None
    layers: list[LayerStat] = field(default_factory=list)
    window_rule: str = WINDOW_RULE

    def group_mean(self, group: str) -> float:
        vals = [s.mean for s in self.layers if s.group == group]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def below(self) -> float:
        return self.group_mean("below-CTC")

    @property
    def above(self) -> float:
        return self.group_mean("above-CTC")

    @property
    def overall(self) -> float:
        return float(np.mean([s.mean for s in self.layers]))

    def means(self) -> list[float]:
        return [s.mean for s in self.layers]


def _group(layer: int, ctc_layer_index: int | None) -> str:
    if ctc_layer_index is None:
        return "all"
    return "below-CTC" if layer <= ctc_layer_index else "above-CTC"


def layer_report(traces: list[AttentionTrace], ctc_layer_index: int | None = None,
                 model_tag: str = "") -> LocalnessReport:
    """Per-layer mean localness over heads, positions and utterances.

    Each utterance contributes the mean over its heads and query positions,
    so long utterances do not dominate.  Layers ``1..ctc_layer_index`` are
    tagged below-CTC and the rest above-CTC.
    """
    if not traces:
        raise ValueError("no traces to report on")
    n_layers = traces[0].n_layers
    sums = np.zeros(n_layers)
    counts = np.zeros(n_layers, dtype=np.int64)
    for trace in traces:
        if trace.n_layers != n_layers:
            raise ValueError("traces disagree on the number of layers")
        for b, L in enumerate(trace.lengths):
            L = int(L)
            if L < 2:
                continue
            w = window_size(L)
            for layer, weights in enumerate(trace.layers):
                sums[layer] += localness(weights[b], L, w).mean()
                counts[layer] += 1
    report = LocalnessReport(model_tag, ctc_layer_index)
    for layer in range(n_layers):
        mean = float(sums[layer] / counts[layer]) if counts[layer] else float("nan")
        report.layers.append(LayerStat(layer + 1, _group(layer + 1, ctc_layer_index), mean, int(counts[layer])))
    return report


def encoder_traces(model, examples: list[Example], batch_frames: int = 4000) -> list[AttentionTrace]:
    """Run the encoder in eval mode and record its self-attention per batch."""
    was_training = model.training
    model.eval()
    traces = []
    try:
        with nx.no_grad():
            for batch in make_batches(examples, batch_frames):
                trace = AttentionTrace()
                enc = encode_batch(model, batch, trace)
                trace.lengths = enc.mask.sum(axis=1).astype(np.int64)
                traces.append(trace)
    finally:
        if was_training:
            model.train()
    return traces


def model_report(model, examples: list[Example], model_tag: str = "") -> LocalnessReport:
    """Localness report of a model's encoder; speech models are grouped around their CTC layer."""
    ctc = None if model.kind == "mt" else model.cfg.ctc_layer_index
    return layer_report(encoder_traces(model, examples), ctc, model_tag or model.kind)


def emit_csv(report: LocalnessReport | list[LocalnessReport], path) -> Path:
    reports = [report] if isinstance(report, LocalnessReport) else list(report)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.writer(fh)
        out.writerow(["model_tag", "layer", "group", "mean_localness", "n_utterances", "window_rule"])
        for r in reports:
            for s in r.layers:
                out.writerow([r.model_tag, s.layer, s.group, f"{s.mean:.6f}", s.n_utterances, r.window_rule])
    return path


def dump_traces(traces: list[AttentionTrace], path, limit: int = 20) -> Path:
    """Write valid-region attention maps in checkpoint format.

    Names are ``utt{k}.layer{i}.head{h}.attn`` (1-based layers); only the
    first ``limit`` utterances are kept.
    """
    state = {}
    k = 0
    for trace in traces:
        for b in range(len(trace.lengths)):
            if k >= limit:
                return save_checkpoint(path, state)
            for layer in range(trace.n_layers):
                for head in range(trace.layers[layer].shape[1]):
                    state[f"utt{k}.layer{layer + 1}.head{head}.attn"] = trace.matrix(layer, head, b)
            k += 1
    return save_checkpoint(path, state)
