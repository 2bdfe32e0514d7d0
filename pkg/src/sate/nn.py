"""Transformer blocks and the strided convolution frontend."""

from __future__ import annotations

import functools
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numerics as nx
from .numerics import DimensionError, Tensor

MASK_BIAS = -1e9


class ConfigError(ValueError):
    pass


class InputTooShortError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    d_ffn: int = 256
    n_layers_acoustic: int = 6
    n_layers_textual: int = 3
    n_layers_decoder: int = 3
    # |V| + 1: blank (0), eos (1), content tokens
    vocab_size: int = 42
    d_feat: int = 16
    dropout: float = 0.1
    label_smoothing: float = 0.1
    alpha: float = 0.3
    lam: float = 0.5
    beta: float = 0.5
    gamma: float = 0.5
    ctc_layer_index: int | None = None
    adaptor: str = "fusion"
    max_seq_len: int = 512

    def __post_init__(self):
        if self.ctc_layer_index is None:
            self.ctc_layer_index = self.n_layers_acoustic
        self.validate()

    def validate(self) -> None:
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        for name in ("alpha", "lam", "beta", "gamma"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name}={v} outside [0, 1]")
        if not 1 <= self.ctc_layer_index <= self.n_layers_acoustic:
            raise ConfigError(
                f"ctc_layer_index={self.ctc_layer_index} outside [1, {self.n_layers_acoustic}]"
            )
        if not 0.0 <= self.dropout < 1.0 or not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("dropout and label_smoothing must lie in [0, 1)")
        if self.adaptor not in ("none", "soft", "mapping", "fusion"):
            raise ConfigError(f"unknown adaptor variant {self.adaptor!r}")
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover blank, eos and at least one token")

    @property
    def n_tokens(self) -> int:
        """|V|: decoder vocabulary (eos + content), i.e. rows of the embedding table."""
        return self.vocab_size - 1

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name: f for f in fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k in names:
                kwargs[k] = v
        return cls(**kwargs)


@dataclass
class AttentionTrace:
    """Attention weights recorded per layer as (B, H, Lq, Lk) arrays."""

    layers: list[np.ndarray] = field(default_factory=list)
    lengths: np.ndarray | None = None

    def append(self, weights: np.ndarray) -> None:
        self.layers.append(weights)

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    def matrix(self, layer: int, head: int, item: int) -> np.ndarray:
        """Valid-region attention matrix of one utterance."""
        n = int(self.lengths[item])
        return self.layers[layer][item, head, :n, :n]


# ---------------------------------------------------------------------------
# Module plumbing
# ---------------------------------------------------------------------------


class Module:
    training = True
    drop_rng: np.random.Generator | None = None

    def children(self):
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)):
                for i, v in enumerate(value):
                    if isinstance(v, Module):
                        yield f"{name}.{i}", v

    def modules(self):
        yield self
        for _, child in self.children():
            yield from child.modules()

    def named_parameters(self, prefix: str = ""):
        seen: set[int] = set()
        yield from self._named_parameters(prefix, seen)

    def _named_parameters(self, prefix, seen):
        for name, value in vars(self).items():
            if isinstance(value, Tensor) and id(value) not in seen:
                seen.add(id(value))
                yield prefix + name, value
        for name, child in self.children():
            yield from child._named_parameters(f"{prefix}{name}.", seen)

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        own = dict(self.named_parameters())
        if strict:
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            if missing or extra:
                raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={extra[:5]}")
        for k, arr in state.items():
            if k not in own:
                continue
            if own[k].shape != tuple(arr.shape):
                raise DimensionError(f"{k}: expected {own[k].shape}, got {tuple(arr.shape)}")
            own[k].data = np.array(arr, dtype=own[k].dtype)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True):
        for m in self.modules():
            m.training = mode
        return self

    def eval(self):
        return self.train(False)

    def freeze(self):
        for p in self.parameters():
            p.requires_grad = False
        return self

    def to_dtype(self, dtype):
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def set_dropout_rng(self, rng: np.random.Generator | None):
        for m in self.modules():
            m.drop_rng = rng
        return self

    def drop(self, x: Tensor, p: float) -> Tensor:
        return nx.dropout(x, p, self.drop_rng, self.training)


def _param(arr: np.ndarray) -> Tensor:
    return Tensor(arr.astype(np.float32), requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator, bias: bool = True):
        bound = math.sqrt(6.0 / (d_in + d_out))
        self.weight = _param(rng.uniform(-bound, bound, size=(d_in, d_out)))
        self.bias = _param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        return y if self.bias is None else y + self.bias


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        self.weight = _param(np.ones(d))
        self.bias = _param(np.zeros(d))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return nx.layer_norm(x, self.weight, self.bias, self.eps)


@functools.lru_cache(maxsize=64)
def _pe_table(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length, dtype=np.float64)[:, None]
    rate = np.exp(-math.log(10000.0) * np.arange(0, d_model, 2, dtype=np.float64) / d_model)
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(pos * rate)
    table[:, 1::2] = np.cos(pos * rate)[:, : d_model // 2]
    table = table.astype(np.float32)
    table.flags.writeable = False
    return table


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal position table of shape (length, d_model)."""
    return _pe_table(int(length), int(d_model))


def key_padding_mask(lengths, max_len: int) -> np.ndarray:
    """(B, L) boolean, True at valid positions."""
    return np.arange(max_len)[None, :] < np.asarray(lengths)[:, None]


def _attention_bias(key_mask: np.ndarray, lq: int, causal: bool, dtype) -> np.ndarray:
    bias = np.where(key_mask[:, None, None, :], 0.0, MASK_BIAS)
    if causal:
        lk = key_mask.shape[1]
        future = np.triu(np.ones((lq, lk), dtype=bool), k=1)
        bias = bias + np.where(future, MASK_BIAS, 0.0)[None, None]
    return bias.astype(dtype)


# ---------------------------------------------------------------------------
# Layers
# ---------------------------------------------------------------------------


class MultiHeadAttention(Module):
    def __init__(self, d_model: int, n_heads: int, rng: np.random.Generator):
        if d_model % n_heads:
            raise DimensionError(f"d_model={d_model} not divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.q = Linear(d_model, d_model, rng)
        self.k = Linear(d_model, d_model, rng)
        self.v = Linear(d_model, d_model, rng)
        self.o = Linear(d_model, d_model, rng)

    def __call__(self, query: Tensor, memory: Tensor, key_mask: np.ndarray,
                 causal: bool = False, trace: AttentionTrace | None = None) -> Tensor:
        B, Lq, d = query.shape
        Lk = memory.shape[1]
        key_mask = np.asarray(key_mask, dtype=bool)
        if memory.shape[0] != B or key_mask.shape != (B, Lk):
            raise DimensionError(f"key mask {key_mask.shape} does not match memory {memory.shape[:2]}")
        H, dk = self.n_heads, d // self.n_heads
        q = self.q(query).reshape(B, Lq, H, dk).transpose(0, 2, 1, 3)
        k = self.k(memory).reshape(B, Lk, H, dk).transpose(0, 2, 3, 1)
        v = self.v(memory).reshape(B, Lk, H, dk).transpose(0, 2, 1, 3)
        scores = nx.scale(q @ k, 1.0 / math.sqrt(dk))
        scores = scores + Tensor(_attention_bias(key_mask, Lq, causal, scores.dtype))
        weights = nx.softmax(scores, axis=-1)
        if trace is not None:
            trace.append(weights.data.copy())
        ctx = (weights @ v).transpose(0, 2, 1, 3).reshape(B, Lq, d)
        return self.o(ctx)


class FeedForward(Module):
    def __init__(self, d_model: int, d_ffn: int, rng: np.random.Generator, dropout: float):
        self.w1 = Linear(d_model, d_ffn, rng)
        self.w2 = Linear(d_ffn, d_model, rng)
        self.p = dropout

    def __call__(self, x: Tensor) -> Tensor:
        return self.w2(self.drop(nx.relu(self.w1(x)), self.p))


class EncoderLayer(Module):
    """Pre-norm self-attention + feed-forward, each wrapped in a residual."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, rng, cfg.dropout)
        self.p = cfg.dropout

    def __call__(self, h: Tensor, mask: np.ndarray, trace: AttentionTrace | None = None) -> Tensor:
        z = self.norm1(h)
        h = h + self.drop(self.attn(z, z, mask, trace=trace), self.p)
        return h + self.drop(self.ffn(self.norm2(h)), self.p)


class DecoderLayer(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.norm1 = LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm2 = LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, rng)
        self.norm3 = LayerNorm(cfg.d_model)
        self.ffn = FeedForward(cfg.d_model, cfg.d_ffn, rng, cfg.dropout)
        self.p = cfg.dropout

    def __call__(self, y: Tensor, memory: Tensor, self_mask: np.ndarray, cross_mask: np.ndarray) -> Tensor:
        z = self.norm1(y)
        y = y + self.drop(self.self_attn(z, z, self_mask, causal=True), self.p)
        y = y + self.drop(self.cross_attn(self.norm2(y), memory, cross_mask), self.p)
        return y + self.drop(self.ffn(self.norm3(y)), self.p)


class EncoderStack(Module):
    """Layers plus a closing layer norm; also exposes every layer's raw output."""

    def __init__(self, cfg: ModelConfig, n_layers: int, rng: np.random.Generator):
        self.layers = [EncoderLayer(cfg, rng) for _ in range(n_layers)]
        self.norm = LayerNorm(cfg.d_model)

    def __call__(self, h: Tensor, mask: np.ndarray, trace: AttentionTrace | None = None):
        outputs = []
        for layer in self.layers:
            h = layer(h, mask, trace)
            outputs.append(h)
        return self.norm(h), outputs


class DecoderStack(Module):
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.layers = [DecoderLayer(cfg, rng) for _ in range(cfg.n_layers_decoder)]
        self.norm = LayerNorm(cfg.d_model)

    def __call__(self, y: Tensor, memory: Tensor, self_mask, cross_mask) -> Tensor:
        for layer in self.layers:
            y = layer(y, memory, self_mask, cross_mask)
        return self.norm(y)


def conv_output_length(n):
    """Frames left after two stride-2 stages: ceil(ceil(n/2)/2)."""
    n = np.asarray(n)
    return -(-(-(-n // 2)) // 2)


class Conv1d(Module):
    """Kernel-3, stride-2 convolution over time with per-utterance edge replication."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, kernel: int = 3, stride: int = 2):
        self.kernel, self.stride = kernel, stride
        bound = math.sqrt(6.0 / (kernel * c_in + c_out))
        self.weight = _param(rng.uniform(-bound, bound, size=(kernel * c_in, c_out)))
        self.bias = _param(np.zeros(c_out))

    def __call__(self, x: Tensor, lengths: np.ndarray):
        B, T, C = x.shape
        lengths = np.asarray(lengths)
        t_out = -(-T // self.stride)
        out_lengths = -(-lengths // self.stride)
        offsets = np.arange(self.kernel) - (self.kernel - 1) // 2
        src = self.stride * np.arange(t_out)[:, None] + offsets[None, :]
        idx = np.clip(src[None], 0, np.maximum(lengths - 1, 0)[:, None, None])
        cols = x[np.arange(B)[:, None, None], idx]  # (B, t_out, kernel, C)
        y = cols.reshape(B, t_out, self.kernel * C) @ self.weight + self.bias
        return y, out_lengths


class ConvFrontend(Module):
    """Two stride-2 convolutions with ReLU, then a projection to d_model: x4 downsampling."""

    def __init__(self, d_feat: int, d_model: int, rng: np.random.Generator):
        self.conv1 = Conv1d(d_feat, d_model, rng)
        self.conv2 = Conv1d(d_model, d_model, rng)
        self.proj = Linear(d_model, d_model, rng)

    def __call__(self, x: Tensor, lengths=None):
        B, T, _ = x.shape
        lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
        if T < 4 or lengths.min() < 4:
            raise InputTooShortError(f"need at least 4 input frames, got {int(lengths.min())}")
        h, lengths = self.conv1(x, lengths)
        h = nx.relu(h)
        h, lengths = self.conv2(h, lengths)
        h = nx.relu(h)
        return self.proj(h), lengths


def conv_frontend(frontend: ConvFrontend, x) -> Tensor:
    """Run a frontend on one (T0, d_feat) feature sequence."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float32))
    out, _ = frontend(x.reshape(1, *x.shape))
    return out.reshape(out.shape[1:])
