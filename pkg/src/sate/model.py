"""Stacked acoustic-and-textual encoding, baselines, objectives and decoding.

Token conventions: CTC class 0 is blank, id 1 is end-of-sentence (also used
as the decoder's start symbol) and ids 2.. are content tokens.  The shared
embedding table ``embed`` has one row per non-blank id, row ``id - 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import ctc as ctc_ops
from . import numerics as nx
from .nn import (
    AttentionTrace,
    ConvFrontend,
    DecoderStack,
    EncoderStack,
    LayerNorm,
    Linear,
    Module,
    ModelConfig,
    key_padding_mask,
    positional_encoding,
)
from .numerics import ContractError, Tensor

EOS = 1
# frames whose blank posterior exceeds this fall back to a uniform soft token
BLANK_FALLBACK = 0.999


class CheckpointIncompatibleError(ValueError):
    pass


def _pos(h: Tensor) -> Tensor:
    return h + Tensor(positional_encoding(h.shape[1], h.shape[2]))


# ---------------------------------------------------------------------------
# Components
# ---------------------------------------------------------------------------


@dataclass
class AcousticOutput:
    hidden: Tensor  # (B, T, d), top layer after the closing norm
    ctc_log_probs: Tensor  # (B, T, |V|+1)
    lengths: np.ndarray
    mask: np.ndarray


@dataclass
class EncoderOutput:
    memory: Tensor
    mask: np.ndarray
    ctc: AcousticOutput | None = None


class AcousticEncoder(Module):
    def __init__(self, cfg: ModelConfig, n_layers: int, rng: np.random.Generator):
        self.frontend = ConvFrontend(cfg.d_feat, cfg.d_model, rng)
        self.encoder = EncoderStack(cfg, n_layers, rng)
        self.ctc_norm = LayerNorm(cfg.d_model)
        self.ctc_proj = Linear(cfg.d_model, cfg.vocab_size, rng)
        self.ctc_layer = cfg.ctc_layer_index
        self.p = cfg.dropout

    def ctc_head(self, h: Tensor) -> Tensor:
        return self.ctc_proj(self.ctc_norm(h))

    def __call__(self, x, x_lens, trace: AttentionTrace | None = None) -> AcousticOutput:
        x = x if isinstance(x, Tensor) else Tensor(x)
        h, lengths = self.frontend(x, x_lens)
        h = self.drop(_pos(h), self.p)
        mask = key_padding_mask(lengths, h.shape[1])
        top, outputs = self.encoder(h, mask, trace)
        log_probs = nx.log_softmax(self.ctc_head(outputs[self.ctc_layer - 1]), axis=-1)
        return AcousticOutput(top, log_probs, lengths, mask)


class TextualEncoder(Module):
    def __init__(self, cfg: ModelConfig, n_layers: int, rng: np.random.Generator):
        self.encoder = EncoderStack(cfg, n_layers, rng)
        self.scale = math.sqrt(cfg.d_model)
        self.p = cfg.dropout

    def __call__(self, inputs: Tensor, mask: np.ndarray, trace: AttentionTrace | None = None) -> Tensor:
        h = self.drop(_pos(nx.scale(inputs, self.scale)), self.p)
        return self.encoder(h, mask, trace)[0]


class Decoder(Module):
    """Causal decoder whose input embedding and output head are the shared table."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.stack = DecoderStack(cfg, rng)
        self.scale = math.sqrt(cfg.d_model)
        self.p = cfg.dropout

    def __call__(self, embed: Tensor, y_in: np.ndarray, y_lens, memory: Tensor, mem_mask: np.ndarray) -> Tensor:
        y_in = np.asarray(y_in)
        e = nx.scale(nx.embed_lookup(embed, np.maximum(y_in - 1, 0)), self.scale)
        h = self.drop(_pos(e), self.p)
        h = self.stack(h, memory, key_padding_mask(y_lens, y_in.shape[1]), mem_mask)
        return h @ embed.transpose()


class Adaptor(Module):
    """Fuses acoustic states with the CTC-expected embedding.

    Variants: ``fusion`` (lam-weighted), ``mapping`` (lam=1), ``soft``
    (lam=0), ``none`` (acoustic states pass through untouched).
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.map = Linear(cfg.d_model, cfg.d_model, rng)
        self.variant = cfg.adaptor
        self.lam = {"fusion": cfg.lam, "mapping": 1.0, "soft": 0.0, "none": None}[cfg.adaptor]

    def soft(self, ctc_log_probs: Tensor, embed: Tensor) -> Tensor:
        return soft_embedding(nx.exp(ctc_log_probs), embed)

    def mapped(self, hidden: Tensor) -> Tensor:
        return nx.relu(self.map(hidden))

    def __call__(self, hidden: Tensor, ctc_log_probs: Tensor, embed: Tensor) -> Tensor:
        lam = self.lam
        if lam is None:
            return hidden
        if lam == 1.0:
            return self.mapped(hidden)
        if lam == 0.0:
            return self.soft(ctc_log_probs, embed)
        return nx.scale(self.mapped(hidden), lam) + nx.scale(self.soft(ctc_log_probs, embed), 1.0 - lam)


def soft_embedding(posteriors: Tensor, embed: Tensor) -> Tensor:
    """Expected embedding under the non-blank part of each frame's CTC posterior.

    The blank column is dropped and the rest renormalized; frames that are
    almost surely blank use the uniform distribution over the vocabulary.
    """
    nonblank = posteriors[..., 1:]
    mass = nonblank.sum(axis=-1, keepdims=True)
    fallback = mass.data < 1.0 - BLANK_FALLBACK
    safe_mass = nx.where(fallback, Tensor(np.ones((), dtype=mass.dtype)), mass)
    dist = nx.where(fallback, Tensor(np.full((), 1.0 / nonblank.shape[-1], dtype=mass.dtype)), nonblank / safe_mass)
    return dist @ embed


def _embedding_table(cfg: ModelConfig, rng: np.random.Generator) -> Tensor:
    return Tensor(rng.normal(0.0, cfg.d_model**-0.5, size=(cfg.n_tokens, cfg.d_model)).astype(np.float32),
                  requires_grad=True)


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


class AsrModel(Module):
    """Acoustic encoder with a CTC head; pre-trained with CTC alone."""

    kind = "asr"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.acoustic = AcousticEncoder(cfg, cfg.n_layers_acoustic, rng)

    def encode(self, x, x_lens, trace=None) -> EncoderOutput:
        ac = self.acoustic(x, x_lens, trace)
        return EncoderOutput(ac.hidden, ac.mask, ac)


class MtModel(Module):
    kind = "mt"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = _embedding_table(cfg, rng)
        self.textual = TextualEncoder(cfg, cfg.n_layers_textual, rng)
        self.decoder = Decoder(cfg, rng)

    def encode(self, src, src_lens, trace=None) -> EncoderOutput:
        src = np.asarray(src)
        mask = key_padding_mask(src_lens, src.shape[1])
        emb = nx.embed_lookup(self.embed, np.maximum(src - 1, 0))
        return EncoderOutput(self.textual(emb, mask, trace), mask)


class E2EModel(Module):
    """Vanilla end-to-end ST: one deep encoder (acoustic + textual depth) with CTC."""

    kind = "e2e_st"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = _embedding_table(cfg, rng)
        self.acoustic = AcousticEncoder(cfg, cfg.n_layers_acoustic + cfg.n_layers_textual, rng)
        self.decoder = Decoder(cfg, rng)

    def encode(self, x, x_lens, trace=None) -> EncoderOutput:
        ac = self.acoustic(x, x_lens, trace)
        return EncoderOutput(ac.hidden, ac.mask, ac)


class SateModel(Module):
    kind = "sate"

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.embed = _embedding_table(cfg, rng)
        self.acoustic = AcousticEncoder(cfg, cfg.n_layers_acoustic, rng)
        self.adaptor = Adaptor(cfg, rng)
        self.textual = TextualEncoder(cfg, cfg.n_layers_textual, rng)
        self.decoder = Decoder(cfg, rng)

    def acoustic_encode(self, x, x_lens, trace=None) -> AcousticOutput:
        return self.acoustic(x, x_lens, trace)

    def adapt(self, ac: AcousticOutput) -> Tensor:
        out = self.adaptor(ac.hidden, ac.ctc_log_probs, self.embed)
        if out.shape[:2] != ac.hidden.shape[:2]:
            raise ContractError("adaptor changed the sequence length")
        return out

    def textual_encode(self, h_hat: Tensor, mask: np.ndarray, trace=None) -> Tensor:
        return self.textual(h_hat, mask, trace)

    def encode(self, x, x_lens, trace=None) -> EncoderOutput:
        ac = self.acoustic_encode(x, x_lens, trace)
        return EncoderOutput(self.textual_encode(self.adapt(ac), ac.mask, trace), ac.mask, ac)


MODEL_KINDS = {"asr": AsrModel, "mt": MtModel, "e2e_st": E2EModel, "sate": SateModel}


def build_model(kind: str, cfg: ModelConfig, seed: int | np.random.Generator = 0) -> Module:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    try:
        return MODEL_KINDS[kind](cfg, rng)
    except KeyError:
        raise ValueError(f"unknown model kind {kind!r}") from None


def build_asr(cfg, seed=0) -> AsrModel:
    return build_model("asr", cfg, seed)


def build_mt(cfg, seed=0) -> MtModel:
    return build_model("mt", cfg, seed)


def build_vanilla_e2e(cfg, seed=0) -> E2EModel:
    return build_model("e2e_st", cfg, seed)


def build_sate(cfg, seed=0) -> SateModel:
    return build_model("sate", cfg, seed)


def is_speech_model(model) -> bool:
    return model.kind in ("asr", "e2e_st", "sate")


def encode_batch(model, batch, trace=None) -> EncoderOutput:
    if model.kind == "mt":
        return model.encode(batch.src, batch.src_lens, trace)
    return model.encode(batch.x, batch.x_lens, trace)


# ---------------------------------------------------------------------------
# Objectives
# ---------------------------------------------------------------------------


@dataclass
class LossOutput:
    total: Tensor
    parts: dict[str, Tensor] = field(default_factory=dict)

    def log_values(self) -> dict[str, float]:
        out = {"loss": self.total.item()}
        out.update({k: v.item() for k, v in self.parts.items()})
        return out


def ctc_term(ac: AcousticOutput, labels) -> Tensor:
    """CTC negative log-likelihood per label token, infeasible utterances excluded."""
    losses, feasible = ctc_ops.ctc_loss_batch(ac.ctc_log_probs, ac.lengths, list(labels))
    n_labels = sum(len(l) for l, ok in zip(labels, feasible) if ok)
    return nx.scale(losses.sum(), 1.0 / max(n_labels, 1))


def translation_logits(model, enc: EncoderOutput, batch) -> Tensor:
    return model.decoder(model.embed, batch.tgt_in, batch.tgt_in_lens, enc.memory, enc.mask)


def _token_rows(batch):
    mask = key_padding_mask(batch.tgt_in_lens, batch.tgt_out.shape[1]).reshape(-1)
    return np.maximum(batch.tgt_out.reshape(-1) - 1, 0), mask.astype(np.float64)


def trans_term(logits: Tensor, batch, eps: float) -> Tensor:
    """Label-smoothed translation cross-entropy per target token (eos included)."""
    target, weights = _token_rows(batch)
    return nx.cross_entropy_with_label_smoothing(logits.reshape(-1, logits.shape[-1]), target, eps, weights)


def soft_cross_entropy(log_probs: Tensor, teacher: np.ndarray, weights: np.ndarray) -> Tensor:
    """-sum_k Q_k log P_k averaged over rows with nonzero weight."""
    per_row = -(log_probs * Tensor(teacher.astype(log_probs.dtype))).sum(axis=-1)
    w = weights.astype(log_probs.dtype)
    return nx.scale((per_row * Tensor(w)).sum(), 1.0 / max(float(w.sum()), 1e-12))


def loss_sate(model, batch, eps: float | None = None) -> LossOutput:
    """alpha * L_CTC + (1 - alpha) * L_Trans (also the ASR / MT objectives).

    ASR models carry only the CTC term and MT models only the translation term.
    """
    cfg = model.cfg
    eps = cfg.label_smoothing if eps is None else eps
    if model.kind == "mt":
        l_trans = trans_term(translation_logits(model, encode_batch(model, batch), batch), batch, eps)
        return LossOutput(l_trans, {"trans": l_trans})
    enc = encode_batch(model, batch)
    l_ctc = ctc_term(enc.ctc, batch.src_list)
    if model.kind == "asr":
        return LossOutput(l_ctc, {"ctc": l_ctc})
    l_trans = trans_term(translation_logits(model, enc, batch), batch, eps)
    total = nx.scale(l_ctc, cfg.alpha) + nx.scale(l_trans, 1.0 - cfg.alpha)
    return LossOutput(total, {"ctc": l_ctc, "trans": l_trans})


@dataclass
class TeacherBundle:
    asr: AsrModel
    mt: MtModel

    def __post_init__(self):
        self.asr.eval().freeze()
        self.mt.eval().freeze()

    def targets(self, batch):
        """Teacher CTC posteriors (B, T, |V|+1) and next-token distributions (B, L, |V|)."""
        with nx.no_grad():
            ac = self.asr.acoustic(batch.x, batch.x_lens)
            enc = self.mt.encode(batch.src, batch.src_lens)
            logits = self.mt.decoder(self.mt.embed, batch.tgt_in, batch.tgt_in_lens, enc.memory, enc.mask)
            probs = nx.softmax(logits, axis=-1)
        return np.exp(ac.ctc_log_probs.data), ac.lengths, probs.data


def loss_mtkd(model, batch, teachers: TeacherBundle, eps: float | None = None) -> LossOutput:
    """Interpolates ground-truth and teacher losses on both the CTC and translation sides."""
    if model.kind not in ("sate", "e2e_st"):
        raise ContractError("distillation needs a speech translation student")
    cfg = model.cfg
    eps = cfg.label_smoothing if eps is None else eps
    q_ctc, q_lens, q_trans = teachers.targets(batch)
    enc = encode_batch(model, batch)
    ac = enc.ctc
    if q_ctc.shape != ac.ctc_log_probs.shape or not np.array_equal(q_lens, ac.lengths):
        raise ContractError(
            f"teacher CTC frames {q_ctc.shape} differ from student frames {ac.ctc_log_probs.shape}"
        )
    logits = translation_logits(model, enc, batch)
    l_ctc = ctc_term(ac, batch.src_list)
    l_trans = trans_term(logits, batch, eps)
    kd_ctc = soft_cross_entropy(ac.ctc_log_probs, q_ctc, ac.mask)
    _, tok_w = _token_rows(batch)
    student_lp = nx.log_softmax(logits, axis=-1).reshape(-1, logits.shape[-1])
    kd_trans = soft_cross_entropy(student_lp, q_trans.reshape(-1, q_trans.shape[-1]), tok_w)
    ctc_side = nx.scale(l_ctc, cfg.beta) + nx.scale(kd_ctc, 1.0 - cfg.beta)
    trans_side = nx.scale(l_trans, cfg.gamma) + nx.scale(kd_trans, 1.0 - cfg.gamma)
    total = nx.scale(ctc_side, cfg.alpha) + nx.scale(trans_side, 1.0 - cfg.alpha)
    return LossOutput(total, {"ctc": l_ctc, "trans": l_trans, "kd_ctc": kd_ctc, "kd_trans": kd_trans})


# ---------------------------------------------------------------------------
# Pre-trained initialization
# ---------------------------------------------------------------------------


def _copy(target: Module, state: Mapping[str, np.ndarray], mapping: dict[str, str]) -> list[str]:
    own = dict(target.named_parameters())
    loaded = []
    for dst, src in mapping.items():
        if src not in state:
            raise CheckpointIncompatibleError(f"checkpoint lacks parameter {src!r}")
        arr = np.asarray(state[src])
        if own[dst].shape != arr.shape:
            raise CheckpointIncompatibleError(
                f"parameter {src!r}: checkpoint shape {arr.shape} != model shape {own[dst].shape}"
            )
        own[dst].data = np.array(arr, dtype=own[dst].dtype)
        loaded.append(dst)
    return loaded


def _prefixed(model: Module, prefixes: tuple[str, ...]) -> dict[str, str]:
    return {n: n for n, _ in model.named_parameters() if n.startswith(prefixes)}


def init_from_pretrained(
    model: Module,
    asr_state: Mapping[str, np.ndarray] | None = None,
    mt_state: Mapping[str, np.ndarray] | None = None,
    asr_encoder: bool = True,
    mt_encoder: bool = True,
    mt_decoder: bool = True,
) -> list[str]:
    """Copy pre-trained ASR / MT parameters into a SATE or vanilla E2E model.

    SATE takes the acoustic encoder and CTC head from ASR, and the textual
    encoder, decoder and embeddings from MT; the adaptor keeps its fresh
    initialization.  A vanilla E2E model takes the ASR layers into the bottom
    of its deep encoder and the MT decoder.  Returns the names loaded.
    """
    loaded: list[str] = []
    if model.kind == "sate":
        if asr_state is not None and asr_encoder:
            loaded += _copy(model, asr_state, _prefixed(model, ("acoustic.",)))
        if mt_state is not None and (mt_encoder or mt_decoder):
            loaded += _copy(model, mt_state, {"embed": "embed"})
            if mt_encoder:
                loaded += _copy(model, mt_state, _prefixed(model, ("textual.",)))
            if mt_decoder:
                loaded += _copy(model, mt_state, _prefixed(model, ("decoder.",)))
    elif model.kind == "e2e_st":
        if asr_state is not None and asr_encoder:
            n_ac = model.cfg.n_layers_acoustic
            keep = ("acoustic.frontend.", "acoustic.ctc_") + tuple(
                f"acoustic.encoder.layers.{i}." for i in range(n_ac)
            )
            loaded += _copy(model, asr_state, _prefixed(model, keep))
        if mt_state is not None and mt_decoder:
            loaded += _copy(model, mt_state, {"embed": "embed"})
            loaded += _copy(model, mt_state, _prefixed(model, ("decoder.",)))
    else:
        raise ContractError(f"cannot initialize a {model.kind} model from pre-trained parts")
    return loaded


# ---------------------------------------------------------------------------
# Decoding
# ---------------------------------------------------------------------------


@dataclass
class Hypothesis:
    tokens: list[int]
    logprob: float
    truncated: bool = False

    @property
    def score(self) -> float:
        """Length-normalized log-probability (the eos step counts toward length)."""
        n = len(self.tokens) + (0 if self.truncated else 1)
        return self.logprob / max(n, 1)


def _next_log_probs(model, memory: np.ndarray, mem_mask: np.ndarray, prefixes: np.ndarray) -> np.ndarray:
    n, t = prefixes.shape
    logits = model.decoder(model.embed, prefixes, np.full(n, t), Tensor(memory), mem_mask)
    return nx.log_softmax(logits[:, t - 1, :], axis=-1).data.astype(np.float64)


def default_max_len(enc: EncoderOutput, cfg: ModelConfig) -> np.ndarray:
    lens = enc.mask.sum(axis=1)
    return np.minimum(2 * lens + 10, cfg.max_seq_len)


def beam_search(model, enc: EncoderOutput, beam_size: int = 4, max_len=None) -> list[Hypothesis]:
    """Batched beam search with a shrinking beam and length-normalized final choice.

    Each step keeps the ``beam_size - finished`` best expansions by raw
    log-probability; hypotheses ending in eos are set aside.  With one beam
    this is exactly greedy decoding.  Hypotheses still open at ``max_len``
    are closed and flagged as truncated.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    was_training = model.training
    model.eval()
    B = enc.memory.shape[0]
    max_len = default_max_len(enc, model.cfg) if max_len is None else np.broadcast_to(np.asarray(max_len), (B,))
    memory = enc.memory.data
    alive: list[list[tuple[list[int], float]]] = [[([EOS], 0.0)] for _ in range(B)]
    finished: list[list[Hypothesis]] = [[] for _ in range(B)]
    step = 0
    with nx.no_grad():
        while any(alive):
            step += 1
            owners, prefixes = [], []
            for b, hyps in enumerate(alive):
                for toks, _ in hyps:
                    owners.append(b)
                    prefixes.append(toks)
            owners_arr = np.array(owners)
            lp = _next_log_probs(model, memory[owners_arr], enc.mask[owners_arr], np.array(prefixes))
            row = 0
            for b, hyps in enumerate(alive):
                if not hyps:
                    continue
                n = len(hyps)
                scores = np.array([s for _, s in hyps])[:, None] + lp[row:row + n]
                row += n
                k = beam_size - len(finished[b])
                flat = np.argsort(-scores.reshape(-1), kind="stable")[:k]
                nxt = []
                for f in flat:
                    h, tok = divmod(int(f), scores.shape[1])
                    toks = hyps[h][0] + [tok + 1]
                    total = float(scores[h, tok])
                    if tok + 1 == EOS:
                        finished[b].append(Hypothesis(toks[1:-1], total))
                    elif step >= max_len[b]:
                        finished[b].append(Hypothesis(toks[1:], total, truncated=True))
                    else:
                        nxt.append((toks, total))
                alive[b] = nxt
    model.train(was_training)
    return [max(f, key=lambda h: h.score) for f in finished]


def greedy_decode(model, enc: EncoderOutput, max_len=None) -> list[Hypothesis]:
    """Argmax decoding, one token at a time, for every utterance in the batch."""
    was_training = model.training
    model.eval()
    B = enc.memory.shape[0]
    max_len = default_max_len(enc, model.cfg) if max_len is None else np.broadcast_to(np.asarray(max_len), (B,))
    prefixes = np.full((B, 1), EOS)
    logprob = np.zeros(B)
    done = np.zeros(B, dtype=bool)
    out: list[Hypothesis | None] = [None] * B
    step = 0
    with nx.no_grad():
        while not done.all():
            step += 1
            live = np.flatnonzero(~done)
            lp = _next_log_probs(model, enc.memory.data[live], enc.mask[live], prefixes[live])
            best = lp.argmax(axis=1)
            col = np.zeros((B, 1), dtype=prefixes.dtype)
            for j, b in enumerate(live):
                logprob[b] += lp[j, best[j]]
                tok = int(best[j]) + 1
                col[b, 0] = tok
                if tok == EOS:
                    out[b] = Hypothesis([int(t) for t in prefixes[b, 1:]], float(logprob[b]))
                    done[b] = True
                elif step >= max_len[b]:
                    out[b] = Hypothesis([int(t) for t in prefixes[b, 1:]] + [tok], float(logprob[b]), truncated=True)
                    done[b] = True
            prefixes = np.concatenate([prefixes, col], axis=1)
    model.train(was_training)
    return out


def translate(model, batch, beam_size: int = 4, max_len=None) -> list[Hypothesis]:
    """Beam search (``beam_size`` >= 1) or greedy decoding (``beam_size`` == 0)."""
    if isinstance(model, Cascade):
        return model.translate(batch, beam_size, max_len)
    was_training = model.training
    model.eval()
    with nx.no_grad():
        enc = encode_batch(model, batch)
    model.train(was_training)
    if beam_size == 0:
        return greedy_decode(model, enc, max_len)
    return beam_search(model, enc, beam_size, max_len)


def transcribe(model, batch) -> list[list[int]]:
    """Greedy CTC transcripts from a model with an acoustic encoder."""
    was_training = model.training
    model.eval()
    with nx.no_grad():
        ac = model.acoustic(batch.x, batch.x_lens)
    model.train(was_training)
    return [ctc_ops.ctc_greedy_decode(ac.ctc_log_probs.data[b], int(ac.lengths[b])) for b in range(len(ac.lengths))]


class Cascade:
    """ASR greedy transcripts fed to the MT model's beam search."""

    kind = "cascade"

    def __init__(self, asr: AsrModel, mt: MtModel):
        self.asr = asr
        self.mt = mt
        self.cfg = mt.cfg

    def translate(self, batch, beam_size: int = 4, max_len=None) -> list[Hypothesis]:
        transcripts = [t or [EOS] for t in transcribe(self.asr, batch)]
        lens = np.array([len(t) for t in transcripts])
        src = np.zeros((len(transcripts), lens.max()), dtype=np.int64)
        for i, t in enumerate(transcripts):
            src[i, : len(t)] = t
        self.mt.eval()
        with nx.no_grad():
            enc = self.mt.encode(src, lens)
        return beam_search(self.mt, enc, beam_size, max_len) if beam_size else greedy_decode(self.mt, enc, max_len)


def build_cascade(asr: AsrModel, mt: MtModel) -> Cascade:
    return Cascade(asr, mt)
