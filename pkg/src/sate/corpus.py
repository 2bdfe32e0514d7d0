"""Synthetic speech-translation triples, batching and feature masking.

Each content token owns a random prototype feature vector; an utterance is
its tokens' prototypes repeated a few frames each, plus Gaussian noise.  The
"translation" maps tokens through a fixed permutation and then reverses
adjacent pairs that start with a trigger token, so the target order depends
on the source content.
"""

from __future__ import annotations

import base64
import hashlib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .ctc import min_frames
from .model import EOS

FIRST_TOKEN = 2
SPLITS = ("train", "dev", "test")


@dataclass
class SynthSpec:
    vocab_size: int = 40  # content tokens, ids 2..vocab_size+1
    min_len: int = 4
    max_len: int = 16
    min_frames: int = 2  # raw frames per token
    max_frames: int = 5
    d_feat: int = 16
    noise: float = 0.1
    frame_slack: float = 1.5  # downsampled frames per CTC-required frame, >= 1
    reorder_window: int = 2
    trigger_rate: float = 0.25
    permute: bool = True
    n_train: int = 8000
    n_dev: int = 500
    n_test: int = 500
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if not 1 <= self.min_frames <= self.max_frames:
            raise ValueError("need 1 <= min_frames <= max_frames")
        if self.frame_slack < 1.0:
            raise ValueError("frame_slack must be >= 1")
        if self.vocab_size < 1 or self.d_feat < 1 or self.noise < 0:
            raise ValueError("vocab_size and d_feat must be positive, noise non-negative")

    @property
    def model_vocab_size(self) -> int:
        """Blank + eos + content tokens."""
        return self.vocab_size + 2

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "SynthSpec":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for line in text.splitlines():
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in types:
                raise ValueError(f"unknown corpus key {key!r}")
            kind = types[key]
            if kind in ("bool", bool):
                kwargs[key] = value.lower() in ("1", "true", "yes")
            elif kind in ("float", float):
                kwargs[key] = float(value)
            else:
                kwargs[key] = int(value)
        return cls(**kwargs)


@dataclass(frozen=True)
class Example:
    src: tuple[int, ...]
    tgt: tuple[int, ...]
    frames: np.ndarray = field(compare=False)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class SynthCorpus:
    spec: SynthSpec
    prototypes: np.ndarray  # prototypes[token_id] -> feature vector
    permutation: np.ndarray  # permutation[token_id] -> target id
    triggers: frozenset
    train: list[Example]
    dev: list[Example]
    test: list[Example]

    def split(self, name: str) -> list[Example]:
        if name not in SPLITS:
            raise KeyError(f"unknown split {name!r}")
        return getattr(self, name)


def translate_tokens(src, permutation, triggers, window: int = 2) -> list[int]:
    """Permute each token, then reverse the ``window``-block opened by each trigger token."""
    src = [int(t) for t in src]
    out = [int(permutation[t]) for t in src]
    if window < 2:
        return out
    i = 0
    while i < len(src) - 1:
        if src[i] in triggers:
            out[i:i + window] = out[i:i + window][::-1]
            i += window
        else:
            i += 1
    return out


def _utterance(src: np.ndarray, spec: SynthSpec, prototypes: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    reps = rng.integers(spec.min_frames, spec.max_frames + 1, size=len(src))
    # silence pads the pauses so ceil(T0/4) >= labels + repeats
    needed = 4 * int(np.ceil(spec.frame_slack * min_frames(src))) - 3
    deficit = max(0, needed - int(reps.sum()))
    gaps = rng.multinomial(deficit, np.full(len(src) + 1, 1.0 / (len(src) + 1)))
    silence = np.zeros(spec.d_feat, dtype=np.float64)
    rows = [silence] * int(gaps[0])
    for tok, r, g in zip(src, reps, gaps[1:]):
        rows.extend([prototypes[tok]] * int(r))
        rows.extend([silence] * int(g))
    clean = np.stack(rows)
    noisy = clean + spec.noise * rng.standard_normal(clean.shape) if spec.noise > 0 else clean
    return noisy.astype(np.float32)


def generate(spec: SynthSpec) -> SynthCorpus:
    """Deterministic corpus for ``spec`` (same seed, same bytes)."""
    rng = np.random.default_rng(spec.seed)
    V = spec.vocab_size
    ids = np.arange(FIRST_TOKEN, FIRST_TOKEN + V)
    prototypes = np.zeros((FIRST_TOKEN + V, spec.d_feat))
    prototypes[FIRST_TOKEN:] = rng.standard_normal((V, spec.d_feat))
    permutation = np.arange(FIRST_TOKEN + V)
    if spec.permute:
        permutation[FIRST_TOKEN:] = rng.permutation(ids)
    triggers = frozenset(int(t) for t in ids[rng.random(V) < spec.trigger_rate]) if spec.reorder_window >= 2 else frozenset()

    splits = {}
    for name, n in zip(SPLITS, (spec.n_train, spec.n_dev, spec.n_test)):
        examples = []
        for _ in range(n):
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            src = rng.integers(FIRST_TOKEN, FIRST_TOKEN + V, size=length)
            frames = _utterance(src, spec, prototypes, rng)
            assert -(-frames.shape[0] // 4) >= min_frames(src), "generated utterance is CTC-infeasible"
            tgt = translate_tokens(src, permutation, triggers, spec.reorder_window)
            examples.append(Example(tuple(int(t) for t in src), tuple(tgt), frames))
        splits[name] = examples
    return SynthCorpus(spec, prototypes.astype(np.float32), permutation, triggers, **splits)


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Batch:
    x: np.ndarray  # (B, T0, d_feat)
    x_lens: np.ndarray
    src: np.ndarray  # (B, Ls), zero-padded
    src_lens: np.ndarray
    tgt: np.ndarray
    tgt_lens: np.ndarray
    tgt_in: np.ndarray  # eos-prefixed decoder input
    tgt_out: np.ndarray  # eos-terminated decoder target
    index: np.ndarray

    @property
    def size(self) -> int:
        return len(self.x_lens)

    @property
    def tgt_in_lens(self) -> np.ndarray:
        return self.tgt_lens + 1

    @property
    def src_list(self) -> list[list[int]]:
        return [self.src[b, : self.src_lens[b]].tolist() for b in range(self.size)]

    @property
    def tgt_list(self) -> list[list[int]]:
        return [self.tgt[b, : self.tgt_lens[b]].tolist() for b in range(self.size)]

    @property
    def x_mask(self) -> np.ndarray:
        return np.arange(self.x.shape[1])[None, :] < self.x_lens[:, None]

    def with_features(self, x: np.ndarray) -> "Batch":
        return Batch(x, self.x_lens, self.src, self.src_lens, self.tgt, self.tgt_lens,
                     self.tgt_in, self.tgt_out, self.index)


def _pad(seqs, dtype, width=None) -> np.ndarray:
    width = max(len(s) for s in seqs) if width is None else width
    out = np.zeros((len(seqs), width), dtype=dtype)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out


def collate(examples: list[Example], index=None) -> Batch:
    x_lens = np.array([e.n_frames for e in examples])
    x = np.zeros((len(examples), x_lens.max(), examples[0].frames.shape[1]), dtype=np.float32)
    for i, e in enumerate(examples):
        x[i, : e.n_frames] = e.frames
    src_lens = np.array([len(e.src) for e in examples])
    tgt_lens = np.array([len(e.tgt) for e in examples])
    width = tgt_lens.max() + 1
    tgt_in = _pad([(EOS,) + e.tgt for e in examples], np.int64, width)
    tgt_out = _pad([e.tgt + (EOS,) for e in examples], np.int64, width)
    index = np.arange(len(examples)) if index is None else np.asarray(index)
    return Batch(x, x_lens, _pad([e.src for e in examples], np.int64), src_lens,
                 _pad([e.tgt for e in examples], np.int64), tgt_lens, tgt_in, tgt_out, index)


def make_batches(examples: list[Example], max_frames: int = 2000,
                 rng: np.random.Generator | None = None) -> list[Batch]:
    """Length-sorted buckets of at most ``max_frames`` padded source frames.

    With ``rng`` the bucket order is shuffled; bucket contents stay fixed.
    """
    order = sorted(range(len(examples)), key=lambda i: (examples[i].n_frames, i))
    groups, current, longest = [], [], 0
    for i in order:
        n = examples[i].n_frames
        if current and max(longest, n) * (len(current) + 1) > max_frames:
            groups.append(current)
            current, longest = [], 0
        current.append(i)
        longest = max(longest, n)
    if current:
        groups.append(current)
    if rng is not None:
        groups = [groups[j] for j in rng.permutation(len(groups))]
    return [collate([examples[i] for i in g], g) for g in groups]


def spec_augment_lite(
    x: np.ndarray,
    rng: np.random.Generator,
    lengths=None,
    n_time_masks: int = 2,
    max_time_width: float = 0.10,
    n_feat_masks: int = 1,
    max_feat_width: float = 0.25,
    max_time_fraction: float = 0.40,
) -> np.ndarray:
    """Zero random time spans and feature channels (train-time only).

    Works on one (T, F) utterance or a padded (B, T, F) batch.  A time mask
    that would push the masked share of an utterance past
    ``max_time_fraction`` is skipped.
    """
    single = x.ndim == 2
    out = np.array(x[None] if single else x, copy=True)
    B, T, F = out.shape
    lengths = np.full(B, T) if lengths is None else np.asarray(lengths)
    for b in range(B):
        n = int(lengths[b])
        masked = np.zeros(n, dtype=bool)
        for _ in range(n_time_masks):
            w = int(rng.integers(0, int(max_time_width * n) + 1))
            if w == 0:
                continue
            start = int(rng.integers(0, n - w + 1))
            trial = masked.copy()
            trial[start:start + w] = True
            if trial.sum() <= max_time_fraction * n:
                masked = trial
        out[b, :n][masked] = 0.0
        for _ in range(n_feat_masks):
            w = int(rng.integers(0, int(max_feat_width * F) + 1))
            start = int(rng.integers(0, F - w + 1))
            out[b, :n, start:start + w] = 0.0
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _encode_line(e: Example) -> str:
    payload = base64.b64encode(e.frames.astype("<f4").tobytes()).decode("ascii")
    return f"{' '.join(map(str, e.src))}\t{' '.join(map(str, e.tgt))}\t{payload}\n"


def _decode_line(line: str, d_feat: int) -> Example:
    src, tgt, payload = line.rstrip("\n").split("\t")
    frames = np.frombuffer(base64.b64decode(payload), dtype="<f4").astype(np.float32)
    return Example(tuple(int(t) for t in src.split()), tuple(int(t) for t in tgt.split()),
                   frames.reshape(-1, d_feat))


def write_split(path, examples: list[Example]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for e in examples:
            fh.write(_encode_line(e))


def read_split(path, d_feat: int) -> list[Example]:
    with open(path, encoding="utf-8") as fh:
        return [_decode_line(line, d_feat) for line in fh if line.strip()]


def save_corpus(corpus: SynthCorpus, directory) -> Path:
    """Write ``{train,dev,test}.tsv`` plus ``spec.txt`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "spec.txt").write_text(corpus.spec.to_text(), encoding="utf-8")
    for name in SPLITS:
        write_split(directory / f"{name}.tsv", corpus.split(name))
    return directory


def load_corpus(directory) -> tuple[SynthSpec, dict[str, list[Example]]]:
    directory = Path(directory)
    spec = SynthSpec.from_text((directory / "spec.txt").read_text(encoding="utf-8"))
    return spec, {name: read_split(directory / f"{name}.tsv", spec.d_feat) for name in SPLITS}


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def dataset_hash(directory) -> str:
    """Hash over the per-file blob hashes of the spec and split files."""
    directory = Path(directory)
    parts = []
    for name in ["spec.txt"] + [f"{s}.tsv" for s in SPLITS]:
        parts.append(f"{git_blob_hash((directory / name).read_bytes())} {name}\n")
    return git_blob_hash("".join(parts).encode())


def corpus_hash(corpus: SynthCorpus) -> str:
    """Same scheme as :func:`dataset_hash`, computed without touching disk."""
    parts = [f"{git_blob_hash(corpus.spec.to_text().encode())} spec.txt\n"]
    for name in SPLITS:
        blob = "".join(_encode_line(e) for e in corpus.split(name)).encode()
        parts.append(f"{git_blob_hash(blob)} {name}.tsv\n")
    return git_blob_hash("".join(parts).encode())
