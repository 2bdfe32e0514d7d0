"""Experiment orchestration: pre-training, the model-ordering runs, sweeps and ablations.

Every run lives in its own directory with a ``manifest.txt`` (resolved
configuration plus the dataset content hash).  Training is deterministic, so
a run whose directory already holds ``average.ckpt`` and an identical
manifest is reused instead of retrained.
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .analysis import emit_csv, model_report
from .checkpoint import load_checkpoint
from .config import format_kv, parse_kv
from .corpus import Example, SynthSpec, corpus_hash, generate
from .model import Cascade, build_model
from .nn import ModelConfig
from .train import ExperimentRecipe, TrainConfig, evaluate, resolve_model_config, train

log = logging.getLogger(__name__)

CASCADE_NOTE = "cascade decoding: ASR greedy CTC transcript -> MT beam search"


def desk_spec(seed: int = 0) -> SynthSpec:
    """Corpus used by the acceptance experiments: half the default train split."""
    return SynthSpec(n_train=4000, n_dev=200, n_test=200, seed=seed)


@dataclass
class Budget:
    asr_pretrain_steps: int = 1000
    mt_pretrain_steps: int = 3000
    st_steps: int = 1500
    sweep_steps: int = 1500
    eval_interval: int = 100
    dev_subset: int = 100
    beam: int = 4
    analysis_utterances: int = 200

    def train_config(self, seed: int, steps: int) -> TrainConfig:
        return TrainConfig(seed=seed, epochs=10_000, max_steps=steps, eval_interval=self.eval_interval,
                           dev_subset=self.dev_subset)


def write_manifest(path, values: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_kv(values), encoding="utf-8")
    return path


def read_manifest(path) -> dict[str, str]:
    return parse_kv(Path(path).read_text(encoding="utf-8"))


def manifest_values(recipe: ExperimentRecipe, train_cfg: TrainConfig, model_cfg: ModelConfig,
                    data_hash: str, **extra) -> dict:
    values = {"dataset_hash": data_hash}
    values.update({f"recipe.{k}": v for k, v in asdict(recipe).items()})
    values.update({f"train.{k}": v for k, v in asdict(train_cfg).items()})
    values.update({f"model.{k}": v for k, v in resolve_model_config(recipe, model_cfg).to_dict().items()})
    values.update(extra)
    return values


@dataclass
class Lab:
    """A results directory bound to one dataset and one model configuration."""

    root: Path
    data: dict[str, list[Example]]
    data_hash: str
    model_cfg: ModelConfig = field(default_factory=ModelConfig)
    budget: Budget = field(default_factory=Budget)

    @classmethod
    def from_spec(cls, root, spec: SynthSpec, budget: Budget | None = None, model_cfg: ModelConfig | None = None):
        corpus = generate(spec)
        data = {"train": corpus.train, "dev": corpus.dev, "test": corpus.test}
        cfg = model_cfg or ModelConfig(vocab_size=spec.model_vocab_size, d_feat=spec.d_feat)
        return cls(Path(root), data, corpus_hash(corpus), cfg, budget or Budget())

    def run(self, name: str, recipe: ExperimentRecipe, seed: int, steps: int) -> Path:
        """Train (or reuse) one model; returns its averaged checkpoint."""
        out = self.root / name
        train_cfg = self.budget.train_config(seed, steps)
        manifest = {k: ("" if v is None else str(v))
                    for k, v in manifest_values(recipe, train_cfg, self.model_cfg, self.data_hash).items()}
        ckpt = out / "average.ckpt"
        if ckpt.exists() and (out / "manifest.txt").exists() and read_manifest(out / "manifest.txt") == manifest:
            log.info("reusing %s", out)
            return ckpt
        log.info("training %s", out)
        start = time.process_time()
        train(recipe, train_cfg, self.model_cfg, self.data, out)
        (out / "cpu_seconds.txt").write_text(f"{time.process_time() - start:.1f}\n", encoding="utf-8")
        write_manifest(out / "manifest.txt", manifest)
        return ckpt

    def cpu_seconds(self, name: str) -> float:
        """CPU time the run took when it was trained (nan if unknown)."""
        path = self.root / name / "cpu_seconds.txt"
        return float(path.read_text()) if path.exists() else float("nan")

    def load(self, kind: str, ckpt, recipe: ExperimentRecipe | None = None):
        cfg = resolve_model_config(recipe, self.model_cfg) if recipe else self.model_cfg
        model = build_model(kind, cfg, 0)
        model.load_state_dict(load_checkpoint(ckpt))
        return model.eval()

    def score(self, model, split: str = "test") -> dict:
        return evaluate(model, self.data[split], self.budget.beam)

    def analysis_slice(self) -> list[Example]:
        return self.data["dev"][: self.budget.analysis_utterances]

    # -- building blocks -------------------------------------------------

    def pretrain(self, seed: int) -> tuple[Path, Path]:
        b = self.budget
        asr = self.run(f"seed{seed}/asr", ExperimentRecipe(model="asr", tag="asr"), seed, b.asr_pretrain_steps)
        mt = self.run(f"seed{seed}/mt", ExperimentRecipe(model="mt", tag="mt"), seed, b.mt_pretrain_steps)
        return asr, mt

    def st_recipes(self, asr: Path, mt: Path) -> dict[str, ExperimentRecipe]:
        both = dict(init="both", asr_ckpt=str(asr), mt_ckpt=str(mt))
        return {
            "e2e_pretrained": ExperimentRecipe(model="e2e_st", tag="e2e_pretrained", **both),
            "sate_random": ExperimentRecipe(model="sate", tag="sate_random"),
            "sate_pretrained": ExperimentRecipe(model="sate", tag="sate_pretrained", **both),
            "sate_mtkd": ExperimentRecipe(model="sate", loss="mtkd", tag="sate_mtkd", **both),
        }


def run_ordering(lab: Lab, seed: int, include_cascade: bool = True) -> dict[str, float]:
    """Test BLEU for the model-ordering comparison at one training seed."""
    asr, mt = lab.pretrain(seed)
    results = {}
    for name, recipe in lab.st_recipes(asr, mt).items():
        ckpt = lab.run(f"seed{seed}/{name}", recipe, seed, lab.budget.st_steps)
        results[name] = lab.score(lab.load(recipe.model, ckpt, recipe))["bleu"]
    asr_model, mt_model = lab.load("asr", asr), lab.load("mt", mt)
    results["asr_wer"] = lab.score(asr_model)["wer"]
    results["mt_bleu"] = lab.score(mt_model)["bleu"]
    if include_cascade:
        results["cascade"] = lab.score(Cascade(asr_model, mt_model))["bleu"]
    return results


def run_localness_asr_vs_mt(lab: Lab, seed: int, csv_path=None) -> dict[str, float]:
    """Mean encoder localness of the pre-trained ASR and MT models on one held-out slice."""
    asr, mt = lab.pretrain(seed)
    examples = lab.analysis_slice()
    reports = [model_report(lab.load("asr", asr), examples, f"asr_seed{seed}"),
               model_report(lab.load("mt", mt), examples, f"mt_seed{seed}")]
    if csv_path:
        emit_csv(reports, csv_path)
    return {"asr": reports[0].overall, "mt": reports[1].overall}


SWEEP_FIELDS = ["seed", "ctc_layer", "model", "below_ctc", "above_ctc", "dev_bleu", "dev_wer"]


def run_ctc_position_sweep(lab: Lab, layers: list[int], seed: int, csv_path=None) -> list[dict]:
    """Train a vanilla E2E ST model and an ASR model per CTC position.

    Records encoder localness below and above the CTC layer, dev BLEU of the
    ST model and dev WER of the ASR model.
    """
    rows = []
    examples = lab.analysis_slice()
    steps = lab.budget.sweep_steps
    for layer in layers:
        e2e_recipe = ExperimentRecipe(model="e2e_st", ctc_layer_index=layer, tag=f"e2e_ctc{layer}")
        asr_recipe = ExperimentRecipe(model="asr", ctc_layer_index=layer, tag=f"asr_ctc{layer}")
        e2e = lab.load("e2e_st", lab.run(f"seed{seed}/sweep/e2e_ctc{layer}", e2e_recipe, seed, steps), e2e_recipe)
        asr = lab.load("asr", lab.run(f"seed{seed}/sweep/asr_ctc{layer}", asr_recipe, seed, steps), asr_recipe)
        rep = model_report(e2e, examples, f"e2e_ctc{layer}_seed{seed}")
        asr_rep = model_report(asr, examples, f"asr_ctc{layer}_seed{seed}")
        dev_bleu = evaluate(e2e, lab.data["dev"], lab.budget.beam)["bleu"]
        dev_wer = evaluate(asr, lab.data["dev"], lab.budget.beam)["wer"]
        rows.append(dict(seed=seed, ctc_layer=layer, model="e2e_st", below_ctc=rep.below, above_ctc=rep.above,
                         dev_bleu=dev_bleu, dev_wer=""))
        rows.append(dict(seed=seed, ctc_layer=layer, model="asr", below_ctc=asr_rep.below, above_ctc=asr_rep.above,
                         dev_bleu="", dev_wer=dev_wer))
        if csv_path:
            emit_csv([rep, asr_rep], Path(csv_path).with_name(f"localness_seed{seed}_ctc{layer}.csv"))
    if csv_path:
        write_rows(csv_path, rows, SWEEP_FIELDS)
    return rows


def write_rows(path, rows: list[dict], fieldnames: list[str]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        out = csv.DictWriter(fh, fieldnames=fieldnames)
        out.writeheader()
        for row in rows:
            out.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return path


PRETRAIN_ABLATIONS = {
    # name: (asr encoder, mt encoder, mt decoder)
    "none": (False, False, False),
    "asr_encoder": (True, False, False),
    "mt_encoder": (False, True, False),
    "mt_decoder": (False, False, True),
    "mt_encoder_decoder": (False, True, True),
    "all": (True, True, True),
}


def ablate_pretrain(lab: Lab, seed: int, csv_path=None) -> list[dict]:
    """SATE test BLEU when loading only some pre-trained modules."""
    asr, mt = lab.pretrain(seed)
    rows = []
    for name, (a, e, d) in PRETRAIN_ABLATIONS.items():
        init = "none" if not (a or e or d) else "both"
        recipe = ExperimentRecipe(model="sate", init=init, asr_ckpt=str(asr), mt_ckpt=str(mt),
                                  load_asr_encoder=a, load_mt_encoder=e, load_mt_decoder=d, tag=f"pre_{name}")
        ckpt = lab.run(f"seed{seed}/ablate_pretrain/{name}", recipe, seed, lab.budget.st_steps)
        rows.append({"seed": seed, "modules": name, "test_bleu": lab.score(lab.load("sate", ckpt, recipe))["bleu"]})
    if csv_path:
        write_rows(csv_path, rows, ["seed", "modules", "test_bleu"])
    return rows


def ablate_adaptor(lab: Lab, seed: int, variants=("none", "soft", "mapping", "fusion"), csv_path=None) -> list[dict]:
    """Pre-trained SATE test BLEU per adaptor variant."""
    asr, mt = lab.pretrain(seed)
    rows = []
    for variant in variants:
        recipe = ExperimentRecipe(model="sate", init="both", asr_ckpt=str(asr), mt_ckpt=str(mt),
                                  adaptor=variant, tag=f"adaptor_{variant}")
        ckpt = lab.run(f"seed{seed}/ablate_adaptor/{variant}", recipe, seed, lab.budget.st_steps)
        rows.append({"seed": seed, "adaptor": variant, "test_bleu": lab.score(lab.load("sate", ckpt, recipe))["bleu"]})
    if csv_path:
        write_rows(csv_path, rows, ["seed", "adaptor", "test_bleu"])
    return rows
