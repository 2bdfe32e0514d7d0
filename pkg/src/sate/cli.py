"""Command-line entry point: ``sate <command> [options]``.

Configuration comes from an optional ``--config`` file of ``key=value``
lines, then ``--set key=value`` overrides, then the dedicated flags.  Keys
are namespaced: ``data.*`` (SynthSpec), ``model.*`` (ModelConfig),
``train.*`` (TrainConfig), ``recipe.*`` (ExperimentRecipe) and
``budget.*`` (experiment step budgets).

Exit codes: 0 success, 2 configuration error, 3 training divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

from . import experiments as ex
from .analysis import dump_traces, emit_csv, encoder_traces, layer_report
from .checkpoint import CheckpointError, average_checkpoints, save_checkpoint
from .config import apply, read_kv, unknown_keys
from .corpus import SynthSpec, dataset_hash, generate, load_corpus, save_corpus
from .model import Cascade, CheckpointIncompatibleError
from .nn import ConfigError, ModelConfig
from .train import DivergenceError, ExperimentRecipe, TrainConfig, evaluate, load_model, train

log = logging.getLogger("sate")

SECTIONS = {"data": SynthSpec, "model": ModelConfig, "train": TrainConfig, "recipe": ExperimentRecipe,
            "budget": ex.Budget}

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


# ---------------------------------------------------------------------------
# Config resolution
# ---------------------------------------------------------------------------


def _parse_set(items: list[str]) -> dict[str, str]:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def gather(args, flags: dict[str, object] | None = None) -> dict[str, dict[str, str]]:
    """Merge config file, ``--set`` and flag values into per-section dicts."""
    values: dict[str, str] = {}
    if getattr(args, "config", None):
        values.update(read_kv(args.config))
    values.update(_parse_set(getattr(args, "set", None)))
    for k, v in (flags or {}).items():
        if v is not None:
            values[k] = str(v)
    sections: dict[str, dict[str, str]] = {name: {} for name in SECTIONS}
    for key, value in values.items():
        prefix, _, name = key.partition(".")
        if prefix not in SECTIONS or not name:
            raise ConfigError(f"unknown config key {key!r} (expected one of {', '.join(s + '.*' for s in SECTIONS)})")
        sections[prefix][name] = value
    for prefix, cls in SECTIONS.items():
        bad = unknown_keys(sections[prefix], cls)
        if bad:
            raise ConfigError(f"unknown {prefix} keys: {', '.join(bad)}")
    return sections


def _load_data(directory):
    directory = Path(directory)
    if not (directory / "spec.txt").exists():
        raise ConfigError(f"{directory} is not a corpus directory (run gen-data first)")
    spec, splits = load_corpus(directory)
    return spec, splits, dataset_hash(directory)


def _model_config(section: dict[str, str], spec: SynthSpec) -> ModelConfig:
    values = {"vocab_size": str(spec.model_vocab_size), "d_feat": str(spec.d_feat), **section}
    return apply(ModelConfig, values)


def _manifest_model_config(ckpt) -> tuple[ModelConfig, dict[str, str]]:
    path = Path(ckpt).parent / "manifest.txt"
    if not path.exists():
        raise ConfigError(f"no manifest.txt next to {ckpt}; pass --kind and --config instead")
    values = ex.read_manifest(path)
    model = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("model.")}
    recipe = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("recipe.")}
    return apply(ModelConfig, model), recipe


def _lab(args, sections) -> ex.Lab:
    spec, splits, data_hash = _load_data(args.data)
    budget = apply(ex.Budget, sections["budget"])
    return ex.Lab(Path(args.out), splits, data_hash, _model_config(sections["model"], spec), budget)


def _dump(obj, out=None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=str)
    print(text)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_gen_data(args) -> int:
    sections = gather(args, {"data.seed": args.seed})
    spec = apply(SynthSpec, sections["data"])
    out = Path(args.out)
    save_corpus(generate(spec), out)
    digest = dataset_hash(out)
    ex.write_manifest(out / "manifest.txt", {**{f"data.{k}": v for k, v in asdict(spec).items()},
                                             "dataset_hash": digest})
    print(f"wrote {out} dataset_hash={digest}")
    return EXIT_OK


def cmd_train(args) -> int:
    flags = {
        "train.seed": args.seed, "train.max_steps": args.steps, "recipe.model": args.model,
        "recipe.init": args.init, "recipe.loss": args.loss, "recipe.adaptor": args.adaptor,
        "recipe.asr_ckpt": args.asr_ckpt, "recipe.mt_ckpt": args.mt_ckpt,
        "recipe.ctc_layer_index": args.ctc_layer,
    }
    sections = gather(args, flags)
    spec, splits, data_hash = _load_data(args.data)
    recipe = apply(ExperimentRecipe, sections["recipe"])
    train_cfg = apply(TrainConfig, sections["train"])
    model_cfg = _model_config(sections["model"], spec)
    out = Path(args.out)
    manifest = ex.manifest_values(recipe, train_cfg, model_cfg, data_hash, data_dir=str(Path(args.data).resolve()))
    ex.write_manifest(out / "manifest.txt", manifest)
    result = train(recipe, train_cfg, model_cfg, splits, out)
    print(f"wrote {result.checkpoint} after {result.steps} steps")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    spec, splits, data_hash = _load_data(args.data)
    if args.kind == "cascade":
        if not (args.asr_ckpt and args.mt_ckpt):
            raise ConfigError("cascade evaluation needs --asr-ckpt and --mt-ckpt")
        if args.config or args.set:
            cfg = _model_config(gather(args)["model"], spec)
        else:
            cfg, _ = _manifest_model_config(args.mt_ckpt)
        model = Cascade(load_model("asr", cfg, args.asr_ckpt), load_model("mt", cfg, args.mt_ckpt))
        source = {"asr_ckpt": args.asr_ckpt, "mt_ckpt": args.mt_ckpt}
    else:
        if not args.ckpt:
            raise ConfigError("--ckpt is required")
        if args.config or args.set:
            cfg, kind = _model_config(gather(args)["model"], spec), args.kind
        else:
            cfg, recipe = _manifest_model_config(args.ckpt)
            kind = args.kind or recipe.get("model")
        if not kind:
            raise ConfigError("cannot tell the model kind; pass --kind")
        model = load_model(kind, cfg, args.ckpt)
        source = {"ckpt": args.ckpt, "kind": kind}
    metrics = evaluate(model, splits[args.split], args.beam)
    _dump({**source, "split": args.split, "beam": args.beam, "dataset_hash": data_hash, **metrics}, args.out)
    return EXIT_OK


def cmd_average(args) -> int:
    path = save_checkpoint(args.out, average_checkpoints(args.ckpts))
    print(f"wrote {path} (mean of {len(args.ckpts)})")
    return EXIT_OK


def cmd_localness(args) -> int:
    spec, splits, _ = _load_data(args.data)
    if args.config or args.set:
        cfg, kind = _model_config(gather(args)["model"], spec), args.kind
    else:
        cfg, recipe = _manifest_model_config(args.ckpt)
        kind = args.kind or recipe.get("model")
    if not kind:
        raise ConfigError("cannot tell the model kind; pass --kind")
    model = load_model(kind, cfg, args.ckpt)
    examples = splits[args.split][: args.n]
    traces = encoder_traces(model, examples)
    ctc = None if kind == "mt" else cfg.ctc_layer_index
    report = layer_report(traces, ctc, args.tag or kind)
    emit_csv(report, args.csv)
    if args.dump_traces:
        dump_traces(traces, args.dump_traces)
    _dump({"csv": args.csv, "overall": report.overall, "below_ctc": report.below, "above_ctc": report.above,
           "per_layer": report.means(), "n_utterances": len(examples), "window_rule": report.window_rule})
    return EXIT_OK


def cmd_sweep_ctc(args) -> int:
    lab = _lab(args, gather(args))
    layers = [int(x) for x in args.layers.split(",")]
    rows = ex.run_ctc_position_sweep(lab, layers, args.seed, Path(args.out) / f"sweep_seed{args.seed}.csv")
    _dump(rows)
    return EXIT_OK


def cmd_ablate_pretrain(args) -> int:
    lab = _lab(args, gather(args))
    _dump(ex.ablate_pretrain(lab, args.seed, Path(args.out) / f"ablate_pretrain_seed{args.seed}.csv"))
    return EXIT_OK


def cmd_ablate_adaptor(args) -> int:
    lab = _lab(args, gather(args))
    variants = tuple(args.variants.split(","))
    _dump(ex.ablate_adaptor(lab, args.seed, variants, Path(args.out) / f"ablate_adaptor_seed{args.seed}.csv"))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sate", description="Desk-scale speech translation experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, func, help_text, data=True):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if data:
            p.add_argument("--data", required=True, help="corpus directory from gen-data")
        p.set_defaults(func=func)
        return p

    p = command("gen-data", cmd_gen_data, "generate a synthetic corpus", data=False)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)

    p = command("train", cmd_train, "train one model")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--model", choices=["asr", "mt", "e2e_st", "sate"])
    p.add_argument("--init", choices=["none", "asr_ckpt", "mt_ckpt", "both"])
    p.add_argument("--loss", choices=["sate", "mtkd"])
    p.add_argument("--adaptor", choices=["none", "soft", "mapping", "fusion"])
    p.add_argument("--asr-ckpt")
    p.add_argument("--mt-ckpt")
    p.add_argument("--ctc-layer", type=int)
    p.add_argument("--steps", type=int, help="stop after this many updates")

    p = command("evaluate", cmd_evaluate, "score a checkpoint (BLEU or WER)")
    p.add_argument("--ckpt")
    p.add_argument("--kind", choices=["asr", "mt", "e2e_st", "sate", "cascade"])
    p.add_argument("--asr-ckpt")
    p.add_argument("--mt-ckpt")
    p.add_argument("--split", default="test", choices=["train", "dev", "test"])
    p.add_argument("--beam", type=int, default=4)
    p.add_argument("--out", help="also write the metrics JSON here")

    p = command("average", cmd_average, "average checkpoints", data=False)
    p.add_argument("ckpts", nargs="+")
    p.add_argument("--out", required=True)

    p = command("localness", cmd_localness, "per-layer encoder localness of a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--kind", choices=["asr", "mt", "e2e_st", "sate"])
    p.add_argument("--split", default="dev", choices=["train", "dev", "test"])
    p.add_argument("--n", type=int, default=200, help="leading utterances of the split to analyse")
    p.add_argument("--csv", required=True)
    p.add_argument("--tag", default="")
    p.add_argument("--dump-traces")

    p = command("sweep-ctc", cmd_sweep_ctc, "train E2E and ASR models per CTC position")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--layers", default="2,4,6")

    p = command("ablate-pretrain", cmd_ablate_pretrain, "SATE with partial pre-trained initialization")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)

    p = command("ablate-adaptor", cmd_ablate_adaptor, "SATE per adaptor variant")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--variants", default="none,soft,mapping,fusion")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, CheckpointIncompatibleError) as exc:
        print(f"sate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"sate: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
