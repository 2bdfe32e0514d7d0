import csv
import json

import pytest

from sate import train as train_mod
from sate.checkpoint import load_checkpoint
from sate.cli import main
from sate.experiments import read_manifest

TINY = """\
# tiny corpus and model, a few updates
data.vocab_size = 4
data.min_len = 2
data.max_len = 4
data.d_feat = 4
data.n_train = 24
data.n_dev = 6
data.n_test = 6
model.d_model = 8
model.n_heads = 2
model.d_ffn = 8
model.n_layers_acoustic = 2
model.n_layers_textual = 1
model.n_layers_decoder = 1
model.dropout = 0.0
train.max_steps = 4
train.eval_interval = 2
train.warmup_steps = 2
train.batch_frames = 80
train.dev_subset = 4
budget.asr_pretrain_steps = 2
budget.mt_pretrain_steps = 2
budget.st_steps = 2
budget.sweep_steps = 2
budget.eval_interval = 2
budget.dev_subset = 3
budget.beam = 2
budget.analysis_utterances = 4
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.cfg"
    cfg.write_text(TINY)
    assert main(["gen-data", "--config", str(cfg), "--out", str(root / "data"), "--seed", "5"]) == 0
    return root, cfg


def _train(root, cfg, name, *extra):
    return main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / name),
                 "--seed", "0", *extra])


def test_gen_data_writes_manifest(workspace):
    root, _ = workspace
    m = read_manifest(root / "data" / "manifest.txt")
    assert m["data.seed"] == "5" and m["data.n_train"] == "24" and len(m["dataset_hash"]) == 40


def test_train_is_deterministic_and_writes_manifest(workspace):
    root, cfg = workspace
    assert _train(root, cfg, "a", "--model", "asr") == 0
    assert _train(root, cfg, "b", "--model", "asr") == 0
    assert (root / "a" / "average.ckpt").read_bytes() == (root / "b" / "average.ckpt").read_bytes()
    m = read_manifest(root / "a" / "manifest.txt")
    assert m["recipe.model"] == "asr" and m["train.seed"] == "0" and m["model.d_model"] == "8"
    assert m["dataset_hash"] == read_manifest(root / "data" / "manifest.txt")["dataset_hash"]


def test_seed_is_mandatory_for_train(workspace):
    root, cfg = workspace
    with pytest.raises(SystemExit) as info:
        main(["train", "--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "x")])
    assert info.value.code == 2


def test_config_errors_exit_2(workspace, capsys):
    root, cfg = workspace
    assert _train(root, cfg, "bad", "--set", "train.no_such_key=1") == 2
    assert _train(root, cfg, "bad", "--set", "model.d_model=7") == 2
    assert _train(root, cfg, "bad", "--set", "train.peak_lr=fast") == 2
    assert _train(root, cfg, "bad", "--loss", "mtkd") == 2
    assert "config error" in capsys.readouterr().err


def test_divergence_exits_3(workspace, monkeypatch):
    root, cfg = workspace

    def diverge(model, batch):
        raise train_mod.DivergenceError(1, None)

    monkeypatch.setattr(train_mod, "loss_sate", diverge)
    assert _train(root, cfg, "div", "--model", "mt") == 3


def test_pipeline_evaluate_average_localness(workspace, capsys):
    root, cfg = workspace
    assert _train(root, cfg, "mt", "--model", "mt") == 0
    if not (root / "a" / "average.ckpt").exists():
        assert _train(root, cfg, "a", "--model", "asr") == 0
    asr, mt = root / "a" / "average.ckpt", root / "mt" / "average.ckpt"
    assert _train(root, cfg, "sate", "--model", "sate", "--init", "both", "--loss", "mtkd",
                  "--asr-ckpt", str(asr), "--mt-ckpt", str(mt)) == 0
    capsys.readouterr()

    out = root / "eval.json"
    assert main(["evaluate", "--data", str(root / "data"), "--ckpt", str(root / "sate" / "average.ckpt"),
                 "--beam", "2", "--out", str(out)]) == 0
    metrics = json.loads(out.read_text())
    assert metrics["kind"] == "sate" and 0.0 <= metrics["bleu"] <= 100.0
    assert main(["evaluate", "--data", str(root / "data"), "--kind", "cascade", "--asr-ckpt", str(asr),
                 "--mt-ckpt", str(mt), "--beam", "1"]) == 0
    assert main(["evaluate", "--data", str(root / "data"), "--ckpt", str(asr), "--split", "dev"]) == 0
    assert "wer" in capsys.readouterr().out

    avg = root / "avg.ckpt"
    assert main(["average", str(asr), str(asr), "--out", str(avg)]) == 0
    assert avg.read_bytes() == asr.read_bytes()

    loc = root / "loc.csv"
    assert main(["localness", "--data", str(root / "data"), "--ckpt", str(asr), "--csv", str(loc),
                 "--n", "4", "--dump-traces", str(root / "traces.ckpt")]) == 0
    rows = list(csv.DictReader(open(loc)))
    assert [r["group"] for r in rows] == ["below-CTC", "below-CTC"]
    assert any(k.startswith("utt0.layer1.head0") for k in load_checkpoint(root / "traces.ckpt"))


def test_experiment_commands(workspace, capsys):
    root, cfg = workspace
    common = ["--config", str(cfg), "--data", str(root / "data"), "--out", str(root / "lab"), "--seed", "1"]
    assert main(["sweep-ctc", *common, "--layers", "1,2"]) == 0
    rows = list(csv.DictReader(open(root / "lab" / "sweep_seed1.csv")))
    assert [(r["ctc_layer"], r["model"]) for r in rows] == [("1", "e2e_st"), ("1", "asr"), ("2", "e2e_st"), ("2", "asr")]
    assert (root / "lab" / "localness_seed1_ctc2.csv").exists()
    assert main(["ablate-adaptor", *common, "--variants", "none,soft"]) == 0
    assert main(["ablate-pretrain", *common]) == 0
    rows = list(csv.DictReader(open(root / "lab" / "ablate_pretrain_seed1.csv")))
    assert [r["modules"] for r in rows] == ["none", "asr_encoder", "mt_encoder", "mt_decoder",
                                           "mt_encoder_decoder", "all"]
    # rerunning reuses every cached run
    assert main(["ablate-adaptor", *common, "--variants", "none,soft"]) == 0
