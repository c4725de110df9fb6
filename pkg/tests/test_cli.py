import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import pytest

from atsed.cli import main
from atsed.config import OUTPUT_ENV, ConfigError, load_config
from atsed.labels import parse_manifest

FAST = ["stage1.width_divisor=32", "stage1.epochs=1", "stage1.batch_size=4", "stage1.warmup_epochs=0",
        "stage2.width_divisor=16", "stage2.epochs=1", "stage2.batch_size=4", "stage2.warmup_epochs=0",
        "psds.thresholds=5"]
PIPELINE = ["train-stage1", "infer-pseudo", "train-stage2", "evaluate", "report"]


def run(cmd, config, *extra):
    argv = [cmd, "--config", str(config)]
    for s in FAST:
        argv += ["--set", s]
    return main(argv + list(extra))


def tree_digest(root):
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file():
            out[p.relative_to(root).as_posix()] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    assert main(["synthdata", "--out", str(root), "--n-clips", "12", "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def finished(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run_a")
    mp = pytest.MonkeyPatch()
    mp.setenv(OUTPUT_ENV, str(out))
    try:
        for cmd in PIPELINE:
            assert run(cmd, corpus / "run.ini") == 0, cmd
    finally:
        mp.undo()
    return out


def test_synthdata_writes_template(corpus):
    cfg = load_config(corpus / "run.ini")
    assert cfg.classes == ["Alarm_bell_ringing", "Dog", "Vacuum_cleaner"]
    assert all(p.exists() for p in cfg.manifests.values())
    assert cfg.output_dir == corpus / "out"


def test_pipeline_artifacts(finished):
    for rel in ("stage1/model.bin", "stage1/log.csv", "stage1/summary.json", "pseudo_weak.tsv",
                "stage2/model.bin", "stage2/summary.json", "eval/psds_scenario1.json",
                "eval/psds_scenario2.json", "eval/events.tsv", "eval/roc.csv", "report/summary.csv",
                "report/training_log.csv", "report/roc.csv"):
        assert (finished / rel).exists(), rel
    for name in ("scenario1", "scenario2"):
        rep = json.loads((finished / "eval" / f"psds_{name}.json").read_text())
        assert 0.0 <= rep["score"] <= 1.0 and rep["scenario"] == name
    rows = list(csv.reader(open(finished / "report" / "summary.csv")))
    assert rows[0] == ["section", "metric", "value"]
    assert {r[1] for r in rows[1:] if r[0] == "eval"} == {"psds_scenario1", "psds_scenario2"}
    stages = {r["stage"] for r in csv.DictReader(open(finished / "report" / "training_log.csv"))}
    assert stages == {"stage1", "stage2"}


def test_pseudo_labels_roundtrip_as_weak_manifest(finished, corpus):
    labels = parse_manifest(finished / "pseudo_weak.tsv", "weak", load_config(corpus / "run.ini").classes)
    unlabeled = parse_manifest(corpus / "unlabeled.tsv", "unlabeled")
    assert list(labels) == unlabeled


def test_commands_are_idempotent(finished, corpus, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    for cmd in PIPELINE:
        assert run(cmd, corpus / "run.ini") == 0
    assert tree_digest(tmp_path) == tree_digest(finished)


def test_ground_truth_predictions_score_one(corpus, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert run("evaluate", corpus / "run.ini", "--predictions", str(corpus / "validation.tsv")) == 0
    for name in ("scenario1", "scenario2"):
        assert json.loads((tmp_path / "eval" / f"psds_{name}.json").read_text())["score"] == 1.0


@pytest.mark.parametrize("cmd,prior", [("infer-pseudo", "train-stage1"), ("train-stage2", "infer-pseudo"),
                                       ("evaluate", "train-stage2"), ("report", "evaluate")])
def test_missing_prerequisite_names_prior_command(cmd, prior, corpus, tmp_path, monkeypatch, capsys):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert run(cmd, corpus / "run.ini") != 0
    err = capsys.readouterr().err
    assert prior in err and "error" in err


def test_no_pseudo_ablation_runs_without_pseudo_file(corpus, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    assert run("train-stage2", corpus / "run.ini", "--set", "stage2.use_pseudo=false") == 0
    assert (tmp_path / "stage2" / "model.bin").exists()
    assert not (tmp_path / "pseudo_weak.tsv").exists()


def test_bad_inputs_exit_nonzero(corpus, tmp_path, capsys):
    assert main(["train-stage1", "--config", str(tmp_path / "missing.ini")]) == 2
    assert "not found" in capsys.readouterr().err
    assert main(["train-stage1", "--config", str(corpus / "run.ini"), "--set", "stage1.bogus=1"]) == 2
    assert "unknown keys" in capsys.readouterr().err
    assert main(["train-stage1", "--config", str(corpus / "run.ini"), "--set", "novalue"]) == 2
    assert main(["synthdata", "--out", str(tmp_path / "x"), "--n-clips", "2"]) == 2


def test_module_entry_point_exit_codes(tmp_path):
    ok = subprocess.run([sys.executable, "-m", "atsed", "--help"], capture_output=True, text=True)
    assert ok.returncode == 0 and "synthdata" in ok.stdout
    bad = subprocess.run([sys.executable, "-m", "atsed", "evaluate", "--config", str(tmp_path / "nope.ini")],
                         capture_output=True, text=True)
    assert bad.returncode != 0 and "error" in bad.stderr


# -- config -------------------------------------------------------------------------

def test_config_defaults_and_overrides(corpus, monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    cfg = load_config(corpus / "run.ini")
    assert (cfg.stage1.model, cfg.stage1.n_mels, cfg.stage1.width_divisor) == ("at", 64, 8)
    assert (cfg.stage2.model, cfg.stage2.n_mels, cfg.stage2.loss) == ("fdy_crnn", 128, "afl")
    assert (cfg.stage2.afl.gamma, cfg.stage2.afl.zeta) == (0.625, 1.0)
    assert cfg.stage1.ssl.warmup_epochs == 10 and cfg.deterministic
    assert load_config(corpus / "run.ini", {"stage2.epochs": "200"}).stage2.ssl.warmup_epochs == 50
    cfg = load_config(corpus / "run.ini", {"stage2.ict": "false", "postprocess.windows": "Dog:5",
                                           "run.seed": "7"})
    assert not cfg.stage2.ssl.ict_enabled and cfg.window_overrides == {"Dog": 5} and cfg.seed == 7
    monkeypatch.setenv(OUTPUT_ENV, "/tmp/elsewhere")
    assert str(load_config(corpus / "run.ini").output_dir) == "/tmp/elsewhere"


@pytest.mark.parametrize("override", [{"paths.audio_root": "nowhere"}, {"paths.weak": "nope.tsv"},
                                      {"run.precision": "float16"}, {"stage1.ict": "maybe"}])
def test_config_errors(corpus, override):
    with pytest.raises(ConfigError):
        load_config(corpus / "run.ini", override)


# -- presets ------------------------------------------------------------------------

PRESET_DIR = Path(__file__).resolve().parent.parent / "configs"
PRESETS = sorted(PRESET_DIR.glob("*.ini"))


@pytest.mark.parametrize("preset", PRESETS, ids=lambda p: p.stem)
def test_presets_layer_on_a_corpus_config(preset, corpus):
    cfg = load_config([corpus / "run.ini", preset])
    assert cfg.audio_root == corpus / "audio"
    assert cfg.stage1.ssl.warmup_epochs <= cfg.stage1.epochs


def test_layering_order_and_fixed_window(corpus):
    cfg = load_config([corpus / "run.ini", PRESET_DIR / "two_stage_at_crnn.ini"])
    assert (cfg.stage2.model, cfg.stage2.loss, cfg.fixed_window) == ("crnn", "bce", 7)
    cfg = load_config([corpus / "run.ini", PRESET_DIR / "two_stage_at_crnn.ini", PRESET_DIR / "two_stage_full.ini"])
    assert (cfg.stage2.model, cfg.stage2.loss) == ("fdy_crnn", "afl")


def test_crnn_to_crnn_preset_runs(corpus, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    for cmd in ("train-stage1", "infer-pseudo", "train-stage2", "evaluate"):
        assert run(cmd, corpus / "run.ini", "--config", str(PRESET_DIR / "two_stage_crnn_crnn.ini"),
                   "--set", "stage1.width_divisor=16") == 0, cmd
    side = json.loads((tmp_path / "stage1" / "model.bin.json").read_text())
    assert side["architecture"]["kind"] == "crnn"


def test_stage1_model_can_be_evaluated(corpus, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path))
    preset = str(PRESET_DIR / "stage1_at_strong.ini")
    assert run("evaluate", corpus / "run.ini", "--config", preset, "--stage", "1") == 2
    assert run("train-stage1", corpus / "run.ini", "--config", preset) == 0
    assert run("evaluate", corpus / "run.ini", "--config", preset, "--stage", "1") == 0
    assert (tmp_path / "eval" / "psds_scenario1.json").exists()
