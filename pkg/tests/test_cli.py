import hashlib
import json
import os
import subprocess
import sys

import numpy as np
import pytest

from cabkws.audio.wav import Waveform, load_wav, save_wav
from cabkws.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_corpus, main
from cabkws.config import RunConfig
from cabkws.data import Entry, Manifest
from cabkws.model.checkpoint import save_checkpoint
from cabkws.model.config import ModelConfig
from cabkws.model.network import init_params
from cabkws.train.loop import predict_logits

# a reduced network and corpus so training commands finish in seconds
TINY_OVERRIDES = [
    "--model.input_frames=20", "--model.n_mels=16", "--model.channels=4", "--model.gn_groups=2",
    "--model.d_model=16", "--model.heads=2", "--model.ffn_dim=32", "--model.bottleneck_dim=24",
    "--model.recon_dim=16", "--data.synth.train=3", "--data.synth.dev=1", "--data.synth.eval=1",
    "--train.batch_size=6", "--train.pretrain_steps=2", "--train.finetune_steps=3", "--train.eval_every=2",
]


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_synth_data(tmp_path, capsys):
    code, out, _ = run(["synth-data", "--out", tmp_path / "d", "--per-class", 10], capsys)
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["counts"]["train"] == 120
    assert report["manifest"] == str(tmp_path / "d" / "manifest.csv")
    m = Manifest.read_csv(report["manifest"])
    assert len(m) == sum(report["counts"].values())
    first = m.entries[0]
    w = load_wav(tmp_path / "d" / first.path)
    assert len(w) == 16000


def _digest(root):
    h = hashlib.sha256()
    for dirpath, dirnames, files in sorted(os.walk(root)):
        dirnames.sort()
        for f in sorted(files):
            h.update(f.encode())
            with open(os.path.join(dirpath, f), "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def test_synth_data_is_deterministic(tmp_path, capsys):
    for name in ("a", "b", "c"):
        seed = 1 if name == "c" else 0
        assert run(["synth-data", "--out", tmp_path / name, "--per-class", 2, "--seed", seed], capsys)[0] == 0
    a, b = (tmp_path / "a" / "manifest.csv").read_bytes(), (tmp_path / "b" / "manifest.csv").read_bytes()
    assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()
    assert _digest(tmp_path / "a") == _digest(tmp_path / "b") != _digest(tmp_path / "c")


@pytest.mark.parametrize("flags", [["--classes", 0], ["--per-class", 0]])
def test_synth_data_rejects_empty_corpus(tmp_path, capsys, flags):
    argv = ["synth-data", "--out", tmp_path, "--per-class", 3, *flags]
    code, _, err = run(argv, capsys)
    assert code == EXIT_USAGE
    assert "per-class and classes must be ≥ 1" in err


def test_synth_data_unwritable_dir(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    code, _, err = run(["synth-data", "--out", blocker / "sub", "--per-class", 1], capsys)
    assert code == EXIT_USAGE and "cannot write" in err


@pytest.fixture
def wav_file(tmp_path):
    rng = np.random.default_rng(0)
    w = Waveform(np.round(rng.uniform(-0.3, 0.3, 16000) * 32767) / 32768)
    path = tmp_path / "in.wav"
    save_wav(path, w)
    return path


def test_augment_identity(tmp_path, capsys, wav_file):
    out = tmp_path / "out.wav"
    code, _, _ = run(["augment", "--in", wav_file, "--out", out, "--speed", 1.0, "--volume", 1.0], capsys)
    assert code == EXIT_OK
    assert np.array_equal(load_wav(out).samples, load_wav(wav_file).samples)


def test_augment_speed_halves_duration(tmp_path, capsys, wav_file):
    out = tmp_path / "out.wav"
    code, stdout, _ = run(["augment", "--in", wav_file, "--out", out, "--speed", 2.0], capsys)
    assert code == EXIT_OK
    assert len(load_wav(out)) == 8000
    assert json.loads(stdout)["seconds"] == 0.5


def test_augment_with_noise(tmp_path, capsys, wav_file):
    noise = tmp_path / "n.wav"
    save_wav(noise, Waveform(np.random.default_rng(1).uniform(-0.5, 0.5, 4000)))
    out = tmp_path / "out.wav"
    argv = ["augment", "--in", wav_file, "--out", out, "--noise", noise, "--snr", 10]
    assert run(argv, capsys)[0] == EXIT_OK
    assert not np.array_equal(load_wav(out).samples, load_wav(wav_file).samples)


@pytest.mark.parametrize(
    "flags",
    [["--snr", 10], ["--speed", 0], ["--speed", -1], ["--volume", -0.5], ["--bogus", 1]],
)
def test_augment_usage_errors(tmp_path, capsys, wav_file, flags):
    code, _, _ = run(["augment", "--in", wav_file, "--out", tmp_path / "o.wav", *flags], capsys)
    assert code == EXIT_USAGE


def test_augment_bad_input_is_runtime_error(tmp_path, capsys):
    bad = tmp_path / "bad.wav"
    bad.write_bytes(b"not a wav")
    assert run(["augment", "--in", bad, "--out", tmp_path / "o.wav"], capsys)[0] == EXIT_RUNTIME


def test_fbank_command(tmp_path, capsys, wav_file):
    out = tmp_path / "f.fbnk"
    code, stdout, _ = run(["fbank", "--in", wav_file, "--out", out], capsys)
    assert code == EXIT_OK
    assert json.loads(stdout) == {"out": str(out), "frames": 98, "bins": 40}


def test_no_command_is_usage_error(capsys):
    assert run([], capsys)[0] == EXIT_USAGE
    assert run(["--help"], capsys)[0] == EXIT_OK


# -- training commands -----------------------------------------------------------


def test_pretrain_then_finetune_then_eval(tmp_path, capsys):
    code, out, err = run(["pretrain", "--run-dir", tmp_path / "pt", *TINY_OVERRIDES], capsys)
    assert code == EXIT_OK, err
    report = json.loads(out)
    assert report["steps"] == 2
    assert os.path.exists(report["checkpoint"])
    cfg = RunConfig.load(tmp_path / "pt" / "config.json")
    assert cfg.model.d_model == 16 and cfg.train.pretrain_steps == 2

    argv = ["finetune", "--run-dir", tmp_path / "ft", "--init", report["checkpoint"], *TINY_OVERRIDES]
    code, out, err = run(argv, capsys)
    assert code == EXIT_OK, err
    ft = json.loads(out)
    assert ft["class_counts"] == {str(c): 3 for c in range(12)}
    assert sorted(os.listdir(tmp_path / "ft")) == ["best.ckpt", "config.json", "final.ckpt", "finetune.jsonl"]

    argv = ["eval", "--checkpoint", ft["checkpoint"], "--split", "dev", *TINY_OVERRIDES]
    code, out, err = run(argv, capsys)
    assert code == EXIT_OK, err
    assert json.loads(out)["accuracy"] == ft["best_dev_acc"]


def test_timestamped_run_dir(tmp_path, capsys):
    argv = ["pretrain", f"--data.runs_dir={tmp_path}", "--train.seed=3", *TINY_OVERRIDES]
    code, out, _ = run(argv, capsys)
    assert code == EXIT_OK
    (name,) = os.listdir(tmp_path)
    assert name.endswith("-seed3")
    assert json.loads(out)["run_dir"] == str(tmp_path / name)


def test_override_matches_config_file(tmp_path, capsys):
    cfg = RunConfig().with_overrides([o[2:] for o in TINY_OVERRIDES] + ["train.seed=7"])
    path = tmp_path / "seed7.json"
    path.write_text(cfg.to_json())
    assert run(["finetune", "--config", path, "--run-dir", tmp_path / "file"], capsys)[0] == 0
    assert run(["finetune", "--run-dir", tmp_path / "flag", *TINY_OVERRIDES, "--train.seed", "7"], capsys)[0] == 0
    for name in ("finetune.jsonl", "best.ckpt", "final.ckpt", "config.json"):
        assert (tmp_path / "file" / name).read_bytes() == (tmp_path / "flag" / name).read_bytes()


def test_eval_perfect_oracle(tmp_path, capsys):
    assert run(["synth-data", "--out", tmp_path, "--per-class", 2], capsys)[0] == 0
    cfg = ModelConfig()
    params = init_params(cfg, 0)
    ckpt = tmp_path / "m.ckpt"
    save_checkpoint(ckpt, params, cfg)
    # relabel the eval split with the model's own predictions
    manifest_path = tmp_path / "manifest.csv"
    run_cfg = RunConfig().with_overrides([f"data.manifest={manifest_path}"])
    corpus = build_corpus(run_cfg)
    evals = corpus.entries("eval")
    x, _ = corpus.feature_matrix(evals)
    pred = np.argmax(predict_logits(params, cfg, x), axis=1)
    relabeled = [
        Entry(e.utterance_id, e.path, int(p), e.split) for e, p in zip(evals, pred)
    ] + [e for e in corpus.manifest if e.split != "eval"]
    Manifest(relabeled, meta=corpus.manifest.meta).write_csv(manifest_path)

    code, out, err = run(["eval", "--checkpoint", ckpt, f"--data.manifest={manifest_path}"], capsys)
    assert code == EXIT_OK, err
    report = json.loads(out)
    assert report["accuracy"] == 1.0 and report["n"] == len(evals)


def test_training_command_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"train": {"sed": 1}}')
    assert run(["pretrain", "--config", bad], capsys)[0] == EXIT_USAGE
    assert run(["pretrain", "--config", tmp_path / "missing.json"], capsys)[0] == EXIT_USAGE
    assert run(["finetune", "--init", tmp_path / "missing.ckpt"], capsys)[0] == EXIT_USAGE
    assert run(["eval", "--checkpoint", tmp_path / "missing.ckpt"], capsys)[0] == EXIT_USAGE
    assert run(["pretrain", "--train.nope=1"], capsys)[0] == EXIT_USAGE
    assert run(["synth-data", "--out", tmp_path, "--per-class", 1, "--train.seed=1"], capsys)[0] == EXIT_USAGE
    broken = tmp_path / "broken.ckpt"
    broken.write_bytes(b"CABK" + bytes(4))
    assert run(["eval", "--checkpoint", broken, *TINY_OVERRIDES], capsys)[0] == EXIT_RUNTIME


def test_sweep_command(tmp_path, capsys):
    argv = [
        "sweep", "--run-dir", tmp_path, *TINY_OVERRIDES,
        "--data.sweep_counts=[0,2]", "--data.sweep_seeds=[0]",
    ]
    code, out, err = run(argv, capsys)
    assert code == EXIT_OK, err
    table = json.loads(out)["table"]
    assert [r["pretrain_steps"] for r in table] == [0, 2]
    rows = [json.loads(line) for line in (tmp_path / "sweep.jsonl").read_text().splitlines()]
    assert len(rows) == 2


def test_gradcheck_command(capsys):
    code, out, _ = run(["gradcheck", "--coords", 200], capsys)
    assert code == EXIT_OK
    report = json.loads(out)
    assert report["passed"] and report["max_rel_err"] <= 1e-4
    assert [r["objective"] for r in report["reports"]] == ["ul", "ce"]
    code, out, _ = run(["gradcheck", "--coords", 50, "--objective", "ce", "--tolerance", 1e-12], capsys)
    assert code == EXIT_RUNTIME and not json.loads(out)["passed"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "cabkws.cli", "synth-data", "--out", tmp_path, "--per-class", "0"],
        capture_output=True, text=True,
    )
    assert proc.returncode == EXIT_USAGE
    assert "per-class and classes must be" in proc.stderr
