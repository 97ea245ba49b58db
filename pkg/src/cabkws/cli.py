"""Command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from collections import Counter

from cabkws.audio.augment import AugmentSpec, apply_augment
from cabkws.audio.features import FbankConfig, fbank, write_fbank
from cabkws.audio.wav import load_wav, save_wav
from cabkws.config import RunConfig
from cabkws.data.corpus import Corpus
from cabkws.data.manifest import Entry, Manifest
from cabkws.data.synth import SynthSpec, synth_dataset
from cabkws.errors import ConfigError
from cabkws.train import gradcheck as gc
from cabkws.train.loop import evaluate, finetune, pretrain, step_sweep

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


# -- data commands ---------------------------------------------------------------


def cmd_synth_data(args) -> int:
    if args.per_class < 1 or args.classes < 1:
        raise UsageError("per-class and classes must be ≥ 1")
    try:
        spec = SynthSpec.for_per_class(args.per_class, n_classes=args.classes, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    try:
        os.makedirs(args.out, exist_ok=True)
        probe = os.path.join(args.out, ".write-test")
        with open(probe, "w"):
            pass
        os.remove(probe)
    except OSError as exc:
        raise UsageError(f"cannot write to {args.out}: {exc.strerror or exc}") from exc

    manifest, waves = synth_dataset(spec)
    entries = []
    for e in manifest:
        rel = f"wav/{e.split}/{e.utterance_id}.wav"
        os.makedirs(os.path.join(args.out, os.path.dirname(rel)), exist_ok=True)
        save_wav(os.path.join(args.out, rel), waves[e.utterance_id])
        entries.append(Entry(e.utterance_id, rel, e.label, e.split))
    on_disk = Manifest(entries, manifest.n_classes, manifest.meta)
    path = os.path.join(args.out, "manifest.csv")
    on_disk.write_csv(path)
    _emit({"manifest": path, "counts": on_disk.split_sizes()})
    return EXIT_OK


def cmd_augment(args) -> int:
    if args.speed <= 0:
        raise UsageError(f"--speed must be > 0, got {args.speed}")
    if args.volume < 0:
        raise UsageError(f"--volume must be >= 0, got {args.volume}")
    if args.snr is not None and args.noise is None:
        raise UsageError("--snr requires --noise")
    if args.noise is not None and args.snr is None:
        raise UsageError("--noise requires --snr")
    w = load_wav(args.inp)
    noise = load_wav(args.noise) if args.noise else None
    spec = AugmentSpec(args.speed, args.volume, args.snr, args.seed)
    out = apply_augment(w, spec, noise=noise)
    save_wav(args.out, out)
    _emit({"out": args.out, "samples": len(out), "seconds": out.duration})
    return EXIT_OK


def cmd_fbank(args) -> int:
    feats = fbank(load_wav(args.inp))
    write_fbank(args.out, feats)
    _emit({"out": args.out, "frames": feats.shape[0], "bins": feats.shape[1]})
    return EXIT_OK


# -- training commands -----------------------------------------------------------


def load_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg.with_overrides(args.overrides)


def build_corpus(cfg: RunConfig) -> Corpus:
    d = cfg.data
    fbank_cfg = FbankConfig(n_mels=cfg.model.n_mels)
    if d.manifest is None:
        from cabkws.data.synth import synth_manifest

        return Corpus(synth_manifest(d.synth), fbank_cfg=fbank_cfg, input_frames=cfg.model.input_frames)
    if not os.path.exists(d.manifest):
        raise ConfigError(f"manifest {d.manifest} does not exist")
    root = d.root if d.root is not None else os.path.dirname(os.path.abspath(d.manifest))
    return Corpus(Manifest.read_csv(d.manifest), root=root, fbank_cfg=fbank_cfg, input_frames=cfg.model.input_frames)


def labeled_train(cfg: RunConfig, corpus: Corpus) -> list[Entry]:
    train = corpus.manifest.split("train")
    if cfg.data.labeled_per_class is not None:
        train = train.per_class(cfg.data.labeled_per_class)
    return list(train)


def run_dir(cfg: RunConfig, args) -> str:
    if args.run_dir:
        path = args.run_dir
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        path = os.path.join(cfg.data.runs_dir, f"{stamp}-seed{cfg.train.seed}")
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "config.json"), "w") as f:
        f.write(cfg.to_json())
    return path


def cmd_pretrain(args) -> int:
    cfg = load_run_config(args)
    corpus = build_corpus(cfg)
    out = run_dir(cfg, args)
    res = pretrain(corpus, cfg.model, cfg.train, cfg.augment, out_dir=out)
    last = res.metrics[-1].losses.l_ul if res.metrics else None
    _emit({"run_dir": out, "checkpoint": res.checkpoint, "steps": len(res.metrics), "final_l_ul": last})
    return EXIT_OK


def cmd_finetune(args) -> int:
    cfg = load_run_config(args)
    init = args.init or cfg.data.init_checkpoint
    if init is not None and not os.path.exists(init):
        raise ConfigError(f"init checkpoint {init} does not exist")
    corpus = build_corpus(cfg)
    out = run_dir(cfg, args)
    train = labeled_train(cfg, corpus)
    res = finetune(corpus, cfg.model, cfg.train, init=init, out_dir=out, train_entries=train)
    # classes are not rebalanced, so report what training actually saw
    per_class = Counter(e.label for e in train)
    _emit({
        "run_dir": out, "checkpoint": res.checkpoint, "best_dev_acc": res.best_dev_acc, "best_step": res.best_step,
        "class_counts": {str(c): per_class[c] for c in sorted(per_class)},
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_run_config(args)
    if not os.path.exists(args.checkpoint):
        raise ConfigError(f"checkpoint {args.checkpoint} does not exist")
    corpus = build_corpus(cfg)
    res = evaluate(args.checkpoint, cfg.model, corpus, split=args.split, batch_size=cfg.train.eval_batch_size)
    _emit(dict(res.to_dict(), split=args.split))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    objectives = ("ul", "ce") if args.objective == "both" else (args.objective,)
    reports = [
        gc.grad_check(seed=args.seed, n_coords=args.coords, objective=o, h=args.h, tolerance=args.tolerance)
        for o in objectives
    ]
    ok = all(r.passed for r in reports)
    _emit({
        "passed": ok,
        "max_rel_err": max(r.max_rel_err for r in reports),
        "reports": [r.to_dict() for r in reports],
    })
    return EXIT_OK if ok else EXIT_RUNTIME


def cmd_sweep(args) -> int:
    cfg = load_run_config(args)
    corpus = build_corpus(cfg)
    out = run_dir(cfg, args)
    res = step_sweep(
        corpus, cfg.model, cfg.train, cfg.data.sweep_counts, cfg.data.sweep_seeds, cfg.augment,
        train_entries=labeled_train(cfg, corpus),
    )
    with open(os.path.join(out, "sweep.jsonl"), "w") as f:
        for row in res.rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")
    _emit({"run_dir": out, "table": res.table()})
    return EXIT_OK


# -- parser ----------------------------------------------------------------------


def _add_run_args(p):
    p.add_argument("--config", help="run config JSON (defaults for anything missing)")
    p.add_argument("--run-dir", help="write artifacts here instead of a new timestamped directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cabkws", description="Keyword-spotting pretrain/fine-tune workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write the synthetic tone/chirp corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--per-class", type=int, required=True, help="training utterances per class")
    p.add_argument("--classes", type=int, default=12)
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("augment", help="speed, then volume, then optional noise")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--speed", type=float, default=1.0)
    p.add_argument("--volume", type=float, default=1.0)
    p.add_argument("--noise")
    p.add_argument("--snr", type=float)
    p.add_argument("--seed", type=int, default=0, help="seed for the noise window offset")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("fbank", help="log-mel features of a WAV file")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fbank)

    for name, func, helptext in (
        ("pretrain", cmd_pretrain, "unsupervised pretraining"),
        ("finetune", cmd_finetune, "supervised fine-tuning"),
        ("sweep", cmd_sweep, "pretraining-length sweep"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_run_args(p)
        if name == "finetune":
            p.add_argument("--init", help="checkpoint to start from")
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="accuracy and confusion matrix of a checkpoint")
    p.add_argument("--config")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="eval", choices=("train", "dev", "eval"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="backprop vs finite differences on a reduced network")
    p.add_argument("--objective", default="both", choices=("ul", "ce", "both"))
    p.add_argument("--coords", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--h", type=float, default=1e-4)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def split_overrides(rest: list[str]) -> list[str]:
    """``--a.b=v`` and ``--a.b v`` tokens -> ``["a.b=v", ...]``."""
    out, i = [], 0
    while i < len(rest):
        tok = rest[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise UsageError(f"unrecognized argument {tok!r}")
        if "=" in tok:
            out.append(tok[2:])
            i += 1
        elif i + 1 < len(rest):
            out.append(f"{tok[2:]}={rest[i + 1]}")
            i += 2
        else:
            raise UsageError(f"override {tok!r} has no value")
    return out


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, rest = parser.parse_known_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        overrides = split_overrides(rest)
        if overrides and args.command not in ("pretrain", "finetune", "sweep", "eval"):
            raise UsageError(f"{args.command} takes no config overrides")
        args.overrides = overrides
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"cabkws {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # runtime failure inside a command
        print(f"cabkws {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
