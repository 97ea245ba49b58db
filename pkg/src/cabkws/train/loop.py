"""Pretraining, fine-tuning and evaluation loops."""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from cabkws.audio.augment import AugmentConfig
from cabkws.data.corpus import Corpus, make_finetune_batch, make_pretrain_batch
from cabkws.data.manifest import Entry
from cabkws.errors import ConfigError
from cabkws.losses import LossBreakdown, l2_normalize
from cabkws.model.checkpoint import load_checkpoint, save_checkpoint
from cabkws.model.config import ModelConfig
from cabkws.model.network import (
    FINETUNE,
    PRETRAIN,
    ParamStore,
    check_params,
    forward,
    init_params,
    init_tensor,
    param_specs,
)
from cabkws.train.config import TrainConfig
from cabkws.train.objectives import supervised_objective, unsupervised_objective
from cabkws.train.optim import Adam, clip_by_global_norm

PRETRAIN_METRICS = "pretrain.jsonl"
FINETUNE_METRICS = "finetune.jsonl"
PRETRAIN_CKPT = "pretrain.ckpt"
BEST_CKPT = "best.ckpt"
FINAL_CKPT = "final.ckpt"
FROZEN_TRAINABLE = ("bn.w", "bn.b", "proj.w", "proj.b")

_STAGE_PRETRAIN, _STAGE_FINETUNE, _STAGE_PROJ = 0, 1, 2


def step_seed(seed: int, stage: int, step: int) -> int:
    """Independent batch seed for ``step`` of a stage, derived from the run seed."""
    return int(np.random.SeedSequence([seed, stage, step]).generate_state(1, np.uint64)[0])


@dataclass
class StepMetrics:
    step: int
    losses: LossBreakdown
    grad_norm: float
    ms: float | None = None
    dev_acc: float | None = None

    def to_dict(self) -> dict:
        d = {"step": self.step, **self.losses.to_dict(), "grad_norm": self.grad_norm}
        if self.ms is not None:
            d["ms"] = self.ms
        if self.dev_acc is not None:
            d["dev_acc"] = self.dev_acc
        return d


class MetricsLog:
    """Collects StepMetrics and mirrors each one as a JSON line when given a path."""

    def __init__(self, path=None):
        self.records: list[StepMetrics] = []
        self._f = open(path, "w") if path is not None else None

    def emit(self, m: StepMetrics) -> None:
        self.records.append(m)
        if self._f is not None:
            self._f.write(json.dumps(m.to_dict()) + "\n")
            self._f.flush()

    def close(self) -> None:
        if self._f is not None:
            self._f.close()
            self._f = None


def read_metrics(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def _copy(params: ParamStore) -> ParamStore:
    return {k: v.copy() for k, v in params.items()}


def _out(out_dir, name):
    return None if out_dir is None else os.path.join(out_dir, name)


def _make_optimizer(tc: TrainConfig) -> Adam:
    return Adam(tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)


# -- pretraining -----------------------------------------------------------------


@dataclass
class PretrainResult:
    params: ParamStore
    metrics: list[StepMetrics]
    snapshots: dict = field(default_factory=dict)  # step -> ParamStore
    checkpoint: str | None = None


def pretrain(
    corpus: Corpus,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    augment: AugmentConfig = AugmentConfig(),
    out_dir=None,
    entries: list[Entry] | None = None,
    params: ParamStore | None = None,
    snapshots=(),
    steps: int | None = None,
) -> PretrainResult:
    """Train on L_ul over paired clean/augmented views of unlabeled utterances.

    ``entries`` defaults to the train split; labels are ignored. Parameters
    start from ``init_params(model_cfg, train_cfg.seed)`` unless given.
    ``snapshots`` lists step counts whose parameters are copied out (0 means
    the initial parameters); with a constant learning rate and per-step batch
    seeds, the snapshot at step k equals a separate k-step run.
    With ``out_dir`` set, metrics go to ``pretrain.jsonl`` and the
    checkpoint ``pretrain.ckpt`` is refreshed every ``eval_every`` steps and
    at the end.
    """
    pool = list(entries) if entries is not None else corpus.entries("train")
    if not pool:
        raise ConfigError("pretraining needs at least one utterance; the manifest is empty")
    n = min(train_cfg.batch_size, len(pool))
    if n < 2:
        raise ConfigError("pretraining needs batches of at least 2 utterances")
    total = train_cfg.pretrain_steps if steps is None else steps
    params = init_params(model_cfg, train_cfg.seed) if params is None else _copy(params)
    check_params(params, model_cfg)
    opt = _make_optimizer(train_cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    log = MetricsLog(_out(out_dir, PRETRAIN_METRICS))
    ckpt = _out(out_dir, PRETRAIN_CKPT)
    taken = {0: _copy(params)} if 0 in snapshots else {}
    try:
        for step in range(1, total + 1):
            t0 = time.perf_counter()
            b = make_pretrain_batch(corpus, n, step_seed(train_cfg.seed, _STAGE_PRETRAIN, step), augment, entries=pool)
            losses, grads = unsupervised_objective(
                params, model_cfg, b.features, b.aug_features, b.labels, b.n_frames, b.aug_n_frames
            )
            grads, norm = clip_by_global_norm(grads, train_cfg.grad_clip_norm)
            opt.step(params, grads)
            ms = (time.perf_counter() - t0) * 1e3 if train_cfg.log_wall_clock else None
            log.emit(StepMetrics(step, losses, norm, ms))
            if step in snapshots:
                taken[step] = _copy(params)
            if ckpt is not None and (step % train_cfg.eval_every == 0 or step == total):
                save_checkpoint(ckpt, params, model_cfg, {"stage": "pretrain", "step": step})
        if ckpt is not None and total == 0:
            save_checkpoint(ckpt, params, model_cfg, {"stage": "pretrain", "step": 0})
    finally:
        log.close()
    return PretrainResult(params, log.records, taken, ckpt)


# -- fine-tuning -----------------------------------------------------------------


@dataclass
class FinetuneResult:
    params: ParamStore  # best on dev (final if there is no dev set)
    final_params: ParamStore
    best_dev_acc: float | None
    best_step: int
    metrics: list[StepMetrics]
    checkpoint: str | None = None


def fresh_projection(params: ParamStore, cfg: ModelConfig, seed: int) -> ParamStore:
    """Copy of ``params`` with the class projection re-initialised."""
    out = _copy(params)
    rng = np.random.default_rng([seed, _STAGE_PROJ])
    for spec in param_specs(cfg):
        if spec.name.startswith("proj."):
            out[spec.name] = init_tensor(spec, rng, out[spec.name].dtype)
    return out


def resolve_init(init, model_cfg: ModelConfig, seed: int) -> ParamStore:
    """None -> random init; a path -> checkpoint (config must match); else a ParamStore."""
    if init is None:
        return init_params(model_cfg, seed)
    if isinstance(init, (str, os.PathLike)):
        return load_checkpoint(init, expect=model_cfg)[0]
    check_params(init, model_cfg)
    return init


def finetune(
    corpus: Corpus,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    init=None,
    out_dir=None,
    train_entries: list[Entry] | None = None,
    dev_entries: list[Entry] | None = None,
    steps: int | None = None,
) -> FinetuneResult:
    """Supervised cross-entropy training of every parameter (or, with
    ``train_cfg.freeze``, only the bottleneck and projection).

    ``init`` may be None (from scratch), a checkpoint path or a ParamStore.
    The projection layer is always initialised fresh. Dev accuracy is
    measured every ``eval_every`` steps and at the last step; the parameters
    with the best dev accuracy are kept (earliest wins ties).
    """
    pool = list(train_entries) if train_entries is not None else corpus.entries("train")
    dev = list(dev_entries) if dev_entries is not None else corpus.entries("dev")
    if not pool:
        raise ConfigError("fine-tuning needs a non-empty labeled train split")
    total = train_cfg.finetune_steps if steps is None else steps
    n = min(train_cfg.batch_size, len(pool))
    params = fresh_projection(resolve_init(init, model_cfg, train_cfg.seed), model_cfg, train_cfg.seed)
    names = FROZEN_TRAINABLE if train_cfg.freeze else tuple(params)
    opt = _make_optimizer(train_cfg)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    log = MetricsLog(_out(out_dir, FINETUNE_METRICS))
    best, best_acc, best_step = _copy(params), None, 0
    try:
        for step in range(1, total + 1):
            t0 = time.perf_counter()
            b = make_finetune_batch(corpus, n, step_seed(train_cfg.seed, _STAGE_FINETUNE, step), entries=pool)
            losses, grads = supervised_objective(params, model_cfg, b.features, b.labels, train_cfg.finetune_dual)
            grads = {k: grads[k] for k in names}
            grads, norm = clip_by_global_norm(grads, train_cfg.grad_clip_norm)
            opt.step(params, grads)
            ms = (time.perf_counter() - t0) * 1e3 if train_cfg.log_wall_clock else None
            acc = None
            if dev and (step % train_cfg.eval_every == 0 or step == total):
                acc = evaluate(params, model_cfg, corpus, entries=dev, batch_size=train_cfg.eval_batch_size).accuracy
                if best_acc is None or acc > best_acc:
                    best, best_acc, best_step = _copy(params), acc, step
                    if out_dir is not None:
                        save_checkpoint(
                            _out(out_dir, BEST_CKPT), best, model_cfg,
                            {"stage": "finetune", "step": step, "dev_acc": acc},
                        )
            log.emit(StepMetrics(step, losses, norm, ms, acc))
    finally:
        log.close()
    if best_acc is None:
        best, best_step = _copy(params), total
    final_path = _out(out_dir, FINAL_CKPT)
    if out_dir is not None:
        save_checkpoint(final_path, params, model_cfg, {"stage": "finetune", "step": total})
        if best_acc is None:
            save_checkpoint(_out(out_dir, BEST_CKPT), best, model_cfg, {"stage": "finetune", "step": total})
    return FinetuneResult(best, params, best_acc, best_step, log.records, _out(out_dir, BEST_CKPT))


# -- evaluation ------------------------------------------------------------------


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # (S, S); rows are true classes, columns predictions
    n: int

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "n": self.n, "confusion": self.confusion.tolist()}


def accuracy_from_logits(logits: np.ndarray, labels, n_classes: int) -> EvalResult:
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot evaluate an empty split")
    pred = np.argmax(logits, axis=1)
    conf = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    return EvalResult(float(np.trace(conf) / labels.size), conf, int(labels.size))


def predict_logits(params: ParamStore, cfg: ModelConfig, x: np.ndarray, batch_size: int = 200) -> np.ndarray:
    out = [forward(x[i : i + batch_size], params, cfg, FINETUNE).logits for i in range(0, len(x), batch_size)]
    return np.concatenate(out) if out else np.zeros((0, cfg.n_classes))


def evaluate(
    params,
    model_cfg: ModelConfig,
    corpus: Corpus,
    split: str = "eval",
    entries: list[Entry] | None = None,
    batch_size: int = 200,
) -> EvalResult:
    """Argmax accuracy and confusion matrix on a labeled split.

    ``params`` may be a ParamStore or a checkpoint path.
    """
    if isinstance(params, (str, os.PathLike)):
        params = load_checkpoint(params, expect=model_cfg)[0]
    pool = list(entries) if entries is not None else corpus.entries(split)
    if not pool:
        raise ValueError(f"cannot evaluate an empty split ({split!r})")
    if any(not e.labeled for e in pool):
        raise ValueError("evaluation needs labeled utterances")
    x, _ = corpus.feature_matrix(pool)
    logits = predict_logits(params, model_cfg, x, batch_size)
    return accuracy_from_logits(logits, [e.label for e in pool], model_cfg.n_classes)


# -- probes and sweeps -----------------------------------------------------------


def bottleneck(params: ParamStore, cfg: ModelConfig, x: np.ndarray, batch_size: int = 200) -> np.ndarray:
    out = [forward(x[i : i + batch_size], params, cfg, FINETUNE).e_bn for i in range(0, len(x), batch_size)]
    return np.concatenate(out)


def view_similarity(
    params: ParamStore,
    cfg: ModelConfig,
    corpus: Corpus,
    entries: list[Entry],
    seed: int = 0,
    augment: AugmentConfig = AugmentConfig(),
) -> tuple[float, float]:
    """Mean cosine similarity of bottleneck pairs: (clean_i, aug_i) vs (clean_i, aug_j), i != j.

    Views are built exactly as for a pretraining batch over all of ``entries``.
    """
    b = make_pretrain_batch(corpus, len(entries), seed, augment, entries=list(entries))
    z = l2_normalize(bottleneck(params, cfg, b.features).astype(np.float64))
    za = l2_normalize(bottleneck(params, cfg, b.aug_features).astype(np.float64))
    sim = z @ za.T
    n = len(sim)
    matched = float(np.trace(sim) / n)
    mismatched = float((sim.sum() - np.trace(sim)) / (n * n - n))
    return matched, mismatched


@dataclass
class SweepResult:
    rows: list[dict]  # {pretrain_steps, seed, dev_acc, eval_acc}

    def mean_accuracy(self) -> dict:
        out = {}
        for r in self.rows:
            out.setdefault(r["pretrain_steps"], []).append(r["eval_acc"])
        return {k: float(np.mean(v)) for k, v in sorted(out.items())}

    def table(self) -> list[dict]:
        return [{"pretrain_steps": k, "mean_eval_acc": v} for k, v in self.mean_accuracy().items()]


def step_sweep(
    corpus: Corpus,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    counts,
    seeds=(0,),
    augment: AugmentConfig = AugmentConfig(),
    pretrain_entries: list[Entry] | None = None,
    train_entries: list[Entry] | None = None,
    dev_entries: list[Entry] | None = None,
    eval_entries: list[Entry] | None = None,
    finetune_steps: int | None = None,
    pretrained: dict | None = None,
) -> SweepResult:
    """Accuracy after each pretraining length, with an identical fine-tuning budget.

    Per seed, one pretraining run of ``max(counts)`` steps supplies every
    shorter count as a snapshot; count 0 is the from-scratch baseline.
    ``pretrained`` may carry ready ``{seed: {count: ParamStore}}`` snapshots.
    """
    counts = sorted(set(int(c) for c in counts))
    if any(c < 0 for c in counts):
        raise ValueError("pretrain step counts must be >= 0")
    evals = list(eval_entries) if eval_entries is not None else corpus.entries("eval")
    rows = []
    for seed in seeds:
        tc = _with_seed(train_cfg, seed)
        snaps = (pretrained or {}).get(seed)
        if snaps is None or any(c not in snaps for c in counts):
            snaps = pretrain(
                corpus, model_cfg, tc, augment, entries=pretrain_entries, snapshots=counts, steps=max(counts, default=0)
            ).snapshots
        for c in counts:
            res = finetune(
                corpus, model_cfg, tc, init=snaps[c], train_entries=train_entries,
                dev_entries=dev_entries, steps=finetune_steps,
            )
            acc = evaluate(res.params, model_cfg, corpus, entries=evals, batch_size=tc.eval_batch_size).accuracy
            rows.append({"pretrain_steps": c, "seed": seed, "dev_acc": res.best_dev_acc, "eval_acc": acc})
    return SweepResult(rows)


def _with_seed(tc: TrainConfig, seed: int) -> TrainConfig:
    return TrainConfig.from_dict(dict(tc.to_dict(), seed=seed))
