"""Compare backprop gradients with central finite differences."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cabkws.model.config import ModelConfig, tiny_config
from cabkws.model.network import FINETUNE, PRETRAIN, forward, init_params, relu_masks
from cabkws.train.objectives import supervised_objective, unsupervised_objective

OBJECTIVES = ("ul", "ce")
# Denominator floor for the relative error. Central differences in float64
# with h = 1e-4 carry O(h^2) truncation error of roughly 1e-9, which makes the
# ratio meaningless for gradients of that size.
REL_ERR_FLOOR = 1e-6
# fresh parameter/batch draws tried before giving up on kink-free coordinates
MAX_ATTEMPTS = 5


@dataclass
class GradCheckReport:
    objective: str
    n_coords: int
    h: float
    tolerance: float
    max_rel_err: float
    per_tensor: dict = field(default_factory=dict)  # name -> (coords, max rel err)
    worst: tuple = ()  # (name, flat index, analytic, numeric)
    n_replaced: int = 0  # coordinates redrawn because a ReLU switched within +-h
    attempts: int = 1  # parameter/batch draws used

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err <= self.tolerance)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "n_coords": self.n_coords,
            "h": self.h,
            "tolerance": self.tolerance,
            "max_rel_err": self.max_rel_err,
            "passed": self.passed,
            "worst": list(self.worst),
            "n_replaced": self.n_replaced,
            "attempts": self.attempts,
            "per_tensor": {k: {"coords": c, "max_rel_err": e} for k, (c, e) in self.per_tensor.items()},
        }


def relative_error(analytic, numeric, floor: float = REL_ERR_FLOOR):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


def allocate_coords(sizes: list[int], n_coords: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Pick flat indices so every tensor gets at least one and the rest follow size."""
    n_coords = max(n_coords, len(sizes))
    sizes_arr = np.asarray(sizes, dtype=np.float64)
    extra = n_coords - len(sizes)
    share = np.floor(extra * sizes_arr / sizes_arr.sum()).astype(int)
    counts = np.minimum(1 + share, sizes_arr.astype(int))
    while counts.sum() < n_coords and np.any(counts < sizes_arr):
        open_ = np.flatnonzero(counts < sizes_arr)
        counts[open_[rng.integers(len(open_))]] += 1
    return [np.sort(rng.choice(size, size=cnt, replace=False)) for size, cnt in zip(sizes, counts)]


def make_check_batch(cfg: ModelConfig, rng: np.random.Generator, batch_size: int):
    shape = (batch_size, cfg.input_frames, cfg.n_mels)
    x = rng.normal(size=shape)
    x_aug = x + 0.5 * rng.normal(size=shape)
    n_frames = rng.integers(cfg.input_frames // 2, cfg.input_frames + 1, size=batch_size)
    n_frames_aug = rng.integers(cfg.input_frames // 2, cfg.input_frames + 1, size=batch_size)
    for arr, n in ((x, n_frames), (x_aug, n_frames_aug)):
        for i, k in enumerate(n):
            arr[i, k:] = 0.0
    labels = rng.integers(0, cfg.n_classes, size=batch_size)
    labels[1] = labels[0]  # guarantee a same-class pair for the dual term
    return x, x_aug, n_frames, n_frames_aug, labels


def grad_check(
    cfg: ModelConfig | None = None,
    seed: int = 0,
    n_coords: int = 1000,
    objective: str = "ul",
    h: float = 1e-4,
    tolerance: float = 1e-4,
    batch_size: int = 4,
    finetune_dual: float = 0.0,
) -> GradCheckReport:
    """Check analytic gradients of ``objective`` against central differences.

    Runs in float64 on ``cfg`` (default: :func:`tiny_config`) with random
    parameters and a random batch. ``objective`` is ``"ul"`` (pretraining loss)
    or ``"ce"`` (fine-tuning loss, plus ``finetune_dual * L_dual`` if set).
    """
    if objective not in OBJECTIVES:
        raise ValueError(f"objective must be one of {OBJECTIVES}")
    if n_coords < 1:
        raise ValueError("n_coords must be >= 1")
    cfg = cfg or tiny_config()
    replaced = 0
    for attempt in range(MAX_ATTEMPTS):
        rng = np.random.default_rng([seed, attempt])
        res = _check_once(cfg, rng, seed, n_coords, objective, h, batch_size, finetune_dual)
        replaced += res[-1]
        if res[0] is not None:
            break
    per_tensor, worst, max_err, total, _ = res
    if per_tensor is None:
        raise RuntimeError(f"every draw in {MAX_ATTEMPTS} attempts left a tensor with only kinked coordinates")
    return GradCheckReport(objective, total, h, tolerance, max_err, per_tensor, worst, replaced, attempt + 1)


def _check_once(cfg, rng, seed, n_coords, objective, h, batch_size, finetune_dual):
    """One draw of parameters, batch and coordinates.

    Returns ``(per_tensor, worst, max_err, total, replaced)``; ``per_tensor``
    is None when some tensor had no coordinate clear of a ReLU switch.
    """
    params = init_params(cfg, seed, dtype=np.float64)
    # break the symmetric init (zero biases, unit scales) so every path is exercised
    for name, v in params.items():
        if not name.endswith(".w"):
            v += 0.1 * rng.normal(size=v.shape)
    x, x_aug, nf, nf_aug, labels = make_check_batch(cfg, rng, batch_size)

    if objective == "ul":
        pseudo = np.arange(batch_size)

        def run(want_grad):
            bd, g = unsupervised_objective(params, cfg, x, x_aug, pseudo, nf, nf_aug, want_grad)
            return bd.l_ul, g
    else:

        def run(want_grad):
            bd, g = supervised_objective(params, cfg, x, labels, finetune_dual, want_grad)
            return bd.l_ce + finetune_dual * bd.l_dual, g

    def pattern():
        if objective == "ul":
            trace = forward(np.concatenate([x, x_aug]), params, cfg, PRETRAIN)
        else:
            trace = forward(x, params, cfg, FINETUNE)
        return np.concatenate([m.reshape(-1) for m in relu_masks(trace)])

    _, grads = run(True)
    base = pattern()
    names = list(params)
    picks = allocate_coords([params[k].size for k in names], n_coords, rng)

    per_tensor = {}
    worst = ("", -1, 0.0, 0.0)
    max_err = -1.0
    total = replaced = 0
    for name, idx in zip(names, picks):
        flat = params[name].reshape(-1)
        gflat = grads[name].reshape(-1)
        untried = list(np.setdiff1d(np.arange(flat.size), idx)[rng.permutation(flat.size - len(idx))])
        queue = list(idx)
        analytic, numeric, used = [], [], []
        while queue:
            i = queue.pop(0)
            orig = flat[i]
            flat[i] = orig + h
            f_plus, kinked = run(False)[0], not np.array_equal(pattern(), base)
            flat[i] = orig - h
            f_minus = run(False)[0]
            kinked = kinked or not np.array_equal(pattern(), base)
            flat[i] = orig
            if kinked:
                # a ReLU switched inside [-h, h]: the difference quotient is not a derivative
                replaced += 1
                if not untried:
                    return None, None, None, None, replaced
                queue.append(untried.pop())
                continue
            analytic.append(gflat[i])
            numeric.append((f_plus - f_minus) / (2 * h))
            used.append(i)
        err = relative_error(analytic, numeric)
        k = int(np.argmax(err))
        per_tensor[name] = (len(used), float(err[k]))
        total += len(used)
        if err[k] > max_err:
            max_err = float(err[k])
            worst = (name, int(used[k]), float(analytic[k]), float(numeric[k]))
    return per_tensor, worst, max_err, total, replaced
