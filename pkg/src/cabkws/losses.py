"""Loss functions and their gradients.

Contrastive losses share one form. For anchors ``u_i`` and candidates
``v_a`` with logits ``s_ia = u_i . v_a / tau`` over a candidate set ``A_i``
and positives ``P_i`` (same label, inside ``A_i``)::

    loss = mean over {i : |P_i| > 0} of
           (1 / |P_i|) * sum_{p in P_i} -(s_ip - logsumexp_{a in A_i} s_ia)

Within a single view (``paired=False``) ``A_i`` excludes ``i`` itself. With
two views of the same batch (``paired=True``: anchors from one view,
candidates from the other) ``A_i`` is the whole batch and ``i``'s own
counterpart is a positive.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from cabkws.errors import ConfigError, ShapeError

NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossBreakdown:
    l_sim: float = 0.0
    l_x: float = 0.0
    l_x_aug: float = 0.0
    l_z: float = 0.0
    l_theta: float = 0.0
    l_dual: float = 0.0
    l_ul: float = 0.0
    l_ce: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


# -- helpers ---------------------------------------------------------------------


def l2_normalize(e: np.ndarray) -> np.ndarray:
    """Row-wise unit vectors; rows shorter than 1e-12 are divided by 1e-12."""
    norm = np.maximum(np.linalg.norm(e, axis=-1, keepdims=True), NORM_EPS)
    return e / norm


def l2_normalize_backward(dz: np.ndarray, e: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(e, axis=-1, keepdims=True)
    safe = np.maximum(norm, NORM_EPS)
    z = e / safe
    proj = dz - z * (z * dz).sum(axis=-1, keepdims=True)
    return np.where(norm > NORM_EPS, proj, dz) / safe


def _log_softmax(s: np.ndarray, axis=-1) -> np.ndarray:
    m = s.max(axis=axis, keepdims=True)
    return s - m - np.log(np.exp(s - m).sum(axis=axis, keepdims=True))


# -- cross-entropy -----------------------------------------------------------------


def _check_labels(y, n_classes):
    y = np.asarray(y)
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes}), got range [{y.min()}, {y.max()}]")
    return y.astype(np.int64)


def ce_loss(logits: np.ndarray, y) -> float:
    """Mean negative log-likelihood of the true class under softmax(logits)."""
    logits = np.atleast_2d(logits)
    y = _check_labels(y, logits.shape[1])
    logp = _log_softmax(logits.astype(np.float64))
    return float(-logp[np.arange(len(y)), y].mean())


def ce_loss_grad(logits: np.ndarray, y) -> np.ndarray:
    """(softmax(logits) - one_hot(y)) / N."""
    logits = np.atleast_2d(logits)
    y = _check_labels(y, logits.shape[1])
    p = np.exp(_log_softmax(logits))
    p[np.arange(len(y)), y] -= 1.0
    return p / len(y)


# -- contrastive family ----------------------------------------------------------


def _masks(y: np.ndarray, paired: bool):
    n = len(y)
    if n < 2:
        raise ValueError(f"contrastive losses need at least 2 samples, got {n}")
    cand = np.ones((n, n), dtype=bool)
    if not paired:
        np.fill_diagonal(cand, False)
    pos = (y[:, None] == y[None, :]) & cand
    counts = pos.sum(axis=1)
    if not counts.any():
        raise ValueError("no anchor has a positive sample; the loss is undefined")
    return cand, pos, counts


def _contrastive(u, v, y, tau, paired, want_grad):
    if tau <= 0:
        raise ValueError(f"temperature must be > 0, got {tau}")
    u = np.atleast_2d(u)
    v = np.atleast_2d(v)
    if u.shape != v.shape:
        raise ShapeError(f"anchor and candidate shapes differ: {u.shape} vs {v.shape}")
    y = np.asarray(y)
    cand, pos, counts = _masks(y, paired)
    valid = counts > 0
    n_valid = int(valid.sum())

    s = (u @ v.T) / tau
    s_masked = np.where(cand, s, -np.inf)
    logp = _log_softmax(s_masked, axis=1)
    # weight of each (anchor, positive) term in the final mean
    w = np.where(pos, 1.0 / np.maximum(counts, 1)[:, None], 0.0) / n_valid
    loss = float(-(np.where(pos, logp, 0.0) * w).sum())
    if not want_grad:
        return loss
    prob = np.where(cand, np.exp(logp), 0.0)
    ds = (prob * w.sum(axis=1, keepdims=True) - w) / tau
    return loss, ds @ v, ds.T @ u


def l_self(z: np.ndarray, pair_of, tau: float) -> float:
    """Self-supervised contrastive loss; ``pair_of[i]`` is the other view of ``i``.

    ``pair_of`` must be an involution without fixed points.
    """
    pair_of = np.asarray(pair_of)
    n = len(pair_of)
    if n < 2:
        raise ValueError("l_self needs at least 2 samples")
    idx = np.arange(n)
    if np.any(pair_of == idx) or np.any(pair_of[pair_of] != idx):
        raise ValueError("pair_of must be a fixed-point-free involution")
    return l_sup(z, np.minimum(idx, pair_of), tau)


def l_self_grad(z, pair_of, tau):
    pair_of = np.asarray(pair_of)
    idx = np.arange(len(pair_of))
    return l_sup_grad(z, np.minimum(idx, pair_of), tau)


def l_sup(z: np.ndarray, y, tau: float) -> float:
    """Supervised contrastive loss over one view; empty-positive anchors are skipped."""
    return _contrastive(z, z, y, tau, False, False)


def l_sup_grad(z, y, tau):
    _, du, dv = _contrastive(z, z, y, tau, False, True)
    return du + dv


def l_z(z: np.ndarray, theta: np.ndarray, y, tau: float, paired: bool = False) -> float:
    """Anchor ``z_i`` against the anchor vectors ``theta_a``."""
    return _contrastive(z, theta, y, tau, paired, False)


def l_z_grad(z, theta, y, tau, paired=False):
    """Returns (d/dz, d/dtheta)."""
    _, dz, dtheta = _contrastive(z, theta, y, tau, paired, True)
    return dz, dtheta


def l_theta(z: np.ndarray, theta: np.ndarray, y, tau: float, paired: bool = False) -> float:
    """Anchor ``theta_i`` against the representations ``z_a``."""
    return _contrastive(theta, z, y, tau, paired, False)


def l_theta_grad(z, theta, y, tau, paired=False):
    """Returns (d/dz, d/dtheta)."""
    _, dtheta, dz = _contrastive(theta, z, y, tau, paired, True)
    return dz, dtheta


def l_dual(z, theta, y, tau, paired=False) -> float:
    return l_z(z, theta, y, tau, paired) + l_theta(z, theta, y, tau, paired)


# -- regression terms ---------------------------------------------------------------


def l_sim(e_bn: np.ndarray, e_bn_aug: np.ndarray) -> float:
    """Per-dimension mean squared distance between the two views, batch-averaged."""
    e_bn, e_bn_aug = np.atleast_2d(e_bn), np.atleast_2d(e_bn_aug)
    if e_bn.shape != e_bn_aug.shape:
        raise ShapeError(f"bottleneck shapes differ: {e_bn.shape} vs {e_bn_aug.shape}")
    return float(np.mean((e_bn.astype(np.float64) - e_bn_aug) ** 2))


def l_sim_grad(e_bn, e_bn_aug):
    """Gradient w.r.t. ``e_bn``; the one for ``e_bn_aug`` is its negation."""
    e_bn, e_bn_aug = np.atleast_2d(e_bn), np.atleast_2d(e_bn_aug)
    return 2.0 * (e_bn - e_bn_aug) / e_bn.size


def mean_fbank(x: np.ndarray, n_frames=None) -> np.ndarray:
    """Time-average of each fbank matrix over its first ``n_frames`` rows.

    x: (B, T, U) or (T, U). Padding rows beyond ``n_frames`` are ignored.
    """
    x = np.asarray(x)
    single = x.ndim == 2
    if single:
        x = x[None]
    bsz, t, _ = x.shape
    n = np.full(bsz, t) if n_frames is None else np.broadcast_to(np.asarray(n_frames), (bsz,))
    if np.any(n < 1) or np.any(n > t):
        raise ValueError(f"frame counts must lie in [1, {t}]")
    keep = (np.arange(t)[None, :] < n[:, None])[:, :, None]
    means = (x * keep).sum(axis=1) / n[:, None]
    return means[0] if single else means


def l_x(x: np.ndarray, recon: np.ndarray, n_frames=None) -> float:
    """Mean squared error between the time-averaged fbank and its reconstruction."""
    target = np.atleast_2d(mean_fbank(x, n_frames))
    recon = np.atleast_2d(recon)
    if target.shape != recon.shape:
        raise ShapeError(f"reconstruction shape {recon.shape} does not match {target.shape}")
    return float(np.mean((target.astype(np.float64) - recon) ** 2))


def l_x_grad(x, recon, n_frames=None):
    """Gradient w.r.t. ``recon``."""
    target = np.atleast_2d(mean_fbank(x, n_frames))
    recon = np.atleast_2d(recon)
    return 2.0 * (recon - target) / recon.size


l_x_aug = l_x
l_x_aug_grad = l_x_grad


def l_ul(l_sim_value, l_x_value, l_x_aug_value, l_dual_value, weights=(0.8, 0.05, 0.05, 0.1)) -> float:
    """Weighted unsupervised objective."""
    w = tuple(weights)
    if len(w) != 4 or any(x < 0 for x in w):
        raise ConfigError(f"need four non-negative loss weights, got {weights}")
    terms = (l_sim_value, l_x_value, l_x_aug_value, l_dual_value)
    if not all(np.isfinite(t) for t in terms):
        raise ValueError(f"non-finite loss component in {terms}")
    return float(w[0] * l_sim_value + w[1] * l_x_value + w[2] * l_x_aug_value + w[3] * l_dual_value)
