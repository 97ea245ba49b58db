"""Scalar training objectives with exact gradients for every parameter."""

from __future__ import annotations

import numpy as np

from cabkws import losses as LS
from cabkws.losses import LossBreakdown
from cabkws.model.config import ModelConfig
from cabkws.model.network import FINETUNE, PRETRAIN, ParamStore, backward, forward


def unsupervised_objective(
    params: ParamStore,
    cfg: ModelConfig,
    x: np.ndarray,
    x_aug: np.ndarray,
    labels: np.ndarray,
    n_frames=None,
    n_frames_aug=None,
    want_grad: bool = True,
):
    """Weighted pretraining loss on paired clean/augmented views.

    Both views run through the same parameters in one batch. The clean view's
    normalised bottleneck supplies the anchor vectors ``theta*``, the
    augmented view's supplies ``z``; each sample's counterpart in the other
    view is its positive.

    Returns ``(LossBreakdown, grads)``; ``grads`` is None when
    ``want_grad`` is False.
    """
    n = x.shape[0]
    trace = forward(np.concatenate([x, x_aug]), params, cfg, PRETRAIN)
    e, e_aug = trace.e_bn[:n], trace.e_bn[n:]
    rec, rec_aug = trace.recon[:n], trace.recon[n:]
    tau = cfg.temperature
    w_sim, w_x, w_xa, w_dual = cfg.loss_weights

    theta = LS.l2_normalize(e)
    z = LS.l2_normalize(e_aug)
    vals = dict(
        l_sim=LS.l_sim(e, e_aug),
        l_x=LS.l_x(x, rec, n_frames),
        l_x_aug=LS.l_x(x_aug, rec_aug, n_frames_aug),
        l_z=LS.l_z(z, theta, labels, tau, paired=True),
        l_theta=LS.l_theta(z, theta, labels, tau, paired=True),
    )
    vals["l_dual"] = vals["l_z"] + vals["l_theta"]
    vals["l_ul"] = LS.l_ul(vals["l_sim"], vals["l_x"], vals["l_x_aug"], vals["l_dual"], cfg.loss_weights)
    breakdown = LossBreakdown(**vals)
    if not want_grad:
        return breakdown, None

    d_sim = w_sim * LS.l_sim_grad(e, e_aug)
    dz1, dth1 = LS.l_z_grad(z, theta, labels, tau, paired=True)
    dz2, dth2 = LS.l_theta_grad(z, theta, labels, tau, paired=True)
    d_e = d_sim + LS.l2_normalize_backward(w_dual * (dth1 + dth2), e)
    d_e_aug = -d_sim + LS.l2_normalize_backward(w_dual * (dz1 + dz2), e_aug)
    d_rec = np.concatenate([
        w_x * LS.l_x_grad(x, rec, n_frames),
        w_xa * LS.l_x_grad(x_aug, rec_aug, n_frames_aug),
    ])
    grads = backward(params, cfg, trace, d_e_bn=np.concatenate([d_e, d_e_aug]), d_recon=d_rec)
    return breakdown, grads


def class_anchors(params: ParamStore, labels) -> np.ndarray:
    """Normalised projection-weight columns for each label, shape (N, U_bn)."""
    return LS.l2_normalize(params["proj.w"][:, np.asarray(labels)].T)


def supervised_objective(
    params: ParamStore,
    cfg: ModelConfig,
    x: np.ndarray,
    labels: np.ndarray,
    dual_weight: float = 0.0,
    want_grad: bool = True,
):
    """Cross-entropy on the class logits, optionally plus ``dual_weight * L_dual``.

    The dual term uses the normalised bottleneck as ``z`` and the normalised
    projection column of each sample's label as ``theta*``; it is skipped when
    the batch has no same-label pair.
    """
    labels = np.asarray(labels)
    trace = forward(x, params, cfg, FINETUNE)
    vals = dict(l_ce=LS.ce_loss(trace.logits, labels))
    use_dual = dual_weight > 0 and len(labels) > 1 and len(np.unique(labels)) < len(labels)
    if use_dual:
        tau = cfg.temperature
        z = LS.l2_normalize(trace.e_bn)
        theta = class_anchors(params, labels)
        vals["l_z"] = LS.l_z(z, theta, labels, tau)
        vals["l_theta"] = LS.l_theta(z, theta, labels, tau)
        vals["l_dual"] = vals["l_z"] + vals["l_theta"]
    breakdown = LossBreakdown(**vals)
    if not want_grad:
        return breakdown, None

    d_logits = LS.ce_loss_grad(trace.logits, labels)
    d_e = None
    d_theta_cols = None
    if use_dual:
        dz1, dth1 = LS.l_z_grad(z, theta, labels, tau)
        dz2, dth2 = LS.l_theta_grad(z, theta, labels, tau)
        d_e = LS.l2_normalize_backward(dual_weight * (dz1 + dz2), trace.e_bn)
        cols = params["proj.w"][:, labels].T
        d_theta_cols = LS.l2_normalize_backward(dual_weight * (dth1 + dth2), cols)
    grads = backward(params, cfg, trace, d_e_bn=d_e, d_logits=d_logits)
    if d_theta_cols is not None:
        np.add.at(grads["proj.w"].T, labels, d_theta_cols)
    return breakdown, grads
