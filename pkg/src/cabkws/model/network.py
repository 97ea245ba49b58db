"""The keyword-spotting network: parameters, forward pass with trace, backward pass.

Data flow for one batch (default sizes)::

    X (B, 98, 40)
      -> conv_stack        (B, 25, 10, 32)   two 3x3 stride-2 convs + ReLU
      -> residual_stack    (B, 25, 10, 32)   conv-GN-ReLU-conv-GN + skip, ReLU
      -> soft_pool         (B, 13, 10, 32)   attention pooling over 2 frames
      -> reshape           (B, 13, 320)      channel-major: index c * 10 + f
      -> transformer       (B, 13, 320)      sinusoidal PE + pre-norm layers
      -> feature_select    (B, 640)          last 2 frames concatenated
      -> heads             E_bn (B, 800), logits (B, 12), recon (B, 40)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from cabkws.errors import ConfigError, GraphError, ShapeError
from cabkws.model import layers as L
from cabkws.model.config import ModelConfig

PRETRAIN = "pretrain"
FINETUNE = "finetune"
MODES = (PRETRAIN, FINETUNE)

ParamStore = dict  # name -> np.ndarray, insertion order == param_specs order


@dataclass(frozen=True)
class ParamSpec:
    name: str
    shape: tuple[int, ...]
    kind: str  # "weight", "bias", "scale" or "shift"
    fan_in: int = 0
    fan_out: int = 0


def param_specs(cfg: ModelConfig) -> list[ParamSpec]:
    """Every learnable tensor, in the fixed order used for storage and checks."""
    k, c = cfg.kernel, cfg.channels
    specs: list[ParamSpec] = []

    def conv(name, cin, cout):
        specs.append(ParamSpec(f"{name}.w", (k, k, cin, cout), "weight", k * k * cin, k * k * cout))
        specs.append(ParamSpec(f"{name}.b", (cout,), "bias"))

    def norm(name, dim):
        specs.append(ParamSpec(f"{name}.g", (dim,), "scale"))
        specs.append(ParamSpec(f"{name}.b", (dim,), "shift"))

    def dense(name, din, dout):
        specs.append(ParamSpec(f"{name}.w", (din, dout), "weight", din, dout))
        specs.append(ParamSpec(f"{name}.b", (dout,), "bias"))

    for i in range(cfg.conv_layers):
        conv(f"conv.{i}", 1 if i == 0 else c, c)
    for i in range(cfg.residual_blocks):
        conv(f"res.{i}.conv1", c, c)
        norm(f"res.{i}.gn1", c)
        conv(f"res.{i}.conv2", c, c)
        norm(f"res.{i}.gn2", c)
    f = cfg.conv_freq_bins
    specs.append(ParamSpec("pool.w", (f, c), "weight", f, 1))
    specs.append(ParamSpec("pool.b", (c,), "bias"))
    d = cfg.d_model
    for i in range(cfg.attn_layers):
        norm(f"tf.{i}.ln1", d)
        dense(f"tf.{i}.attn.qkv", d, 3 * d)
        dense(f"tf.{i}.attn.out", d, d)
        norm(f"tf.{i}.ln2", d)
        dense(f"tf.{i}.ffn.1", d, cfg.ffn_dim)
        dense(f"tf.{i}.ffn.2", cfg.ffn_dim, d)
    dense("bn", cfg.feat_dim, cfg.bottleneck_dim)
    dense("proj", cfg.bottleneck_dim, cfg.n_classes)
    dense("recon", cfg.bottleneck_dim, cfg.recon_dim)
    return specs


def init_tensor(spec: ParamSpec, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    if spec.kind == "weight":
        s = np.sqrt(6.0 / (spec.fan_in + spec.fan_out))
        return rng.uniform(-s, s, size=spec.shape).astype(dtype)
    if spec.kind == "scale":
        return np.ones(spec.shape, dtype=dtype)
    return np.zeros(spec.shape, dtype=dtype)


def init_params(cfg: ModelConfig, seed: int, dtype=np.float32) -> ParamStore:
    """Glorot-uniform weights, zero biases, unit norm scales; deterministic per seed."""
    cfg.validate()
    rng = np.random.default_rng(seed)
    return {spec.name: init_tensor(spec, rng, dtype) for spec in param_specs(cfg)}


def num_params(params: ParamStore) -> int:
    return int(sum(v.size for v in params.values()))


def check_params(params: ParamStore, cfg: ModelConfig) -> None:
    specs = param_specs(cfg)
    if list(params) != [s.name for s in specs]:
        raise ConfigError("parameter names/order do not match the model config")
    for s in specs:
        if params[s.name].shape != s.shape:
            raise ConfigError(f"{s.name}: shape {params[s.name].shape}, config expects {s.shape}")


def _expect(x: np.ndarray, shape: tuple, stage: str) -> None:
    if x.shape != shape:
        raise ShapeError(f"{stage}: expected shape {shape}, got {x.shape}")


@dataclass
class ForwardTrace:
    """Activations of one forward pass, batch-first.

    ``recon`` is None for fine-tune traces: that head is not part of the
    fine-tuning graph.
    """

    mode: str
    conv_maps: list
    residual: np.ndarray
    pooled: np.ndarray
    e_tran: np.ndarray
    e_feat: np.ndarray
    e_bn: np.ndarray
    logits: np.ndarray
    recon: np.ndarray | None
    caches: dict = field(default_factory=dict, repr=False)

    @property
    def batch_size(self) -> int:
        return self.e_bn.shape[0]


# -- stages -----------------------------------------------------------------


def _conv_stack(x, params, cfg, caches):
    h = x[..., None]  # single input channel
    maps = []
    for i in range(cfg.conv_layers):
        h, cc = L.conv2d_forward(h, params[f"conv.{i}.w"], params[f"conv.{i}.b"], cfg.stride)
        h, mask = L.relu_forward(h)
        caches[f"conv.{i}"] = (cc, mask)
        maps.append(h)
    return h, maps


def _residual_stack(h, params, cfg, caches):
    g, eps = cfg.gn_groups, cfg.norm_eps
    for i in range(cfg.residual_blocks):
        p = f"res.{i}"
        y, c1 = L.conv2d_forward(h, params[f"{p}.conv1.w"], params[f"{p}.conv1.b"], 1)
        y, n1 = L.group_norm_forward(y, params[f"{p}.gn1.g"], params[f"{p}.gn1.b"], g, eps)
        y, m1 = L.relu_forward(y)
        y, c2 = L.conv2d_forward(y, params[f"{p}.conv2.w"], params[f"{p}.conv2.b"], 1)
        y, n2 = L.group_norm_forward(y, params[f"{p}.gn2.g"], params[f"{p}.gn2.b"], g, eps)
        h, m_out = L.relu_forward(y + h)
        caches[p] = (c1, n1, m1, c2, n2, m_out)
    return h


def _transformer(e, params, cfg, caches, pe=None):
    bsz, p, d = e.shape
    if pe is None:
        pe = L.sinusoidal_encoding(p, d, e.dtype)
    h = e + pe
    for i in range(cfg.attn_layers):
        t = f"tf.{i}"
        a, ln1 = L.layer_norm_forward(h, params[f"{t}.ln1.g"], params[f"{t}.ln1.b"], cfg.norm_eps)
        a, att = L.attention_forward(
            a, params[f"{t}.attn.qkv.w"], params[f"{t}.attn.qkv.b"],
            params[f"{t}.attn.out.w"], params[f"{t}.attn.out.b"], cfg.heads,
        )
        h = h + a
        f, ln2 = L.layer_norm_forward(h, params[f"{t}.ln2.g"], params[f"{t}.ln2.b"], cfg.norm_eps)
        f, x1 = L.linear_forward(f, params[f"{t}.ffn.1.w"], params[f"{t}.ffn.1.b"])
        f, relu = L.relu_forward(f)
        f, x2 = L.linear_forward(f, params[f"{t}.ffn.2.w"], params[f"{t}.ffn.2.b"])
        h = h + f
        caches[t] = (ln1, att, ln2, x1, relu, x2)
    return h


def _heads(e_feat, params, mode, caches):
    pre, x_bn = L.linear_forward(e_feat, params["bn.w"], params["bn.b"])
    e_bn, bn_mask = L.relu_forward(pre)
    logits = e_bn @ params["proj.w"] + params["proj.b"]
    recon = e_bn @ params["recon.w"] + params["recon.b"] if mode == PRETRAIN else None
    caches["heads"] = (x_bn, bn_mask)
    return e_bn, logits, recon


# -- public single-stage helpers ------------------------------------------------


def conv_stack(x: np.ndarray, params: ParamStore, cfg: ModelConfig) -> np.ndarray:
    """(B, T, F) fbank batch -> (B, T', F', C) feature map."""
    return _conv_stack(x, params, cfg, {})[0]


def residual_stack(h: np.ndarray, params: ParamStore, cfg: ModelConfig) -> np.ndarray:
    return _residual_stack(h, params, cfg, {})


def soft_pool(h: np.ndarray, params: ParamStore, cfg: ModelConfig) -> np.ndarray:
    return L.soft_pool_forward(h, params["pool.w"], params["pool.b"], cfg.pool_group)[0]


def transformer(e: np.ndarray, params: ParamStore, cfg: ModelConfig, pe=None) -> np.ndarray:
    """(B, P, D) -> (B, P, D). ``pe`` overrides the sinusoidal encoding."""
    return _transformer(e, params, cfg, {}, pe)


def attention_maps(e: np.ndarray, params: ParamStore, cfg: ModelConfig) -> list[np.ndarray]:
    """Per-layer attention weights, each (B, heads, P, P)."""
    caches: dict = {}
    _transformer(e, params, cfg, caches)
    return [caches[f"tf.{i}"][1][4] for i in range(cfg.attn_layers)]


def feature_select(e_tran: np.ndarray, r: int) -> np.ndarray:
    """Concatenate the last ``r`` frames (in time order): (B, P, D) -> (B, r * D)."""
    bsz, p, d = e_tran.shape
    if p < r:
        raise ShapeError(f"cannot select the last {r} frames of a {p}-frame sequence")
    return e_tran[:, p - r :].reshape(bsz, r * d)


def heads(e_feat: np.ndarray, params: ParamStore, mode: str = PRETRAIN):
    """E_feat -> (E_bn, logits, recon); recon is None in fine-tune mode."""
    return _heads(e_feat, params, mode, {})


def to_frames(pooled: np.ndarray) -> np.ndarray:
    """(B, P, F, C) -> (B, P, C * F), channel-major within each frame."""
    bsz, p, f, c = pooled.shape
    return pooled.transpose(0, 1, 3, 2).reshape(bsz, p, c * f)


def from_frames(frames: np.ndarray, f: int, c: int) -> np.ndarray:
    bsz, p, _ = frames.shape
    return frames.reshape(bsz, p, c, f).transpose(0, 1, 3, 2)


# -- full network ---------------------------------------------------------------


def forward(x: np.ndarray, params: ParamStore, cfg: ModelConfig, mode: str = PRETRAIN) -> ForwardTrace:
    """Run the whole network on a batch (B, T, F) or a single (T, F) matrix."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    x = np.asarray(x)
    if x.ndim == 2:
        x = x[None]
    dtype = params["bn.w"].dtype
    x = x.astype(dtype, copy=False)
    bsz = x.shape[0]
    c, f = cfg.channels, cfg.conv_freq_bins
    _expect(x, (bsz, cfg.input_frames, cfg.n_mels), "input")

    caches: dict = {}
    h, maps = _conv_stack(x, params, cfg, caches)
    _expect(h, (bsz, cfg.conv_frames, f, c), "conv_stack")
    res = _residual_stack(h, params, cfg, caches)
    _expect(res, h.shape, "residual_stack")
    pooled, pool_cache = L.soft_pool_forward(res, params["pool.w"], params["pool.b"], cfg.pool_group)
    caches["pool"] = pool_cache
    _expect(pooled, (bsz, cfg.pooled_frames, f, c), "soft_pool")
    frames = to_frames(pooled)
    _expect(frames, (bsz, cfg.pooled_frames, cfg.d_model), "reshape")
    e_tran = _transformer(frames, params, cfg, caches)
    _expect(e_tran, frames.shape, "transformer")
    e_feat = feature_select(e_tran, cfg.selected_frames)
    _expect(e_feat, (bsz, cfg.feat_dim), "feature_select")
    e_bn, logits, recon = _heads(e_feat, params, mode, caches)
    _expect(e_bn, (bsz, cfg.bottleneck_dim), "bottleneck")
    _expect(logits, (bsz, cfg.n_classes), "projection")
    if recon is not None:
        _expect(recon, (bsz, cfg.recon_dim), "reconstruction")

    return ForwardTrace(
        mode=mode, conv_maps=maps, residual=res, pooled=pooled, e_tran=e_tran,
        e_feat=e_feat, e_bn=e_bn, logits=logits, recon=recon, caches=caches,
    )


def backward(
    params: ParamStore,
    cfg: ModelConfig,
    trace: ForwardTrace,
    d_e_bn: np.ndarray | None = None,
    d_logits: np.ndarray | None = None,
    d_recon: np.ndarray | None = None,
) -> ParamStore:
    """Reverse-mode gradients of a scalar loss given its gradients at the outputs.

    Any output gradient may be None (treated as zero). Returns a dict with a
    gradient for every parameter, in ``param_specs`` order.

    Raises:
        GraphError: ``d_recon`` was given for a fine-tune trace.
    """
    if d_recon is not None and trace.recon is None:
        raise GraphError("reconstruction gradient requested on a fine-tune trace")
    caches = trace.caches
    grads = {name: np.zeros_like(v) for name, v in params.items()}
    e_bn = trace.e_bn

    d_bn = np.zeros_like(e_bn) if d_e_bn is None else np.array(d_e_bn, dtype=e_bn.dtype)
    if d_logits is not None:
        d_logits = np.asarray(d_logits, dtype=e_bn.dtype)
        grads["proj.w"] += e_bn.T @ d_logits
        grads["proj.b"] += d_logits.sum(axis=0)
        d_bn += d_logits @ params["proj.w"].T
    if d_recon is not None:
        d_recon = np.asarray(d_recon, dtype=e_bn.dtype)
        grads["recon.w"] += e_bn.T @ d_recon
        grads["recon.b"] += d_recon.sum(axis=0)
        d_bn += d_recon @ params["recon.w"].T

    x_bn, bn_mask = caches["heads"]
    d_pre = L.relu_backward(d_bn, bn_mask)
    d_feat, grads["bn.w"], grads["bn.b"] = L.linear_backward(d_pre, x_bn, params["bn.w"])

    bsz, p, d = trace.e_tran.shape
    r = cfg.selected_frames
    dh = np.zeros_like(trace.e_tran)
    dh[:, p - r :] = d_feat.reshape(bsz, r, d)

    for i in reversed(range(cfg.attn_layers)):
        t = f"tf.{i}"
        ln1, att, ln2, x1, relu, x2 = caches[t]
        df, grads[f"{t}.ffn.2.w"], grads[f"{t}.ffn.2.b"] = L.linear_backward(dh, x2, params[f"{t}.ffn.2.w"])
        df = L.relu_backward(df, relu)
        df, grads[f"{t}.ffn.1.w"], grads[f"{t}.ffn.1.b"] = L.linear_backward(df, x1, params[f"{t}.ffn.1.w"])
        df, grads[f"{t}.ln2.g"], grads[f"{t}.ln2.b"] = L.layer_norm_backward(df, ln2, params[f"{t}.ln2.g"])
        dh = dh + df
        da, grads[f"{t}.attn.qkv.w"], grads[f"{t}.attn.qkv.b"], grads[f"{t}.attn.out.w"], grads[f"{t}.attn.out.b"] = (
            L.attention_backward(dh, att, params[f"{t}.attn.qkv.w"], params[f"{t}.attn.out.w"])
        )
        da, grads[f"{t}.ln1.g"], grads[f"{t}.ln1.b"] = L.layer_norm_backward(da, ln1, params[f"{t}.ln1.g"])
        dh = dh + da

    d_pooled = from_frames(dh, cfg.conv_freq_bins, cfg.channels)
    dres, grads["pool.w"], grads["pool.b"] = L.soft_pool_backward(d_pooled, caches["pool"], params["pool.w"])

    for i in reversed(range(cfg.residual_blocks)):
        pfx = f"res.{i}"
        c1, n1, m1, c2, n2, m_out = caches[pfx]
        dsum = L.relu_backward(dres, m_out)
        dy, grads[f"{pfx}.gn2.g"], grads[f"{pfx}.gn2.b"] = L.group_norm_backward(dsum, n2, params[f"{pfx}.gn2.g"])
        dy, grads[f"{pfx}.conv2.w"], grads[f"{pfx}.conv2.b"] = L.conv2d_backward(dy, c2, params[f"{pfx}.conv2.w"])
        dy = L.relu_backward(dy, m1)
        dy, grads[f"{pfx}.gn1.g"], grads[f"{pfx}.gn1.b"] = L.group_norm_backward(dy, n1, params[f"{pfx}.gn1.g"])
        dy, grads[f"{pfx}.conv1.w"], grads[f"{pfx}.conv1.b"] = L.conv2d_backward(dy, c1, params[f"{pfx}.conv1.w"])
        dres = dsum + dy

    dh = dres
    for i in reversed(range(cfg.conv_layers)):
        cc, mask = caches[f"conv.{i}"]
        dh = L.relu_backward(dh, mask)
        dh, grads[f"conv.{i}.w"], grads[f"conv.{i}.b"] = L.conv2d_backward(
            dh, cc, params[f"conv.{i}.w"], need_dx=i > 0
        )
    return grads


def relu_masks(trace: ForwardTrace) -> list[np.ndarray]:
    """Every ReLU on/off pattern recorded in ``trace``, in network order."""
    c = trace.caches
    cfg_layers = sorted(k for k in c if k.startswith("conv."))
    masks = [c[k][1] for k in cfg_layers]
    for k in sorted(k for k in c if k.startswith("res.")):
        masks += [c[k][2], c[k][5]]
    for k in sorted(k for k in c if k.startswith("tf.")):
        masks.append(c[k][4])
    masks.append(c["heads"][1])
    return masks
