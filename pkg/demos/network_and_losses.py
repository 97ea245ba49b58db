"""
The network and its objectives
==============================

Run one batch through the CNN-attention network, look at the shape of every
stage, and evaluate the pretraining loss and its parts.
"""

import os
import tempfile

import numpy as np

from cabkws.losses import l2_normalize, l_self, l_sup
from cabkws.model.checkpoint import load_checkpoint, save_checkpoint
from cabkws.model.config import ModelConfig
from cabkws.model.network import attention_maps, forward, init_params, num_params, to_frames
from cabkws.train.objectives import unsupervised_objective

cfg = ModelConfig()
params = init_params(cfg, seed=0)
print(f"{num_params(params):,} parameters in {len(params)} tensors")

rng = np.random.default_rng(0)
x = rng.normal(size=(4, 98, 40)).astype(np.float32)
tr = forward(x, params, cfg, "pretrain")
for name in ("conv_maps", "residual", "pooled", "e_tran", "e_feat", "e_bn", "logits", "recon"):
    v = getattr(tr, name)
    print(f"{name:>9}:", [m.shape for m in v] if isinstance(v, list) else v.shape)

# attention weights per layer: one 13x13 map per head, on the pooled frames
maps = attention_maps(to_frames(tr.pooled), params, cfg)
print("attention maps:", [m.shape for m in maps], "rows sum to", maps[0].sum(-1).mean())

# two small hand cases for the contrastive losses
e1, e2 = np.eye(2)
print("l_self on two matched pairs:", l_self(np.array([e1, e1, e2, e2]), [1, 0, 3, 2], 1.0), "= ln(1 + 2/e)")
print("l_sup on three orthonormal vectors:", l_sup(np.eye(3), [0, 0, 1], 1.0), "= ln 2")

# the pretraining objective on a clean batch and a perturbed copy
xa = x + 0.1 * rng.normal(size=x.shape).astype(np.float32)
losses, grads = unsupervised_objective(params, cfg, x, xa, np.arange(4))
print({k: round(v, 4) for k, v in losses.to_dict().items()})

# checkpoints reproduce logits exactly
path = os.path.join(tempfile.mkdtemp(), "model.ckpt")
save_checkpoint(path, params, cfg, {"note": "demo"})
loaded, cfg2, meta = load_checkpoint(path, expect=cfg)
same = np.array_equal(forward(x, loaded, cfg2).logits, forward(x, params, cfg).logits)
print("checkpoint meta:", meta, "identical logits:", same)
print("unit bottleneck norms:", np.linalg.norm(l2_normalize(tr.e_bn), axis=1))
