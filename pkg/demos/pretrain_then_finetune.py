"""
Pretraining, fine-tuning and the step sweep, at toy scale
=========================================================

The full desk-scale runs take minutes to hours on one CPU core (see the
README for the CLI equivalents). Here a reduced network on a small corpus
shows the whole flow in well under a minute: pretrain on unlabeled audio,
fine-tune on a few labels, compare against training from scratch.
"""

import numpy as np

from cabkws.audio import FbankConfig
from cabkws.data import Corpus, SynthSpec, synth_manifest
from cabkws.model.config import tiny_config
from cabkws.train.config import TrainConfig
from cabkws.train.loop import evaluate, finetune, pretrain, step_sweep, view_similarity
from cabkws.train.gradcheck import grad_check

# a narrow network that still reads the full 98x40 input
cfg = tiny_config(
    n_classes=4, input_frames=98, n_mels=40, channels=4, d_model=40, ffn_dim=80, bottleneck_dim=64, recon_dim=40
)
corpus = Corpus(
    synth_manifest(SynthSpec(n_classes=4, train=24, dev=8, eval=8)),
    fbank_cfg=FbankConfig(n_mels=cfg.n_mels),
    input_frames=cfg.input_frames,
)
tc = TrainConfig(batch_size=16, eval_every=10, learning_rate=1e-3)

# backprop agrees with central differences; the check runs on the smallest
# configuration, where few ReLUs sit close enough to zero to flip
for objective in ("ul", "ce"):
    rep = grad_check(n_coords=200, objective=objective)
    print(f"gradcheck {objective}: max rel err {rep.max_rel_err:.1e} over {rep.n_coords} coordinates")

# pretraining: L_ul falls as the two views of each utterance pull together
pre = pretrain(corpus, cfg, tc, steps=100, snapshots=(50, 100))
print("L_ul first/last 10 steps:",
      round(float(np.mean([m.losses.l_ul for m in pre.metrics[:10]])), 3),
      round(float(np.mean([m.losses.l_ul for m in pre.metrics[-10:]])), 3))
held = corpus.entries("eval")
print("clean/augmented cosine (matched, mismatched):", view_similarity(pre.params, cfg, corpus, held))

# fine-tune on 4 labels per class, from the pretrained weights and from scratch
few = list(corpus.manifest.split("train").per_class(4))
for name, init in (("pretrained", pre.params), ("scratch", None)):
    res = finetune(corpus, cfg, tc, init=init, train_entries=few, steps=60)
    acc = evaluate(res.params, cfg, corpus).accuracy
    print(f"{name:>10}: best dev {res.best_dev_acc:.3f} at step {res.best_step}, eval {acc:.3f}")

# the sweep fine-tunes every pretraining snapshot with the same budget;
# passing the snapshots in skips pretraining again
sweep = step_sweep(
    corpus, cfg, tc, counts=(0, 50, 100), seeds=(0,), train_entries=few, finetune_steps=60,
    pretrained={0: pre.snapshots},
)
for row in sweep.table():
    print(row)
