"""
The synthetic keyword corpus and training batches
=================================================

Twelve classes of tones (even classes) and rising chirps (odd classes) at
300, 400, ..., 1400 Hz, each utterance with its own jitter and background
noise. Utterances are generated on demand from their manifest path, so the
corpus costs nothing until it is read.
"""

import numpy as np

from cabkws.audio import AugmentConfig
from cabkws.data import Corpus, SynthSpec, make_finetune_batch, make_pretrain_batch, synth_manifest

spec = SynthSpec(train=200, dev=50, eval=50, seed=0)
manifest = synth_manifest(spec)
print("split sizes:", manifest.split_sizes())
print("first entry:", manifest.entries[0])
print("class 5 is a", spec.kind_of(5), "at", spec.f0_of(5), "Hz")

corpus = Corpus(manifest)

# low-label subset: the first 25 training utterances of every class
low = manifest.split("train").per_class(25)
print("low-label counts:", low.counts()["train"])

# a supervised batch carries true labels
b = make_finetune_batch(corpus, 8, seed=0, entries=list(low))
print("finetune batch:", b.features.shape, "labels", b.labels)

# a pretraining batch pairs a noisy view with an augmented one; the labels
# are just positions, so each utterance is only its own positive
pb = make_pretrain_batch(corpus, 8, seed=0, augment=AugmentConfig())
print("pretrain batch:", pb.features.shape, pb.aug_features.shape, "pseudo-labels", pb.labels)
print("real frames in the augmented views:", pb.aug_n_frames)

# speed 1.1 leaves 89 real frames, zero-padded to 98
fixed = AugmentConfig(speed_min=1.1, speed_max=1.1)
pb = make_pretrain_batch(corpus, 4, seed=1, augment=fixed)
print("with speed 1.1:", pb.aug_n_frames, "padding is zero:", not np.any(pb.aug_features[:, 89:]))
