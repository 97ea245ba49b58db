from cabkws.data.corpus import Batch, Corpus, make_finetune_batch, make_pretrain_batch
from cabkws.data.ingest import (
    CLASS_NAMES,
    COMMANDS,
    SILENCE,
    UNKNOWN,
    ingest_speech_commands,
    ingest_unlabeled,
    segment,
)
from cabkws.data.manifest import SPLITS, UNLABELED, Entry, Manifest, hash_split
from cabkws.data.synth import SynthSpec, synth_dataset, synth_manifest, synth_utterance

__all__ = [
    "Batch",
    "CLASS_NAMES",
    "COMMANDS",
    "Corpus",
    "Entry",
    "Manifest",
    "SILENCE",
    "SPLITS",
    "SynthSpec",
    "UNKNOWN",
    "UNLABELED",
    "hash_split",
    "ingest_speech_commands",
    "ingest_unlabeled",
    "make_finetune_batch",
    "make_pretrain_batch",
    "segment",
    "synth_dataset",
    "synth_manifest",
    "synth_utterance",
]
