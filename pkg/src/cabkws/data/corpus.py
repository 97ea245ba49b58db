"""Waveform lookup, cached features and minibatch assembly."""

from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from cabkws.audio.augment import AugmentConfig, apply_augment, corrupt
from cabkws.audio.features import FbankConfig, fbank, pad_frames
from cabkws.audio.wav import Waveform, load_wav
from cabkws.data.ingest import segment, split_path
from cabkws.data.manifest import Entry, Manifest
from cabkws.data.synth import SYNTH_SCHEME, SynthSpec, parse_generator_path, synth_utterance

INPUT_FRAMES = 98


class Corpus:
    """Resolves manifest entries to waveforms and padded fbank matrices.

    Entries are looked up in ``waveforms`` first, then regenerated from a
    ``synth:`` path, then read from ``root``. Files shorter than
    ``seg_len`` are zero-padded to it; ``#seg=k`` paths select the k-th
    segment of a longer file. Clean features are cached per utterance, and so
    are waveforms when ``cache_waveforms`` is set (as float32, which holds
    16-bit PCM values exactly).
    """

    def __init__(
        self,
        manifest: Manifest,
        root=None,
        waveforms: dict | None = None,
        fbank_cfg: FbankConfig = FbankConfig(),
        input_frames: int = INPUT_FRAMES,
        seg_len: float = 1.0,
        cache_waveforms: bool = True,
    ):
        self.manifest = manifest
        self.root = os.fspath(root) if root is not None else None
        self.waveforms = waveforms or {}
        self.fbank_cfg = fbank_cfg
        self.input_frames = input_frames
        self.seg_len = seg_len
        synth = manifest.meta.get("synth")
        self.synth_spec = SynthSpec.from_dict(synth) if synth else None
        self._feats: dict[str, tuple[np.ndarray, int]] = {}
        self._waves: dict[str, np.ndarray] | None = {} if cache_waveforms else None
        self._load = lru_cache(maxsize=8)(self._load_file)

    def entries(self, split: str | None = None) -> list[Entry]:
        return list(self.manifest if split is None else self.manifest.split(split))

    def _load_file(self, path: str) -> Waveform:
        full = path if self.root is None else os.path.join(self.root, path)
        return load_wav(full, self.fbank_cfg.sample_rate)

    def waveform(self, e: Entry) -> Waveform:
        if self._waves is None:
            return self._resolve(e)
        hit = self._waves.get(e.utterance_id)
        if hit is not None:
            return Waveform(hit, self.fbank_cfg.sample_rate, e.utterance_id)
        w = self._resolve(e)
        f32 = w.samples.astype(np.float32)
        if w.sample_rate == self.fbank_cfg.sample_rate and np.array_equal(f32, w.samples):
            self._waves[e.utterance_id] = f32
        return w

    def _resolve(self, e: Entry) -> Waveform:
        if e.utterance_id in self.waveforms:
            return self.waveforms[e.utterance_id]
        if e.path.startswith(SYNTH_SCHEME + ":"):
            if self.synth_spec is None:
                raise ValueError(f"{e.utterance_id}: synth path but the manifest carries no synth spec")
            return synth_utterance(self.synth_spec, *parse_generator_path(e.path))
        path, seg = split_path(e.path)
        w = self._load(path)
        if seg is not None:
            pieces = segment(w, self.seg_len)
            if seg >= len(pieces):
                raise ValueError(f"{e.utterance_id}: segment {seg} beyond the {len(pieces)} in {path}")
            w = pieces[seg]
        n = int(round(self.seg_len * w.sample_rate))
        if len(w) < n:
            w = w.replace(np.concatenate([w.samples, np.zeros(n - len(w))]))
        return Waveform(w.samples, w.sample_rate, e.utterance_id)

    def featurize(self, w: Waveform) -> tuple[np.ndarray, int]:
        """Padded (input_frames, n_mels) float32 matrix and its real frame count."""
        m, t = pad_frames(fbank(w, self.fbank_cfg), self.input_frames)
        return m.astype(np.float32), t

    def features(self, e: Entry) -> tuple[np.ndarray, int]:
        hit = self._feats.get(e.utterance_id)
        if hit is None:
            hit = self._feats[e.utterance_id] = self.featurize(self.waveform(e))
        return hit

    def feature_matrix(self, entries: list[Entry]) -> tuple[np.ndarray, np.ndarray]:
        feats = [self.features(e) for e in entries]
        return np.stack([f for f, _ in feats]), np.array([t for _, t in feats])


@dataclass
class Batch:
    """N fixed-size feature matrices with labels; pretraining adds a second view.

    The candidate set of anchor i is every other index; its positives are the
    candidates sharing its label.
    """

    features: np.ndarray  # (N, T, U)
    n_frames: np.ndarray  # (N,)
    labels: np.ndarray  # (N,)
    ids: list[str]
    aug_features: np.ndarray | None = None
    aug_n_frames: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.labels)

    def candidates(self, i: int) -> list[int]:
        return [a for a in range(len(self)) if a != i]

    def positives(self, i: int) -> list[int]:
        return [p for p in self.candidates(i) if self.labels[p] == self.labels[i]]


def _draw(pool: list[Entry], n: int, rng: np.random.Generator) -> list[Entry]:
    if n > len(pool):
        raise ValueError(f"cannot draw {n} distinct utterances from {len(pool)}")
    return [pool[k] for k in rng.choice(len(pool), size=n, replace=False)]


def make_pretrain_batch(
    corpus: Corpus,
    n: int,
    seed: int,
    augment: AugmentConfig = AugmentConfig(),
    split: str = "train",
    entries: list[Entry] | None = None,
) -> Batch:
    """N distinct utterances as (noisy clean view, augmented view) pairs.

    Clean view: the utterance with seeded noise at a drawn SNR. Augmented
    view: the same utterance after speed and volume perturbation with fresh
    draws, then noise by the same protocol. Labels are the positions 0..N-1.
    """
    if n < 2:
        raise ValueError(f"pretraining batches need N >= 2, got {n}")
    rng = np.random.default_rng(seed)
    picked = _draw(entries if entries is not None else corpus.entries(split), n, rng)
    x, nf, xa, nfa = [], [], [], []
    for e in picked:
        w = corpus.waveform(e)
        snr, noise_seed = augment.draw_noise(rng)
        m, t = corpus.featurize(corrupt(w, snr, noise_seed, augment.noise_kinds))
        x.append(m)
        nf.append(t)
        spec = augment.draw(rng, with_noise=True)
        m, t = corpus.featurize(apply_augment(w, spec, kinds=augment.noise_kinds))
        xa.append(m)
        nfa.append(t)
    return Batch(
        np.stack(x), np.array(nf), np.arange(n), [e.utterance_id for e in picked], np.stack(xa), np.array(nfa)
    )


def make_finetune_batch(
    corpus: Corpus, n: int, seed: int, split: str = "train", entries: list[Entry] | None = None
) -> Batch:
    """N distinct labeled utterances with their clean features."""
    if n < 1:
        raise ValueError(f"batch size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    picked = _draw(entries if entries is not None else corpus.entries(split), n, rng)
    bad = [e.utterance_id for e in picked if not e.labeled]
    if bad:
        raise ValueError(f"unlabeled utterance(s) drawn for supervised training: {bad[:3]}")
    x, nf = corpus.feature_matrix(picked)
    return Batch(x, nf, np.array([e.label for e in picked]), [e.utterance_id for e in picked])
