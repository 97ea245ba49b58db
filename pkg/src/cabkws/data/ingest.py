"""Segmentation and ingestion of WAV directories."""

from __future__ import annotations

import os
import re
import warnings
import wave

import numpy as np

from cabkws.audio.wav import Waveform
from cabkws.data.manifest import UNLABELED, Entry, Manifest, hash_split

COMMANDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
UNKNOWN = 10
SILENCE = 11
CLASS_NAMES = COMMANDS + ("unknown", "silence")
BACKGROUND_DIR = "_background_noise_"
SEG_SUFFIX = "#seg="
_NOHASH = re.compile(r"_nohash_.*$")


def segment_bounds(n_samples: int, seg_samples: int) -> list[tuple[int, int]]:
    """``(start, stop)`` of each segment; a final piece of at least half a segment is kept."""
    if seg_samples < 1:
        raise ValueError("segment length must be at least one sample")
    full, rem = divmod(n_samples, seg_samples)
    bounds = [(i * seg_samples, (i + 1) * seg_samples) for i in range(full)]
    if rem and 2 * rem >= seg_samples:
        bounds.append((full * seg_samples, n_samples))
    return bounds


def segment(w: Waveform, seg_len: float = 1.0) -> list[Waveform]:
    """Cut ``w`` into consecutive ``seg_len``-second pieces.

    A trailing remainder shorter than half a segment is dropped; a longer one
    is zero-padded to full length.
    """
    if seg_len <= 0:
        raise ValueError(f"seg_len must be > 0, got {seg_len}")
    n = int(round(seg_len * w.sample_rate))
    out = []
    for k, (a, b) in enumerate(segment_bounds(len(w), n)):
        piece = np.zeros(n)
        piece[: b - a] = w.samples[a:b]
        out.append(Waveform(piece, w.sample_rate, f"{w.source_id}{SEG_SUFFIX}{k}"))
    return out


def split_path(path: str) -> tuple[str, int | None]:
    """``"a/b.wav#seg=3"`` -> ``("a/b.wav", 3)``; plain paths give ``None``."""
    if SEG_SUFFIX in path:
        p, k = path.rsplit(SEG_SUFFIX, 1)
        return p, int(k)
    return path, None


def _num_frames(path: str) -> tuple[int, int]:
    with wave.open(path, "rb") as w:
        return w.getnframes(), w.getframerate()


def _read_list(path) -> set[str]:
    if path is None or not os.path.exists(path):
        return set()
    with open(path) as f:
        return {line.strip().replace("\\", "/") for line in f if line.strip()}


def _wavs(d: str) -> list[str]:
    return sorted(f for f in os.listdir(d) if f.lower().endswith(".wav"))


def ingest_speech_commands(
    root_dir,
    validation_list=None,
    testing_list=None,
    seg_len: float = 1.0,
) -> Manifest:
    """Manifest for a Speech Commands style tree of ``<word>/<file>.wav``.

    The ten command words map to 0-9, every other word folder to ``unknown``
    (10), and each one-second segment of the files under
    ``_background_noise_`` becomes a ``silence`` (11) entry. List files hold
    ``word/file.wav`` lines; they default to ``validation_list.txt`` and
    ``testing_list.txt`` in ``root_dir``. Without them, splits come from a
    hash of the speaker part of the file name (text before ``_nohash_``), so
    one speaker never straddles two splits.
    """
    root = os.fspath(root_dir)
    if not os.path.isdir(root):
        raise FileNotFoundError(f"speech commands root {root!r} does not exist")
    dev = _read_list(validation_list or os.path.join(root, "validation_list.txt"))
    test = _read_list(testing_list or os.path.join(root, "testing_list.txt"))
    use_lists = bool(dev or test)

    entries = []
    for word in sorted(os.listdir(root)):
        d = os.path.join(root, word)
        if not os.path.isdir(d) or word == BACKGROUND_DIR:
            continue
        files = _wavs(d)
        if not files:
            warnings.warn(f"class folder {word!r} holds no WAV files", stacklevel=2)
            continue
        label = COMMANDS.index(word) if word in COMMANDS else UNKNOWN
        for fname in files:
            rel = f"{word}/{fname}"
            if use_lists:
                split = "dev" if rel in dev else "eval" if rel in test else "train"
            else:
                split = hash_split(_NOHASH.sub("", fname))
            entries.append(Entry(rel, rel, label, split))

    bg = os.path.join(root, BACKGROUND_DIR)
    if os.path.isdir(bg):
        for fname in _wavs(bg):
            rel = f"{BACKGROUND_DIR}/{fname}"
            n, rate = _num_frames(os.path.join(bg, fname))
            for k, _ in enumerate(segment_bounds(n, int(round(seg_len * rate)))):
                uid = f"{rel}{SEG_SUFFIX}{k}"
                entries.append(Entry(uid, uid, SILENCE, hash_split(uid)))
    else:
        warnings.warn("no _background_noise_ folder; the silence class is empty", stacklevel=2)
    return Manifest(entries, n_classes=len(CLASS_NAMES), meta={"classes": list(CLASS_NAMES)})


def ingest_unlabeled(root_dir, seg_len: float = 1.0, n_classes: int = 12) -> Manifest:
    """Every WAV under ``root_dir`` (recursively), cut into segments, unlabeled."""
    root = os.fspath(root_dir)
    if not os.path.isdir(root):
        raise FileNotFoundError(f"directory {root!r} does not exist")
    entries = []
    for dirpath, dirnames, _ in os.walk(root):
        dirnames.sort()
        for fname in _wavs(dirpath):
            full = os.path.join(dirpath, fname)
            rel = os.path.relpath(full, root).replace(os.sep, "/")
            n, rate = _num_frames(full)
            for k, _ in enumerate(segment_bounds(n, int(round(seg_len * rate)))):
                uid = f"{rel}{SEG_SUFFIX}{k}"
                entries.append(Entry(uid, uid, UNLABELED, hash_split(uid)))
    return Manifest(entries, n_classes=n_classes)
