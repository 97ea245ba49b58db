"""Utterance manifests and their CSV form."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from collections import Counter
from dataclasses import dataclass, field, replace

UNLABELED = -1
SPLITS = ("train", "dev", "eval")
CSV_HEADER = ["utterance_id", "path", "label", "split"]


@dataclass(frozen=True)
class Entry:
    utterance_id: str
    path: str
    label: int
    split: str

    @property
    def labeled(self) -> bool:
        return self.label != UNLABELED


@dataclass
class Manifest:
    """An ordered list of entries plus free-form metadata.

    ``path`` is a file path (relative to the corpus root) optionally suffixed
    with ``#seg=k`` for the k-th one-second segment of a longer file, or a
    generator spec such as ``synth:train:c03:0007``.
    """

    entries: list[Entry]
    n_classes: int = 12
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.utterance_id in seen:
                raise ValueError(f"duplicate utterance_id {e.utterance_id!r}")
            seen.add(e.utterance_id)
            if e.split not in SPLITS:
                raise ValueError(f"{e.utterance_id}: unknown split {e.split!r}")
            if e.label != UNLABELED and not 0 <= e.label < self.n_classes:
                raise ValueError(f"{e.utterance_id}: label {e.label} outside [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def _derive(self, entries) -> "Manifest":
        return Manifest(list(entries), self.n_classes, dict(self.meta))

    def split(self, name: str) -> "Manifest":
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return self._derive(e for e in self.entries if e.split == name)

    def unlabeled(self) -> "Manifest":
        """Same entries with every label dropped."""
        return self._derive(replace(e, label=UNLABELED) for e in self.entries)

    def per_class(self, k: int) -> "Manifest":
        """The first ``k`` labeled entries of each class, ordered by utterance_id."""
        taken = Counter()
        keep = []
        for e in sorted(self.entries, key=lambda e: e.utterance_id):
            if e.labeled and taken[e.label] < k:
                taken[e.label] += 1
                keep.append(e)
        return self._derive(keep)

    def counts(self) -> dict:
        """``{split: {label: count}}`` with labels as ints (-1 for unlabeled)."""
        out = {}
        for e in self.entries:
            out.setdefault(e.split, Counter())[e.label] += 1
        return {s: dict(sorted(c.items())) for s, c in out.items()}

    def split_sizes(self) -> dict:
        sizes = Counter(e.split for e in self.entries)
        return {s: sizes.get(s, 0) for s in SPLITS}

    # -- files ---------------------------------------------------------------

    def write_csv(self, path) -> None:
        """CSV with a header row; metadata (if any) goes to ``<path>.meta.json``."""
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for e in self.entries:
                w.writerow([e.utterance_id, e.path, e.label, e.split])
        meta = dict(self.meta, n_classes=self.n_classes)
        with open(f"{path}.meta.json", "w") as f:
            json.dump(meta, f, sort_keys=True, indent=1)
            f.write("\n")

    @classmethod
    def read_csv(cls, path, n_classes: int | None = None) -> "Manifest":
        meta = {}
        side = f"{path}.meta.json"
        if os.path.exists(side):
            with open(side) as f:
                meta = json.load(f)
        n = n_classes if n_classes is not None else int(meta.pop("n_classes", 12))
        meta.pop("n_classes", None)
        with open(path, newline="") as f:
            reader = csv.reader(f)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
            entries = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 4:
                    raise ValueError(f"{path}:{lineno}: expected 4 fields, got {len(row)}")
                uid, p, label, split = row
                entries.append(Entry(uid, p, int(label), split))
        return cls(entries, n, meta)


def hash_split(key: str, fractions=(0.8, 0.1, 0.1)) -> str:
    """Assign ``key`` to a split from the SHA-1 of its text.

    The result depends on nothing but ``key``, so re-ingesting a corpus never
    moves an utterance between splits.
    """
    h = int(hashlib.sha1(key.encode("utf-8")).hexdigest(), 16)
    u = (h % 2**32) / 2**32
    edge = 0.0
    for name, frac in zip(SPLITS, fractions):
        edge += frac
        if u < edge:
            return name
    return SPLITS[-1]
