"""A seeded 12-class tone/chirp corpus that stands in for spoken keywords."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from cabkws.audio.augment import mix_noise, synth_noise
from cabkws.audio.wav import Waveform, quantize_pcm16
from cabkws.data.manifest import SPLITS, Entry, Manifest

SYNTH_SCHEME = "synth"


@dataclass(frozen=True)
class SynthSpec:
    """Corpus size, class prototypes and jitter ranges.

    Class ``c`` has base frequency ``base_f0 + f0_step * c``. Even classes are
    steady tones; odd classes are linear chirps rising by ``chirp_span`` Hz
    over the event. Every utterance draws its own f0 (+-``f0_jitter``
    relative), amplitude (+-``amp_jitter`` relative), onset
    (+-``onset_jitter`` s) and background white-noise SNR.
    """

    n_classes: int = 12
    train: int = 200
    dev: int = 25
    eval: int = 25
    seed: int = 0
    sample_rate: int = 16000
    duration: float = 1.0
    event_duration: float = 0.5
    onset: float = 0.25
    onset_jitter: float = 0.1
    base_f0: float = 300.0
    f0_step: float = 100.0
    f0_jitter: float = 0.03
    chirp_span: float = 300.0
    amplitude: float = 0.5
    amp_jitter: float = 0.2
    ramp: float = 0.02
    snr_min: float = 0.0
    snr_max: float = 20.0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        for s in SPLITS:
            if getattr(self, s) < 0:
                raise ValueError(f"{s} count must be >= 0")
        if self.train + self.dev + self.eval < 1:
            raise ValueError("per-class counts must include at least one utterance")
        if self.snr_min > self.snr_max:
            raise ValueError("snr range must satisfy min <= max")
        top = self.f0_of(self.n_classes - 1) * (1 + self.f0_jitter) + self.chirp_span
        if top >= self.sample_rate / 2:
            raise ValueError(f"highest class frequency {top:.0f} Hz reaches Nyquist")

    @classmethod
    def for_per_class(cls, per_class: int, **kw) -> "SynthSpec":
        """``per_class`` training utterances with dev/eval at one eighth of that (80/10/10)."""
        held = max(1, round(per_class / 8))
        return cls(train=per_class, dev=held, eval=held, **kw)

    def count(self, split: str) -> int:
        return getattr(self, split)

    def f0_of(self, c: int) -> float:
        return self.base_f0 + self.f0_step * c

    def kind_of(self, c: int) -> str:
        return "tone" if c % 2 == 0 else "chirp"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown synth keys: {sorted(unknown)}")
        return cls(**d)


def utterance_id(split: str, c: int, i: int) -> str:
    return f"synth-{split}-c{c:02d}-{i:04d}"


def generator_path(split: str, c: int, i: int) -> str:
    return f"{SYNTH_SCHEME}:{split}:{c}:{i}"


def parse_generator_path(path: str) -> tuple[str, int, int]:
    scheme, split, c, i = path.split(":")
    if scheme != SYNTH_SCHEME or split not in SPLITS:
        raise ValueError(f"not a synth generator path: {path!r}")
    return split, int(c), int(i)


def synth_utterance(spec: SynthSpec, split: str, c: int, i: int) -> Waveform:
    """Utterance ``i`` of class ``c`` in ``split``.

    Seeded by ``(seed, split, c, i)`` alone, so growing the corpus never
    changes utterances that already exist.
    """
    rng = np.random.default_rng([spec.seed, SPLITS.index(split), c, i])
    sr = spec.sample_rate
    n = int(round(spec.duration * sr))
    f0 = spec.f0_of(c) * (1 + rng.uniform(-spec.f0_jitter, spec.f0_jitter))
    amp = spec.amplitude * (1 + rng.uniform(-spec.amp_jitter, spec.amp_jitter))
    onset = spec.onset + rng.uniform(-spec.onset_jitter, spec.onset_jitter)
    phase0 = rng.uniform(0, 2 * np.pi)
    snr = rng.uniform(spec.snr_min, spec.snr_max)
    noise_seed = int(rng.integers(0, 2**63 - 1))
    mix_seed = int(rng.integers(0, 2**63 - 1))

    t = np.arange(n) / sr - onset
    slope = spec.chirp_span / spec.event_duration if spec.kind_of(c) == "chirp" else 0.0
    phase = phase0 + 2 * np.pi * (f0 * t + 0.5 * slope * t**2)
    # raised-cosine ramps at both ends of the event
    ramp = max(spec.ramp, 1.0 / sr)
    env = np.clip(np.minimum(t, spec.event_duration - t) / ramp, 0.0, 1.0)
    env = 0.5 - 0.5 * np.cos(np.pi * env)
    clean = Waveform(amp * env * np.sin(phase), sr, utterance_id(split, c, i))
    noise = synth_noise("white", n, noise_seed, sr)
    mixed = mix_noise(clean, noise, snr, mix_seed)
    return mixed.replace(quantize_pcm16(mixed.samples))


def synth_manifest(spec: SynthSpec) -> Manifest:
    entries = [
        Entry(utterance_id(s, c, i), generator_path(s, c, i), c, s)
        for s in SPLITS
        for c in range(spec.n_classes)
        for i in range(spec.count(s))
    ]
    meta = {"synth": spec.to_dict()}
    if spec.n_classes != 12:
        meta["nonstandard_n_classes"] = True
    return Manifest(entries, n_classes=spec.n_classes, meta=meta)


def synth_dataset(spec: SynthSpec) -> tuple[Manifest, dict[str, Waveform]]:
    """Manifest plus every generated waveform, keyed by utterance_id."""
    manifest = synth_manifest(spec)
    waves = {}
    for e in manifest:
        waves[e.utterance_id] = synth_utterance(spec, *parse_generator_path(e.path))
    return manifest, waves
