"""Waveform container and 16-bit PCM WAV input/output."""

from __future__ import annotations

import os
import wave
from dataclasses import dataclass, field

import numpy as np

from cabkws.errors import UnsupportedFormatError, WavParseError

DEFAULT_SAMPLE_RATE = 16000
PCM16_SCALE = 32768.0


@dataclass(frozen=True, eq=False)
class Waveform:
    """Mono signal with amplitudes nominally in [-1, 1].

    Attributes:
        samples: float64 amplitudes.
        sample_rate: samples per second.
        source_id: opaque identifier of the utterance the samples came from.
    """

    samples: np.ndarray
    sample_rate: int = DEFAULT_SAMPLE_RATE
    source_id: str = field(default="")

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"waveform must be 1-D, got shape {samples.shape}")
        if samples.size < 1:
            raise ValueError("waveform must contain at least one sample")
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def replace(self, samples: np.ndarray) -> "Waveform":
        return Waveform(samples, self.sample_rate, self.source_id)


def resample_linear(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    if src_rate == dst_rate:
        return np.asarray(samples, dtype=np.float64)
    n_out = max(1, int(np.floor(samples.size * dst_rate / src_rate + 0.5)))
    positions = np.arange(n_out) * (src_rate / dst_rate)
    return np.interp(positions, np.arange(samples.size), samples)


def quantize_pcm16(samples: np.ndarray) -> np.ndarray:
    """Round amplitudes onto the 16-bit grid so a write/read cycle is lossless."""
    ints = np.clip(np.round(np.asarray(samples) * PCM16_SCALE), -32768, 32767)
    return ints / PCM16_SCALE


def load_wav(
    path: str | os.PathLike,
    target_rate: int | None = DEFAULT_SAMPLE_RATE,
    source_id: str | None = None,
) -> Waveform:
    """Read a mono 16-bit PCM WAV file.

    Samples are divided by 32768, so -32768 maps to exactly -1.0. When
    ``target_rate`` is given and differs from the header rate, the signal is
    resampled by linear interpolation.

    Raises:
        WavParseError: the RIFF header or chunk layout is malformed.
        UnsupportedFormatError: not PCM, not 16-bit, or not mono.
    """
    try:
        with wave.open(os.fspath(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        if "unknown format" in str(exc):
            raise UnsupportedFormatError(f"{path}: {exc}") from exc
        raise WavParseError(f"{path}: {exc}") from exc
    except EOFError as exc:
        raise WavParseError(f"{path}: truncated header") from exc

    if channels != 1:
        raise UnsupportedFormatError(f"{path}: {channels} channels, only mono is read")
    if width != 2:
        raise UnsupportedFormatError(f"{path}: {8 * width}-bit PCM, only 16-bit is read")
    if len(raw) < 2:
        raise WavParseError(f"{path}: no sample data")

    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / PCM16_SCALE
    if target_rate is not None and rate != target_rate:
        samples = resample_linear(samples, rate, target_rate)
        rate = target_rate
    if source_id is None:
        source_id = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    return Waveform(samples, rate, source_id)


def save_wav(path: str | os.PathLike, w: Waveform) -> None:
    """Write ``w`` as mono 16-bit PCM, clipping to the representable range."""
    ints = np.clip(np.round(w.samples * PCM16_SCALE), -32768, 32767).astype("<i2")
    with wave.open(os.fspath(path), "wb") as out:
        out.setnchannels(1)
        out.setsampwidth(2)
        out.setframerate(int(w.sample_rate))
        out.writeframes(ints.tobytes())
