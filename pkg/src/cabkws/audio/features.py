"""Log-mel filterbank features and the FBNK matrix file format."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from cabkws.audio.wav import Waveform

LOG_FLOOR = float(np.log(1e-10))
FBNK_MAGIC = b"FBNK"
_FBNK_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class FbankConfig:
    sample_rate: int = 16000
    frame_length_ms: float = 25.0
    frame_shift_ms: float = 10.0
    n_fft: int = 512
    n_mels: int = 40
    low_hz: float = 20.0
    high_hz: float = 7600.0
    energy_floor: float = 1e-10

    @property
    def win_length(self) -> int:
        return int(round(self.sample_rate * self.frame_length_ms / 1000.0))

    @property
    def hop_length(self) -> int:
        return int(round(self.sample_rate * self.frame_shift_ms / 1000.0))

    @property
    def log_floor(self) -> float:
        return float(np.log(self.energy_floor))

    def num_frames(self, n_samples: int) -> int:
        if n_samples < self.win_length:
            return 0
        return 1 + (n_samples - self.win_length) // self.hop_length


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: FbankConfig) -> np.ndarray:
    """Centre frequency in Hz of each triangular filter."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.low_hz), hz_to_mel(cfg.high_hz), cfg.n_mels + 2))
    return edges[1:-1]


@lru_cache(maxsize=8)
def mel_filterbank(cfg: FbankConfig) -> np.ndarray:
    """Triangular filters on the HTK mel scale, shape (n_mels, n_fft // 2 + 1).

    Each triangle rises from its left edge to 1 at its centre and falls to 0 at
    its right edge, evaluated at the exact frequency of every DFT bin.
    """
    if not 0 <= cfg.low_hz < cfg.high_hz <= cfg.sample_rate / 2:
        raise ValueError("mel range must satisfy 0 <= low < high <= Nyquist")
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.low_hz), hz_to_mel(cfg.high_hz), cfg.n_mels + 2))
    bins = np.fft.rfftfreq(cfg.n_fft, d=1.0 / cfg.sample_rate)
    left, centre, right = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - left) / (centre - left)
    falling = (right - bins) / (right - centre)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


def frame_signal(x: np.ndarray, win: int, hop: int) -> np.ndarray:
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop]
    return frames


def fbank(w: Waveform, cfg: FbankConfig = FbankConfig()) -> np.ndarray:
    """Log-mel filterbank matrix of shape (T, n_mels).

    Per frame: subtract the frame mean, apply a Hamming window, take the
    power spectrum of an ``n_fft``-point real DFT, integrate with the mel
    filters and take the natural log of ``max(energy, energy_floor)``.
    ``T = 1 + (N - win) // hop``.
    """
    if w.sample_rate != cfg.sample_rate:
        raise ValueError(f"expected {cfg.sample_rate} Hz audio, got {w.sample_rate} Hz")
    win, hop = cfg.win_length, cfg.hop_length
    if len(w) < win:
        raise ValueError(f"waveform of {len(w)} samples is shorter than one {win}-sample window")
    if win > cfg.n_fft:
        raise ValueError(f"window of {win} samples exceeds n_fft={cfg.n_fft}")

    frames = frame_signal(w.samples, win, hop)
    frames = (frames - frames.mean(axis=1, keepdims=True)) * np.hamming(win)
    power = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1)) ** 2
    energies = power @ mel_filterbank(cfg).T
    return np.log(np.maximum(energies, cfg.energy_floor))


def pad_frames(feats: np.ndarray, n_frames: int) -> tuple[np.ndarray, int]:
    """Right-pad with zeros (or truncate) to ``n_frames`` rows.

    Returns the fixed-size matrix and the number of real frames it holds.
    """
    t = feats.shape[0]
    if t >= n_frames:
        return feats[:n_frames], n_frames
    out = np.zeros((n_frames, feats.shape[1]), dtype=feats.dtype)
    out[:t] = feats
    return out, t


def write_fbank(path: str | os.PathLike, feats: np.ndarray) -> None:
    """Write a 16-byte FBNK header then float32 little-endian rows."""
    feats = np.asarray(feats)
    if feats.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {feats.shape}")
    t, dim = feats.shape
    with open(path, "wb") as f:
        f.write(_FBNK_HEADER.pack(FBNK_MAGIC, t, dim, 0))
        f.write(np.ascontiguousarray(feats, dtype="<f4").tobytes())


def read_fbank(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < _FBNK_HEADER.size:
        raise ValueError(f"{path}: truncated FBNK header")
    magic, t, dim, _ = _FBNK_HEADER.unpack_from(blob)
    if magic != FBNK_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    body = blob[_FBNK_HEADER.size :]
    if len(body) != 4 * t * dim:
        raise ValueError(f"{path}: expected {t}x{dim} floats, found {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(t, dim).astype(np.float32)
