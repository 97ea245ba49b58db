"""Waveform augmentation: speed and volume perturbation, noise mixing."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from cabkws.audio.wav import Waveform

PINK_OCTAVES = 8
MAX_OFFSET_ATTEMPTS = 10


def speed_perturb(w: Waveform, lambda_speed: float) -> Waveform:
    """Return ``A(lambda_speed * t)`` resampled onto the original rate.

    The output has ``round(N / lambda_speed)`` samples; sample ``n`` is the
    input linearly interpolated at position ``n * lambda_speed`` (positions
    past the last sample hold the last value).
    """
    if not lambda_speed > 0:
        raise ValueError(f"lambda_speed must be > 0, got {lambda_speed}")
    n_in = len(w)
    n_out = int(np.floor(n_in / lambda_speed + 0.5))
    if n_out < 1:
        raise ValueError(f"lambda_speed={lambda_speed} leaves no samples from {n_in}")
    if lambda_speed == 1.0:
        return w.replace(w.samples.copy())
    positions = np.arange(n_out) * lambda_speed
    return w.replace(np.interp(positions, np.arange(n_in), w.samples))


def volume_perturb(w: Waveform, lambda_volume: float) -> Waveform:
    """Scale amplitudes by ``lambda_volume`` and hard-clip to [-1, 1]."""
    if lambda_volume < 0:
        raise ValueError(f"lambda_volume must be >= 0, got {lambda_volume}")
    return w.replace(np.clip(w.samples * lambda_volume, -1.0, 1.0))


def _power(x: np.ndarray) -> float:
    return float(np.mean(np.square(x)))


def noise_gain(clean_power: float, noise_power: float, snr_db: float) -> float:
    return float(np.sqrt(clean_power / (noise_power * 10.0 ** (snr_db / 10.0))))


def mix_noise(
    clean: Waveform,
    noise: Waveform,
    snr_db: float,
    rng_seed: int,
    clip: bool = True,
) -> Waveform:
    """Add a window of ``noise`` to ``clean`` at exactly ``snr_db``.

    The window start is drawn from ``rng_seed``; noise shorter than the clean
    signal is tiled first. The noise is scaled so that, before clipping,
    ``10 log10(P_clean / P_scaled_noise) == snr_db`` with powers measured as
    mean squared amplitude over the mixed region. Pass ``clip=False`` to get
    the pre-clip mixture.
    """
    if clean.sample_rate != noise.sample_rate:
        raise ValueError(
            f"sample rates differ: clean {clean.sample_rate}, noise {noise.sample_rate}"
        )
    p_clean = _power(clean.samples)
    if p_clean == 0.0:
        raise ValueError("clean signal has zero power; SNR is undefined")

    n = len(clean)
    source = noise.samples
    if source.size < n:
        source = np.tile(source, -(-n // source.size))

    rng = np.random.default_rng(rng_seed)
    for _ in range(MAX_OFFSET_ATTEMPTS):
        offset = int(rng.integers(0, source.size - n + 1))
        window = source[offset : offset + n]
        p_noise = _power(window)
        if p_noise > 0.0:
            break
    else:
        raise ValueError(
            f"noise window had zero power after {MAX_OFFSET_ATTEMPTS} offset draws"
        )

    mixed = clean.samples + noise_gain(p_clean, p_noise, snr_db) * window
    if clip:
        mixed = np.clip(mixed, -1.0, 1.0)
    return clean.replace(mixed)


def _trailing_zeros(n: np.ndarray) -> np.ndarray:
    """Count of trailing zero bits for positive integers."""
    lowbit = n & -n
    return np.log2(lowbit).astype(np.int64)


def synth_noise(
    kind: str, length: int, rng_seed: int, sample_rate: int = 16000
) -> Waveform:
    """Generate white or pink noise.

    White noise is i.i.d. uniform on (-0.5, 0.5). Pink noise sums
    ``PINK_OCTAVES`` held random rows (Voss-McCartney: row k is redrawn at
    samples whose index has k trailing zero bits) plus a white row, and is
    then peak-normalised to 0.5.
    """
    if length < 1:
        raise ValueError(f"noise length must be >= 1, got {length}")
    rng = np.random.default_rng(rng_seed)
    if kind == "white":
        return Waveform(rng.uniform(-0.5, 0.5, size=length), sample_rate, f"white-{rng_seed}")
    if kind != "pink":
        raise ValueError(f"unknown noise kind {kind!r}; expected 'white' or 'pink'")

    idx = np.arange(length, dtype=np.int64)
    row_of = np.full(length, -1, dtype=np.int64)
    row_of[1:] = np.minimum(_trailing_zeros(idx[1:]), PINK_OCTAVES - 1)
    total = rng.uniform(-0.5, 0.5, size=length)
    for k in range(PINK_OCTAVES):
        # row k holds each fresh value until its next update
        starts = np.flatnonzero((row_of == k) | (idx == 0))
        values = rng.uniform(-0.5, 0.5, size=starts.size)
        total += np.repeat(values, np.diff(np.append(starts, length)))
    peak = np.max(np.abs(total))
    return Waveform(total * (0.5 / peak), sample_rate, f"pink-{rng_seed}")


@dataclass(frozen=True)
class AugmentSpec:
    """One concrete draw of augmentation parameters."""

    lambda_speed: float = 1.0
    lambda_volume: float = 1.0
    snr_db: float | None = None
    rng_seed: int = 0


@dataclass(frozen=True)
class AugmentConfig:
    """Sampling ranges for augmentation draws."""

    speed_min: float = 0.8
    speed_max: float = 1.2
    volume_min: float = 0.5
    volume_max: float = 1.5
    snr_min: float = 0.0
    snr_max: float = 20.0
    noise_kinds: tuple[str, ...] = ("white", "pink")

    def __post_init__(self):
        if not 0 < self.speed_min <= self.speed_max:
            raise ValueError("speed range must satisfy 0 < min <= max")
        if not 0 <= self.volume_min <= self.volume_max:
            raise ValueError("volume range must satisfy 0 <= min <= max")
        if self.snr_min > self.snr_max:
            raise ValueError("snr range must satisfy min <= max")
        object.__setattr__(self, "noise_kinds", tuple(self.noise_kinds))

    def draw(self, rng: np.random.Generator, with_noise: bool = True) -> AugmentSpec:
        return AugmentSpec(
            lambda_speed=float(rng.uniform(self.speed_min, self.speed_max)),
            lambda_volume=float(rng.uniform(self.volume_min, self.volume_max)),
            snr_db=float(rng.uniform(self.snr_min, self.snr_max)) if with_noise else None,
            rng_seed=int(rng.integers(0, 2**63 - 1)),
        )

    def draw_noise(self, rng: np.random.Generator) -> tuple[float, int]:
        """SNR and seed for a noise-only corruption."""
        return float(rng.uniform(self.snr_min, self.snr_max)), int(rng.integers(0, 2**63 - 1))


def corrupt(w: Waveform, snr_db: float, rng_seed: int, kinds=("white", "pink")) -> Waveform:
    """Mix seeded synthetic noise into ``w`` at ``snr_db``."""
    rng = np.random.default_rng(rng_seed)
    kind = kinds[int(rng.integers(len(kinds)))]
    noise = synth_noise(kind, len(w), int(rng.integers(0, 2**63 - 1)), w.sample_rate)
    return mix_noise(w, noise, snr_db, int(rng.integers(0, 2**63 - 1)))


def apply_augment(
    w: Waveform, spec: AugmentSpec, noise: Waveform | None = None, kinds=("white", "pink")
) -> Waveform:
    """Speed, then volume, then (if ``spec.snr_db`` is set) noise.

    With no explicit ``noise`` waveform, seeded synthetic noise of one of
    ``kinds`` is used.
    """
    out = speed_perturb(w, spec.lambda_speed)
    out = volume_perturb(out, spec.lambda_volume)
    if spec.snr_db is None:
        return out
    if noise is None:
        return corrupt(out, spec.snr_db, spec.rng_seed, kinds)
    return mix_noise(out, noise, spec.snr_db, spec.rng_seed)
