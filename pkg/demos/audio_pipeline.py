"""
From WAV file to log-mel features
=================================

Load a waveform, perturb it the way pretraining does (speed, then volume,
then noise at a chosen SNR) and turn it into the 98x40 log-mel matrix the
network reads.
"""

import os
import tempfile

import numpy as np

from cabkws.audio import (
    FbankConfig,
    Waveform,
    fbank,
    load_wav,
    mix_noise,
    save_wav,
    speed_perturb,
    synth_noise,
    volume_perturb,
)

# a one-second 440 Hz tone, written as 16-bit PCM and read back
t = np.arange(16000) / 16000
tone = Waveform(0.4 * np.sin(2 * np.pi * 440 * t), 16000, "tone")
tmp = tempfile.mkdtemp()
path = os.path.join(tmp, "tone.wav")
save_wav(path, tone)
w = load_wav(path)
print("samples:", len(w), "max abs diff after PCM round trip:", np.abs(w.samples - tone.samples).max())

# speed 1.1 shortens the clip to 14545 samples; volume just scales
fast = speed_perturb(w, 1.1)
quiet = volume_perturb(fast, 0.5)
print("after speed 1.1:", len(fast), "samples; peak after volume 0.5:", np.abs(quiet.samples).max())

# pink noise mixed at exactly 5 dB SNR (measured before clipping)
noise = synth_noise("pink", 8000, rng_seed=1)
noisy = mix_noise(quiet, noise, snr_db=5.0, rng_seed=2, clip=False)
added = noisy.samples - quiet.samples
snr = 10 * np.log10(np.mean(quiet.samples**2) / np.mean(added**2))
print(f"measured SNR: {snr:.12f} dB")

# log-mel features: 25 ms windows every 10 ms, 40 mel bands
cfg = FbankConfig()
print("clean fbank:", fbank(w, cfg).shape, " perturbed fbank:", fbank(noisy, cfg).shape)

# the band holding 440 Hz carries the most energy in the middle frames
feats = fbank(w, cfg)
print("loudest band per frame (frames 40-44):", feats[40:45].argmax(axis=1))
