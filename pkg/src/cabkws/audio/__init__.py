from cabkws.audio.augment import (
    AugmentConfig,
    AugmentSpec,
    apply_augment,
    corrupt,
    mix_noise,
    speed_perturb,
    synth_noise,
    volume_perturb,
)
from cabkws.audio.features import (
    LOG_FLOOR,
    FbankConfig,
    fbank,
    mel_filterbank,
    pad_frames,
    read_fbank,
    write_fbank,
)
from cabkws.audio.wav import Waveform, load_wav, quantize_pcm16, save_wav

__all__ = [
    "AugmentConfig",
    "AugmentSpec",
    "FbankConfig",
    "LOG_FLOOR",
    "Waveform",
    "apply_augment",
    "corrupt",
    "fbank",
    "load_wav",
    "mel_filterbank",
    "mix_noise",
    "pad_frames",
    "quantize_pcm16",
    "read_fbank",
    "save_wav",
    "speed_perturb",
    "synth_noise",
    "volume_perturb",
    "write_fbank",
]
