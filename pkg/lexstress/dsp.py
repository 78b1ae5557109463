"""
Log-mel frontend: 16 kHz PCM audio to 80-dimensional log mel-filterbank frames.

Each frame is 25 ms (400 samples) with a 10 ms (160 sample) shift. A frame is Hann-windowed,
zero-padded to 512 points, turned into a 257-bin power spectrum and projected onto 80 triangular
filters spaced on the HTK mel scale between 20 Hz and 8000 Hz. Energies are floored at `1e-10`
before the natural log.

```pycon
>>> import numpy as np
>>> feats = extract_features(AudioBuffer(samples=np.zeros(16000)))
>>> feats.frames.shape
(98, 80)
>>> bool(np.all(feats.frames == np.log(LOG_FLOOR)))
True

```
"""

from __future__ import annotations

import struct
from functools import lru_cache
from pathlib import Path
from typing import Iterable, List, Literal

import librosa
import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

from lexstress import FormatError

SAMPLE_RATE = 16000
FRAME_LENGTH = 400
FRAME_SHIFT = 160
N_FFT = 512
N_MELS = 80
F_MIN = 20.0
F_MAX = 8000.0
LOG_FLOOR = 1e-10

FEATURE_MAGIC = b"SDFEAT01"
_FEATURE_HEADER = struct.Struct("<8sII")


class AudioBuffer(BaseModel):
    """Mono 16 kHz samples, scaled into [-1, 1]

    :param samples: the waveform
    :type samples: np.ndarray
    :param sample_rate: always 16000; no resampling is performed
    :type sample_rate: int
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    samples: np.ndarray
    sample_rate: Literal[16000] = SAMPLE_RATE

    @field_validator("samples")
    @classmethod
    def _non_empty_mono(cls, v):
        v = np.asarray(v, dtype=np.float64)
        if v.ndim != 1 or not len(v):
            raise ValueError(f"expected a non-empty mono waveform, got shape {v.shape}")
        return v

    def __len__(self):
        return len(self.samples)


class FeatureSequence(BaseModel):
    """`T x 80` log-mel frames, the model input

    :param frames: log-mel values, one row per 10 ms frame
    :type frames: np.ndarray
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    frames: np.ndarray
    frame_length_ms: int = 25
    frame_shift_ms: int = 10

    @field_validator("frames")
    @classmethod
    def _finite_matrix(cls, v):
        v = np.asarray(v)
        if v.ndim != 2 or v.shape[1] != N_MELS:
            raise ValueError(f"expected a T x {N_MELS} matrix, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("feature sequence contains non-finite values")
        return v

    def __len__(self):
        return self.frames.shape[0]


class FeatureStats(BaseModel, frozen=True, extra="forbid"):
    """Corpus-level per-dimension mean and standard deviation used by [`normalize`][lexstress.dsp.normalize]"""

    mean: List[float] = Field(min_length=N_MELS, max_length=N_MELS)
    std: List[float] = Field(min_length=N_MELS, max_length=N_MELS)

    @field_validator("std")
    @classmethod
    def _positive(cls, v):
        if any(not s > 0 for s in v):
            raise ValueError("feature std must be positive in every dimension")
        return v

    @classmethod
    def identity(cls) -> "FeatureStats":
        return cls(mean=[0.0] * N_MELS, std=[1.0] * N_MELS)


def read_wav(path: Path | str) -> AudioBuffer:
    """Read a RIFF/WAVE file that must be 16-bit PCM, mono, 16 kHz

    :raises FormatError: on any other container, encoding, channel count or sample rate
    """
    import soundfile

    path = Path(path)
    try:
        info = soundfile.info(str(path))
    except RuntimeError as e:
        raise FormatError(f"{path}: not a readable audio file ({e})") from None
    if info.format != "WAV":
        raise FormatError(f"{path}: expected a RIFF/WAVE file, got {info.format}")
    if info.subtype != "PCM_16":
        raise FormatError(f"{path}: expected 16-bit PCM, got {info.subtype}")
    if info.channels != 1:
        raise FormatError(f"{path}: expected mono, got {info.channels} channels")
    if info.samplerate != SAMPLE_RATE:
        raise FormatError(f"{path}: expected sample rate {SAMPLE_RATE}, got {info.samplerate}")
    data, _ = soundfile.read(str(path), dtype="int16", always_2d=False)
    if not len(data):
        raise FormatError(f"{path}: contains no samples")
    return AudioBuffer(samples=data.astype(np.float64) / 32768.0)


@lru_cache(maxsize=None)
def mel_filterbank(n_mels: int = N_MELS, n_fft: int = N_FFT, f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    """Unnormalized triangular filters (`n_mels x (n_fft // 2 + 1)`) with edges equally spaced on the HTK mel scale

    ```pycon
    >>> fb = mel_filterbank()
    >>> fb.shape, fb.dtype
    ((80, 257), dtype('float64'))
    >>> bool(fb.min() >= 0), round(float(fb.max()), 2) <= 1.0
    (True, True)

    ```
    """
    fb = librosa.filters.mel(
        sr=SAMPLE_RATE, n_fft=n_fft, n_mels=n_mels, fmin=f_min, fmax=f_max, htk=True, norm=None, dtype=np.float64
    )
    fb.setflags(write=False)
    return fb


def num_frames(num_samples: int) -> int:
    """`floor((num_samples - 400) / 160) + 1`

    ```pycon
    >>> num_frames(16000)
    98
    >>> num_frames(400)
    1

    ```
    """
    if num_samples < FRAME_LENGTH:
        raise ValueError(f"audio has {num_samples} samples, shorter than one {FRAME_LENGTH}-sample frame")
    return (num_samples - FRAME_LENGTH) // FRAME_SHIFT + 1


def extract_features(audio: AudioBuffer) -> FeatureSequence:
    """Log-mel features of an utterance

    :raises ValueError: if the audio is shorter than one frame
    """
    n = num_frames(len(audio))
    frames = np.lib.stride_tricks.sliding_window_view(audio.samples, FRAME_LENGTH)[::FRAME_SHIFT][:n]
    spectrum = np.fft.rfft(frames * np.hanning(FRAME_LENGTH), n=N_FFT, axis=-1)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ mel_filterbank().T
    return FeatureSequence(frames=np.log(np.maximum(mel, LOG_FLOOR)))


def compute_stats(sequences: Iterable[FeatureSequence], std_floor: float = 1e-5) -> FeatureStats:
    """Per-dimension moments over every frame of a corpus"""
    total, total_sq, count = np.zeros(N_MELS), np.zeros(N_MELS), 0
    for seq in sequences:
        frames = seq.frames.astype(np.float64)
        total += frames.sum(axis=0)
        total_sq += (frames**2).sum(axis=0)
        count += frames.shape[0]
    if not count:
        raise ValueError("cannot compute feature statistics over an empty corpus")
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean**2, 0.0))
    if (floored := int(np.sum(std < std_floor))) > 0:
        logger.debug(f"Flooring std of {floored} constant feature dimension(s) at {std_floor}")
    return FeatureStats(mean=mean.tolist(), std=np.maximum(std, std_floor).tolist())


def normalize(feats: FeatureSequence, stats: FeatureStats) -> FeatureSequence:
    """`(value - mean) / std` per dimension

    ```pycon
    >>> import numpy as np
    >>> feats = FeatureSequence(frames=np.ones((3, 80)))
    >>> bool(np.all(normalize(feats, FeatureStats.identity()).frames == 1.0))
    True

    ```
    """
    mean, std = np.asarray(stats.mean), np.asarray(stats.std)
    return FeatureSequence(frames=(feats.frames - mean) / std)


def write_feature_dump(feats: FeatureSequence, path: Path | str) -> Path:
    """Little-endian float32, row-major, after a 16-byte header: magic `SDFEAT01`, u32 T, u32 dim"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frames = np.ascontiguousarray(feats.frames, dtype="<f4")
    with path.open("wb") as f:
        f.write(_FEATURE_HEADER.pack(FEATURE_MAGIC, frames.shape[0], frames.shape[1]))
        f.write(frames.tobytes(order="C"))
    return path


def read_feature_dump(path: Path | str) -> FeatureSequence:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise FormatError(f"{path}: too short to be a feature dump")
    magic, t, dim = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {FEATURE_MAGIC!r}")
    expected = _FEATURE_HEADER.size + 4 * t * dim
    if len(raw) != expected:
        raise FormatError(f"{path}: header says {t}x{dim} frames but file has {len(raw)} bytes, expected {expected}")
    frames = np.frombuffer(raw, dtype="<f4", offset=_FEATURE_HEADER.size).reshape(t, dim)
    return FeatureSequence(frames=frames.astype(np.float32))


if __name__ == "__main__":
    import doctest

    doctest.testmod(optionflags=doctest.ELLIPSIS | doctest.NORMALIZE_WHITESPACE | doctest.IGNORE_EXCEPTION_DETAIL)
