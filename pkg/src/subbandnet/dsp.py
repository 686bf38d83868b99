"""MFCC front-end: one-second 16 kHz mono clips -> (1, 98, 40, 1) feature maps.

The pipeline is fixed and fully documented so features are bit-reproducible:
frames of 480 samples every 160 samples (98 frames per second), periodic Hann
window, 512-point real FFT, power spectrum, 40 triangular mel filters from
20 Hz to 7600 Hz (HTK mel scale, unnormalized), log with a 1e-10 floor, and
an orthonormal DCT-II keeping all 40 coefficients. No pre-emphasis, no
liftering, no mean normalization. Internals run in float64; the returned
feature map is float32.
"""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass

import numpy as np
from scipy.fft import dct

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000
FRAME_LENGTH = 480  # 30 ms
FRAME_HOP = 160  # 10 ms
NUM_FRAMES = 98
FFT_SIZE = 512
NUM_MEL_FILTERS = 40
NUM_COEFFICIENTS = 40
MEL_LOW_HZ = 20.0
MEL_HIGH_HZ = 7600.0
LOG_FLOOR = 1e-10

CACHE_MAGIC = b"SBFC"
CACHE_VERSION = 1


class WavFormatError(ValueError):
    """The WAV file is not PCM16 mono 16 kHz; the message names the field."""


def normalize_length(samples: np.ndarray) -> np.ndarray:
    """Zero-pad short clips at the end; truncate long ones to one second."""
    samples = np.asarray(samples, dtype=np.float32).reshape(-1)
    if samples.size < CLIP_SAMPLES:
        samples = np.pad(samples, (0, CLIP_SAMPLES - samples.size))
    return samples[:CLIP_SAMPLES]


@dataclass
class AudioClip:
    """Exactly one second of mono 16 kHz audio in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise WavFormatError(
                f"unsupported sample rate {self.sample_rate} Hz (need {SAMPLE_RATE})"
            )
        self.samples = normalize_length(self.samples)


def load_wav(path) -> AudioClip:
    """Read a PCM16 mono 16 kHz RIFF/WAVE file, scaled to [-1, 1]."""
    try:
        with wave.open(str(path), "rb") as w:
            channels = w.getnchannels()
            width = w.getsampwidth()
            rate = w.getframerate()
            if channels != 1:
                raise WavFormatError(
                    f"{path}: unsupported channels={channels} (need mono)"
                )
            if width != 2:
                raise WavFormatError(
                    f"{path}: unsupported sample width={8 * width} bits (need 16-bit PCM)"
                )
            if rate != SAMPLE_RATE:
                raise WavFormatError(
                    f"{path}: unsupported sample rate={rate} Hz (need {SAMPLE_RATE})"
                )
            raw = w.readframes(w.getnframes())
    except wave.Error as exc:
        raise WavFormatError(f"{path}: not a readable PCM WAV file ({exc})") from exc
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0
    return AudioClip(samples=samples)


def frame_count(n_samples: int, frame_len: int, hop: int) -> int:
    """Number of full frames: floor((n - frame_len) / hop) + 1."""
    if frame_len > n_samples:
        raise ValueError(
            f"frame length {frame_len} exceeds signal length {n_samples}"
        )
    return (n_samples - frame_len) // hop + 1


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(
    num_filters: int = NUM_MEL_FILTERS,
    fft_size: int = FFT_SIZE,
    sample_rate: int = SAMPLE_RATE,
    low_hz: float = MEL_LOW_HZ,
    high_hz: float = MEL_HIGH_HZ,
) -> np.ndarray:
    """Triangular mel filters sampled at the FFT bin frequencies.

    Returns a (num_filters, fft_size // 2 + 1) float64 matrix. Triangles are
    placed at points equally spaced on the mel scale and evaluated at the
    exact bin frequencies (no bin snapping), so adjacent filters overlap and
    every row is non-negative.
    """
    points_hz = mel_to_hz(np.linspace(hz_to_mel(low_hz), hz_to_mel(high_hz), num_filters + 2))
    bin_hz = np.arange(fft_size // 2 + 1, dtype=np.float64) * sample_rate / fft_size
    lower = points_hz[:-2, None]
    center = points_hz[1:-1, None]
    upper = points_hz[2:, None]
    rising = (bin_hz - lower) / (center - lower)
    falling = (upper - bin_hz) / (upper - center)
    return np.maximum(0.0, np.minimum(rising, falling))


def _hann_periodic(length: int) -> np.ndarray:
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(length) / length)


_window = _hann_periodic(FRAME_LENGTH)
_filterbank = mel_filterbank()


def mel_spectrogram(samples: np.ndarray) -> np.ndarray:
    """Log-mel energies of a one-second clip, shape (98, 40), float64."""
    samples = normalize_length(samples).astype(np.float64)
    idx = np.arange(FRAME_LENGTH)[None, :] + FRAME_HOP * np.arange(NUM_FRAMES)[:, None]
    frames = samples[idx] * _window
    spectrum = np.fft.rfft(frames, n=FFT_SIZE)
    power = spectrum.real**2 + spectrum.imag**2
    mel = power @ _filterbank.T
    return np.log(np.maximum(mel, LOG_FLOOR))


def mfcc_from_samples(samples: np.ndarray) -> np.ndarray:
    """MFCC feature map (1, 98, 40, 1) float32 for a one-second clip."""
    coeffs = dct(mel_spectrogram(samples), type=2, norm="ortho", axis=1)
    coeffs = coeffs[:, :NUM_COEFFICIENTS]
    return coeffs.astype(np.float32).reshape(1, NUM_FRAMES, NUM_COEFFICIENTS, 1)


def mfcc(clip: AudioClip) -> np.ndarray:
    return mfcc_from_samples(clip.samples)


def write_feature_cache(path, features: dict[str, np.ndarray]) -> None:
    """Write a binary feature cache: one (98, 40) float32 record per key.

    Records are sorted by key so the file is byte-identical across reruns.
    Layout: magic, u32 version, u32 frames, u32 coefficients, u32 count,
    then per record a u32 key length, UTF-8 key, and little-endian float32
    data.
    """
    with open(path, "wb") as f:
        f.write(CACHE_MAGIC)
        f.write(struct.pack("<IIII", CACHE_VERSION, NUM_FRAMES, NUM_COEFFICIENTS, len(features)))
        for key in sorted(features):
            arr = np.ascontiguousarray(features[key], dtype="<f4").reshape(
                NUM_FRAMES, NUM_COEFFICIENTS
            )
            encoded = key.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(arr.tobytes())


def read_feature_cache(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as f:
        if f.read(4) != CACHE_MAGIC:
            raise ValueError(f"{path}: not a feature cache file (bad magic)")
        version, frames, coefficients, count = struct.unpack("<IIII", f.read(16))
        if version != CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        record = frames * coefficients
        out = {}
        for _ in range(count):
            (key_len,) = struct.unpack("<I", f.read(4))
            key = f.read(key_len).decode("utf-8")
            data = np.frombuffer(f.read(4 * record), dtype="<f4")
            out[key] = data.reshape(frames, coefficients).copy()
        return out
