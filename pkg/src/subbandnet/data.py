"""Dataset ingestion, deterministic splits, batching, and a synthetic corpus.

The on-disk layout is one directory per spoken word full of one-second WAVs,
plus a ``_background_noise_`` directory of longer recordings used to
materialize silence samples as random crops. Twelve-way labels: the task's
ten keywords are classes 0-9, silence is 10, and every other word maps to
the unknown class 11.
"""

from __future__ import annotations

import csv
import hashlib
import os
from dataclasses import dataclass

import numpy as np

from . import dsp
from .tensor import Rng

COMMANDS_KEYWORDS = ("yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go")
DIGITS_KEYWORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine")
TASK_KEYWORDS = {"commands": COMMANDS_KEYWORDS, "digits": DIGITS_KEYWORDS}

SILENCE_INDEX = 10
UNKNOWN_INDEX = 11
NUM_CLASSES = 12
SILENCE_WORD = "_silence_"
UNKNOWN_WORD = "_unknown_"
BACKGROUND_DIR = "_background_noise_"

SPLITS = ("train", "dev", "test")
MANIFEST_SCHEMA = "subbandnet.manifest.v1"


@dataclass(frozen=True)
class Entry:
    path: str  # relative to the dataset root
    word: str
    class_index: int
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    task: str
    keywords: tuple[str, ...]
    entries: tuple[Entry, ...]
    noise_paths: tuple[str, ...]

    def class_map(self) -> dict[str, int]:
        mapping = {w: i for i, w in enumerate(self.keywords)}
        mapping[SILENCE_WORD] = SILENCE_INDEX
        mapping[UNKNOWN_WORD] = UNKNOWN_INDEX
        return mapping

    def split_entries(self, split: str) -> list[Entry]:
        if split not in SPLITS:
            raise ValueError(f"unknown split {split!r}")
        return [e for e in self.entries if e.split == split]


@dataclass(frozen=True)
class Batch:
    features: np.ndarray  # (n, 98, 40, 1) float32
    labels: np.ndarray  # (n,) int64


def split_assign(file_name: str, dev_pct: float = 10.0, test_pct: float = 10.0) -> str:
    """Speaker-stable split from the file name alone.

    The speaker token is the base name up to ``_nohash_`` (recording index
    suffixes never move a speaker between splits). The token is hashed with
    SHA-1, mapped to [0, 100) at 0.01 granularity, and compared against the
    dev/test thresholds.
    """
    if not (0 < dev_pct < 100 and 0 < test_pct < 100 and dev_pct + test_pct < 100):
        raise ValueError(f"bad split percentages dev={dev_pct} test={test_pct}")
    stem = os.path.basename(file_name)
    if stem.lower().endswith(".wav"):
        stem = stem[:-4]
    speaker = stem.split("_nohash_")[0]
    digest = hashlib.sha1(speaker.encode("utf-8")).hexdigest()
    percentile = (int(digest, 16) % 10000) / 100.0
    if percentile < dev_pct:
        return "dev"
    if percentile < dev_pct + test_pct:
        return "test"
    return "train"


def scan_dataset(root, task: str, dev_pct: float = 10.0, test_pct: float = 10.0) -> DatasetManifest:
    """Index every WAV under ``root`` with word, class, and split.

    Words outside the task's keyword list land in the unknown pool; nothing
    is dropped silently. Scanning is order-independent (everything sorted).
    """
    if task not in TASK_KEYWORDS:
        raise ValueError(f"unknown task {task!r}; choose from {sorted(TASK_KEYWORDS)}")
    root = os.fspath(root)
    if not os.path.isdir(root):
        raise FileNotFoundError(f"dataset root {root!r} does not exist")
    keywords = TASK_KEYWORDS[task]
    keyword_index = {w: i for i, w in enumerate(keywords)}
    entries = []
    noise = []
    for word in sorted(os.listdir(root)):
        word_dir = os.path.join(root, word)
        if not os.path.isdir(word_dir):
            continue
        wavs = sorted(f for f in os.listdir(word_dir) if f.lower().endswith(".wav"))
        if word == BACKGROUND_DIR:
            noise.extend(f"{word}/{f}" for f in wavs)
            continue
        for f in wavs:
            if word in keyword_index:
                cls, label_word = keyword_index[word], word
            else:
                cls, label_word = UNKNOWN_INDEX, word
            entries.append(
                Entry(
                    path=f"{word}/{f}",
                    word=label_word,
                    class_index=cls,
                    split=split_assign(f, dev_pct, test_pct),
                )
            )
    if not entries:
        raise ValueError(f"no WAV files found under {root!r}")
    return DatasetManifest(
        task=task, keywords=keywords, entries=tuple(entries), noise_paths=tuple(noise)
    )


def write_manifest_csv(path, manifest: DatasetManifest) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {MANIFEST_SCHEMA}\n")
        writer = csv.writer(f)
        writer.writerow(["path", "word", "class", "split"])
        for e in manifest.entries:
            writer.writerow([e.path, e.word, e.class_index, e.split])


class DirectoryStore:
    """Featurizes WAVs below a dataset root, caching features in memory."""

    def __init__(self, root, feature_cache: dict[str, np.ndarray] | None = None):
        self.root = os.fspath(root)
        self._features: dict[str, np.ndarray] = {}
        if feature_cache:
            self._features.update(feature_cache)

    def samples(self, rel_path: str) -> np.ndarray:
        return _read_wav_any_length(os.path.join(self.root, rel_path))

    def features(self, rel_path: str) -> np.ndarray:
        cached = self._features.get(rel_path)
        if cached is None:
            clip = dsp.load_wav(os.path.join(self.root, rel_path))
            cached = dsp.mfcc(clip)[0, :, :, 0]
            self._features[rel_path] = cached
        return cached


def _read_wav_any_length(path) -> np.ndarray:
    """Raw samples without the one-second normalization (noise files are long)."""
    import wave

    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2 or w.getframerate() != dsp.SAMPLE_RATE:
            raise dsp.WavFormatError(f"{path}: noise files must be PCM16 mono 16 kHz")
        raw = w.readframes(w.getnframes())
    return np.frombuffer(raw, dtype="<i2").astype(np.float32) / 32768.0


class InMemoryStore:
    """Clip store backed by in-memory arrays (used by the synthetic corpus)."""

    def __init__(self, clips: dict[str, np.ndarray]):
        self._clips = clips
        self._features: dict[str, np.ndarray] = {}

    def samples(self, rel_path: str) -> np.ndarray:
        return self._clips[rel_path]

    def features(self, rel_path: str) -> np.ndarray:
        cached = self._features.get(rel_path)
        if cached is None:
            cached = dsp.mfcc_from_samples(self._clips[rel_path])[0, :, :, 0]
            self._features[rel_path] = cached
        return cached


def _exact_count(batch_size: int, frac: float) -> int:
    return int(round(batch_size * frac))


def silence_clip(noise_samples: np.ndarray, rng: Rng) -> np.ndarray:
    """Random one-second crop of a noise recording, scaled by a U[0,1] gain."""
    samples = dsp.normalize_length(noise_samples) if noise_samples.size < dsp.CLIP_SAMPLES else noise_samples
    max_offset = samples.size - dsp.CLIP_SAMPLES
    offset = int(rng.integers(0, max_offset + 1))
    gain = float(rng.random())
    return samples[offset : offset + dsp.CLIP_SAMPLES] * gain


def sample_batch(
    manifest: DatasetManifest,
    split: str,
    rng: Rng,
    batch_size: int,
    silence_frac: float = 1.0 / 12.0,
    unknown_frac: float = 1.0 / 12.0,
    store=None,
) -> Batch:
    """Compose a training batch of keyword, unknown, and silence samples.

    Counts follow the requested fractions exactly whenever
    ``batch_size * frac`` is integral. Deterministic given the rng.
    """
    if store is None:
        raise ValueError("sample_batch needs a feature store")
    n_silence = _exact_count(batch_size, silence_frac)
    n_unknown = _exact_count(batch_size, unknown_frac)
    n_keyword = batch_size - n_silence - n_unknown
    if n_keyword < 0:
        raise ValueError("silence_frac + unknown_frac exceed the batch")

    pool = manifest.split_entries(split)
    keyword_pool = [e for e in pool if e.class_index < SILENCE_INDEX]
    unknown_pool = [e for e in pool if e.class_index == UNKNOWN_INDEX]
    if n_keyword and not keyword_pool:
        raise ValueError(f"no keyword samples in split {split!r}")
    if n_unknown and not unknown_pool:
        raise ValueError(f"unknown samples requested but split {split!r} has none")
    if n_silence and not manifest.noise_paths:
        raise ValueError("silence samples requested but no background noise present")

    feats = np.empty((batch_size, dsp.NUM_FRAMES, dsp.NUM_COEFFICIENTS, 1), dtype=np.float32)
    labels = np.empty(batch_size, dtype=np.int64)
    row = 0
    for _ in range(n_keyword):
        e = keyword_pool[int(rng.integers(0, len(keyword_pool)))]
        feats[row, :, :, 0] = store.features(e.path)
        labels[row] = e.class_index
        row += 1
    for _ in range(n_unknown):
        e = unknown_pool[int(rng.integers(0, len(unknown_pool)))]
        feats[row, :, :, 0] = store.features(e.path)
        labels[row] = UNKNOWN_INDEX
        row += 1
    for _ in range(n_silence):
        noise_rel = manifest.noise_paths[int(rng.integers(0, len(manifest.noise_paths)))]
        clip = silence_clip(store.samples(noise_rel), rng)
        feats[row, :, :, 0] = dsp.mfcc_from_samples(clip)[0, :, :, 0]
        labels[row] = SILENCE_INDEX
        row += 1
    return Batch(features=feats, labels=labels)


def uniform_batch(manifest: DatasetManifest, split: str, rng: Rng,
                  batch_size: int, store) -> Batch:
    """Batch drawn uniformly from every entry in the split.

    Used for corpora whose class indices are direct labels (the synthetic
    set), where the keyword/silence/unknown composition does not apply.
    """
    pool = manifest.split_entries(split)
    if not pool:
        raise ValueError(f"split {split!r} is empty")
    feats = np.empty((batch_size, dsp.NUM_FRAMES, dsp.NUM_COEFFICIENTS, 1), dtype=np.float32)
    labels = np.empty(batch_size, dtype=np.int64)
    for row in range(batch_size):
        e = pool[int(rng.integers(0, len(pool)))]
        feats[row, :, :, 0] = store.features(e.path)
        labels[row] = e.class_index
    return Batch(features=feats, labels=labels)


def _tone_complex(class_index: int, rng: Rng) -> np.ndarray:
    """Band-limited tone complex with class-dependent spectral peaks."""
    t = np.arange(dsp.CLIP_SAMPLES, dtype=np.float64) / dsp.SAMPLE_RATE
    f0 = 200.0 + 150.0 * class_index
    clip = np.zeros_like(t)
    for mult, amp in ((1.0, 1.0), (2.13, 0.5), (3.41, 0.25)):
        freq = f0 * mult * (1.0 + 0.02 * (2.0 * float(rng.random()) - 1.0))
        if freq >= dsp.MEL_HIGH_HZ:
            continue
        phase = 2.0 * np.pi * float(rng.random())
        clip += amp * np.sin(2.0 * np.pi * freq * t + phase)
    gain = 0.25 + 0.5 * float(rng.random())
    clip = gain * clip / max(np.abs(clip).max(), 1e-9)
    clip += 0.02 * rng.normal(t.shape)
    return np.clip(clip, -1.0, 1.0).astype(np.float32)


def synthetic_dataset(num_classes: int = 12, per_class: int = 50, rng: Rng | None = None):
    """In-memory labeled corpus of separable tone complexes.

    Returns (manifest, store). Splits are assigned round-robin per class
    (index 1 of every 10 -> dev, index 2 -> test, the rest train), which
    gives every class an 80/10/10 balance when ``per_class`` is a multiple
    of 10 and keeps all three splits populated from ``per_class`` >= 3.
    """
    if per_class < 2:
        raise ValueError(f"per_class must be >= 2, got {per_class}")
    if rng is None:
        rng = Rng(0)
    words = tuple(f"tone{c:02d}" for c in range(num_classes))
    clips: dict[str, np.ndarray] = {}
    entries = []
    for c in range(num_classes):
        for j in range(per_class):
            rel = f"{words[c]}/sample_{j:04d}.wav"
            clips[rel] = _tone_complex(c, rng)
            split = {1: "dev", 2: "test"}.get(j % 10, "train")
            entries.append(Entry(path=rel, word=words[c], class_index=c, split=split))
    manifest = DatasetManifest(
        task="synthetic", keywords=words, entries=tuple(entries), noise_paths=()
    )
    return manifest, InMemoryStore(clips)
