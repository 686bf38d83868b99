"""SGD training loop, evaluation, multi-trial runner, and checkpoints.

Training follows a two-phase constant learning-rate schedule (default
0.001 for 24k steps then 0.0001 for 3k steps) with plain SGD, no momentum,
and mean-reduced batch loss, so the learning rate is batch-size independent.
Everything is deterministic given the seed in single-threaded mode.
"""

from __future__ import annotations

import csv
import hashlib
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import data as data_mod
from . import flops as flops_mod
from . import subband
from .tensor import Rng

CHECKPOINT_MAGIC = b"SBNCKPT1"
CHECKPOINT_VERSION = 1
METRICS_SCHEMA = "subbandnet.metrics.v1"


class TrainingDivergedError(RuntimeError):
    """Loss or a gradient went non-finite; training aborts with diagnostics."""


class CheckpointError(ValueError):
    """Checkpoint file is corrupt, incompatible, or from a different model."""


@dataclass(frozen=True)
class TrainingConfig:
    lr_phase1: float = 0.001
    steps_phase1: int = 24000
    lr_phase2: float = 0.0001
    steps_phase2: int = 3000
    batch_size: int = 100
    dropout: float = 0.5
    seed: int = 0
    eval_interval: int = 400
    eval_batch_size: int = 100
    silence_frac: float = 1.0 / 12.0
    unknown_frac: float = 1.0 / 12.0

    def __post_init__(self):
        if self.steps_phase1 < 0 or self.steps_phase2 < 0:
            raise ValueError("step counts must be >= 0")
        if self.lr_phase1 <= 0 or self.lr_phase2 <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.steps_phase1 + self.steps_phase2


def lr_at(step: int, config: TrainingConfig) -> float:
    """Learning rate for a step index; the schedule ends at total_steps."""
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step < config.steps_phase1:
        return config.lr_phase1
    if step < config.total_steps:
        return config.lr_phase2
    raise ValueError(f"step {step} is past the end of the schedule ({config.total_steps})")


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    """One plain SGD update, p' = p - lr * g, returning new parameter arrays."""
    if set(params) != set(grads):
        raise ValueError("parameter and gradient names do not match")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match parameter "
                f"{name!r} shape {p.shape}"
            )
        if not np.isfinite(g).all():
            raise TrainingDivergedError(f"non-finite gradient in {name!r}")
        out[name] = p - lr * g
    return out


class ManifestSource:
    """Batches and eval sweeps over a manifest plus a feature store.

    Real tasks compose batches from keyword/unknown/silence fractions; the
    synthetic task (or any corpus with direct labels) samples uniformly.
    """

    def __init__(self, manifest, store, silence_frac=1.0 / 12.0,
                 unknown_frac=1.0 / 12.0, composed: bool | None = None):
        self.manifest = manifest
        self.store = store
        self.silence_frac = silence_frac
        self.unknown_frac = unknown_frac
        if composed is None:
            composed = manifest.task in data_mod.TASK_KEYWORDS
        self.composed = composed

    def batch(self, split: str, batch_size: int, rng: Rng):
        if self.composed:
            b = data_mod.sample_batch(
                self.manifest, split, rng, batch_size,
                self.silence_frac, self.unknown_frac, self.store,
            )
        else:
            b = data_mod.uniform_batch(self.manifest, split, rng, batch_size, self.store)
        return b.features, b.labels

    def eval_batches(self, split: str, batch_size: int):
        entries = self.manifest.split_entries(split)
        if not entries:
            raise ValueError(f"split {split!r} is empty")
        for start in range(0, len(entries), batch_size):
            chunk = entries[start : start + batch_size]
            feats = np.stack([self.store.features(e.path) for e in chunk])[..., None]
            labels = np.array([e.class_index for e in chunk], dtype=np.int64)
            yield feats.astype(np.float32), labels


class ArraySource:
    """In-memory (features, labels) per split; used by the estimator API."""

    def __init__(self, splits: dict[str, tuple[np.ndarray, np.ndarray]]):
        self.splits = splits

    def batch(self, split: str, batch_size: int, rng: Rng):
        x, y = self.splits[split]
        idx = rng.integers(0, x.shape[0], size=batch_size)
        return x[idx], y[idx]

    def eval_batches(self, split: str, batch_size: int):
        x, y = self.splits[split]
        if x.shape[0] == 0:
            raise ValueError(f"split {split!r} is empty")
        for start in range(0, x.shape[0], batch_size):
            yield x[start : start + batch_size], y[start : start + batch_size]


@dataclass
class MetricRow:
    step: int
    loss: float
    lr: float
    dev_accuracy: float | None = None


@dataclass
class TrainResult:
    params: dict
    metrics: list[MetricRow] = field(default_factory=list)
    best_dev_accuracy: float | None = None
    best_dev_step: int | None = None


def evaluate(params, spec, source, split: str, batch_size: int = 100) -> float:
    """Accuracy of the argmax prediction over a whole split, dropout off.

    Ties in the argmax resolve to the lowest class index. Deterministic and
    independent of the evaluation batch size.
    """
    correct = 0
    total = 0
    for x, y in source.eval_batches(split, batch_size):
        logits = subband.forward(spec, params, x, train=False)
        pred = logits.argmax(axis=1)
        correct += int((pred == y).sum())
        total += len(y)
    if total == 0:
        raise ValueError(f"split {split!r} is empty")
    return correct / total


def train(spec, source, config: TrainingConfig, *, init_params=None,
          eval_split: str = "dev") -> TrainResult:
    """Run the SGD schedule, logging loss and periodic dev accuracy.

    The returned params are from the final step; the best dev accuracy seen
    (and its step) is reported alongside for model-selection comparisons.
    """
    rng_init, rng_batch, rng_dropout = Rng(config.seed).split(3)
    params = init_params if init_params is not None else subband.init_params(spec, rng_init)
    result = TrainResult(params=params)

    def maybe_eval(step):
        try:
            acc = evaluate(params, spec, source, eval_split, config.eval_batch_size)
        except ValueError:
            return None
        if result.best_dev_accuracy is None or acc > result.best_dev_accuracy:
            result.best_dev_accuracy = acc
            result.best_dev_step = step
        return acc

    for step in range(config.total_steps):
        lr = lr_at(step, config)
        x, y = source.batch("train", config.batch_size, rng_batch)
        loss, grads = subband.loss_and_grads(
            spec, params, x, y, train=True, rng=rng_dropout
        )
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss} at step {step}")
        params = sgd_step(params, grads, lr)
        result.params = params
        dev_acc = None
        last = step == config.total_steps - 1
        if config.eval_interval and ((step + 1) % config.eval_interval == 0 or last):
            dev_acc = maybe_eval(step)
        result.metrics.append(MetricRow(step=step, loss=loss, lr=lr, dev_accuracy=dev_acc))
    return result


def write_metrics_csv(path, metrics: list[MetricRow]) -> None:
    with open(path, "w", newline="") as f:
        f.write(f"# schema: {METRICS_SCHEMA}\n")
        writer = csv.writer(f)
        writer.writerow(["step", "loss", "lr", "dev_accuracy"])
        for row in metrics:
            dev = "" if row.dev_accuracy is None else f"{row.dev_accuracy:.6f}"
            writer.writerow([row.step, f"{row.loss:.6f}", row.lr, dev])


@dataclass(frozen=True)
class TrialSummary:
    accuracies: tuple[float, ...]
    mean: float
    stddev: float
    flops: int
    stddev_defined: bool = True


def summarize_trials(accuracies, flops: int = 0) -> TrialSummary:
    """Mean and sample standard deviation (n - 1 denominator) of trial scores.

    A single trial has no sample stddev; it is reported as 0 with
    ``stddev_defined=False``.
    """
    accs = tuple(float(a) for a in accuracies)
    if not accs:
        raise ValueError("need at least one trial")
    mean = sum(accs) / len(accs)
    if len(accs) == 1:
        return TrialSummary(accs, mean, 0.0, flops, stddev_defined=False)
    var = sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
    return TrialSummary(accs, mean, var**0.5, flops, stddev_defined=True)


def run_trials(spec, source, config: TrainingConfig, n_trials: int = 5,
               *, seeds=None, eval_split: str = "test") -> TrialSummary:
    """Train n models differing only by seed; summarize test accuracy."""
    if n_trials < 1:
        raise ValueError(f"n_trials must be >= 1, got {n_trials}")
    if seeds is None:
        seeds = [config.seed + i for i in range(n_trials)]
    if len(seeds) != n_trials:
        raise ValueError("seeds list length must equal n_trials")
    accs = []
    for seed in seeds:
        result = train(spec, source, replace(config, seed=seed))
        accs.append(evaluate(result.params, spec, source, eval_split,
                             config.eval_batch_size))
    return summarize_trials(accs, flops=flops_mod.count_flops(spec).total_flops)


def save_checkpoint(path, spec, params: dict) -> None:
    """Binary checkpoint: spec JSON, float32 tensors, trailing 64-bit digest."""
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<I", CHECKPOINT_VERSION)
    spec_bytes = subband.spec_to_json(spec).encode("utf-8")
    body += struct.pack("<I", len(spec_bytes))
    body += spec_bytes
    names = sorted(params)
    body += struct.pack("<I", len(names))
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f4")
        encoded = name.encode("utf-8")
        body += struct.pack("<I", len(encoded))
        body += encoded
        body += struct.pack("<B", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    digest = hashlib.blake2b(bytes(body), digest_size=8).digest()
    with open(path, "wb") as f:
        f.write(bytes(body))
        f.write(digest)


def load_checkpoint(path, expected_spec=None):
    """Load (spec, params); verifies the checksum and optional spec match."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 12:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, digest = blob[:-8], blob[-8:]
    if hashlib.blake2b(body, digest_size=8).digest() != digest:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupt")
    off = 0
    if body[:8] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    off = 8
    (version,) = struct.unpack_from("<I", body, off)
    off += 4
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    (spec_len,) = struct.unpack_from("<I", body, off)
    off += 4
    spec = subband.spec_from_json(body[off : off + spec_len].decode("utf-8"))
    off += spec_len
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off : off + name_len].decode("utf-8")
        off += name_len
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(shape)
        params[name] = arr.copy()
        off += 4 * size
    if expected_spec is not None and spec != expected_spec:
        raise CheckpointError(
            f"{path}: checkpoint was written for a different model "
            f"({spec.arch}, k={spec.k}); refusing to load"
        )
    expected_shapes = spec.param_shapes()
    if set(params) != set(expected_shapes):
        raise CheckpointError(f"{path}: parameter names do not match the stored spec")
    return spec, params
