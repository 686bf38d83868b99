"""Input validation helpers shared by the estimator API and the CLI."""

from __future__ import annotations

import numpy as np

from . import dsp


def check_waveforms(X) -> np.ndarray:
    """Coerce to a float32 (n, samples) array of audio waveforms.

    Accepts a 2-D array or a sequence of 1-D arrays; rows are padded or
    truncated to one second.
    """
    if isinstance(X, np.ndarray) and X.ndim == 2:
        rows = [X[i] for i in range(X.shape[0])]
    else:
        rows = list(X)
        for i, r in enumerate(rows):
            r = np.asarray(r)
            if r.ndim != 1:
                raise ValueError(f"waveform {i} must be 1-D, got shape {r.shape}")
    if not rows:
        raise ValueError("need at least one waveform")
    return np.stack([dsp.normalize_length(np.asarray(r)) for r in rows])


def check_features(X) -> np.ndarray:
    """Coerce to a float32 (n, t, f, 1) feature array.

    Accepts (n, t, f) or (n, t, f, 1); anything else is rejected with a
    message naming the offending shape.
    """
    X = np.asarray(X)
    if X.ndim == 3:
        X = X[..., None]
    if X.ndim != 4 or X.shape[3] != 1:
        raise ValueError(
            f"features must be (n, time, bins) or (n, time, bins, 1), got {X.shape}"
        )
    if X.shape[0] == 0:
        raise ValueError("need at least one sample")
    if not np.isfinite(X).all():
        raise ValueError("features contain non-finite values")
    return X.astype(np.float32, copy=False)


def check_labels(y, n_samples: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n_samples:
        raise ValueError(
            f"labels must be a 1-D array of length {n_samples}, got shape {y.shape}"
        )
    return y
