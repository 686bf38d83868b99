"""Scikit-learn style wrappers so the models compose with pipelines.

``MfccTransformer`` turns raw waveforms into feature maps and
``SubbandCNNClassifier`` wraps model building and SGD training behind the
usual fit/predict/score surface, e.g.::

    pipe = Pipeline([("mfcc", MfccTransformer()),
                     ("cnn", SubbandCNNClassifier(arch="overlapped_subband"))])
    pipe.fit(waveforms, labels)
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from . import dsp, subband, train as train_mod
from .validation import check_features, check_labels, check_waveforms


class MfccTransformer(BaseEstimator, TransformerMixin):
    """Stateless transform: (n, samples) waveforms -> (n, 98, 40, 1) MFCCs."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        waves = check_waveforms(X)
        return np.concatenate([dsp.mfcc_from_samples(w) for w in waves], axis=0)


class SubbandCNNClassifier(BaseEstimator, ClassifierMixin):
    """CNN classifier over (time, feature) maps with selectable weight sharing.

    Parameters
    ----------
    arch : str
        One of ``full_band``, ``overlapped_subband``, ``full_plus_nonoverlap``.
    k : int
        Kernels per convolutional block.
    num_bands : int
        Band count for the banded architectures (ignored by ``full_band``).
    concat_variant : str or None
        Join strategy for ``overlapped_subband``; default channel concat
        after the first block.
    layout : BandLayout or None
        Explicit band layout. When None, 40-bin inputs use the built-in
        overlapped presets (or a zero-overlap partition for
        ``full_plus_nonoverlap``); other widths require an explicit layout.
    dropout, lr, lr_final, steps, steps_final, batch_size, seed
        Training-schedule knobs; defaults mirror the library training loop
        at a desk-scale step budget.

    Attributes
    ----------
    classes_ : ndarray
        Sorted class labels seen in fit.
    spec_ : ModelSpec
        The resolved architecture.
    params_ : dict
        Trained parameter arrays.
    history_ : list
        Per-step loss records from training.
    """

    def __init__(self, arch="overlapped_subband", k=8, num_bands=3,
                 concat_variant=None, layout=None, dropout=0.5,
                 lr=0.001, lr_final=0.0001, steps=1000, steps_final=250,
                 batch_size=50, seed=0):
        self.arch = arch
        self.k = k
        self.num_bands = num_bands
        self.concat_variant = concat_variant
        self.layout = layout
        self.dropout = dropout
        self.lr = lr
        self.lr_final = lr_final
        self.steps = steps
        self.steps_final = steps_final
        self.batch_size = batch_size
        self.seed = seed

    def _resolve_layout(self, feature_dim):
        if self.arch == subband.FULL_BAND:
            return None
        if self.layout is not None:
            return self.layout
        if feature_dim == 40:
            if self.arch == subband.OVERLAPPED_SUBBAND:
                return subband.preset_layout(self.num_bands)
            return subband.uniform_layout(self.num_bands, 40, 0)
        raise ValueError(
            f"no default band layout for {feature_dim}-bin inputs; pass layout="
        )

    def fit(self, X, y):
        X = check_features(X)
        y = check_labels(y, X.shape[0])
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        t, f = X.shape[1], X.shape[2]
        self.spec_ = subband.build_model(
            arch=self.arch, k=self.k, dropout=self.dropout,
            layout=self._resolve_layout(f),
            concat_variant=self.concat_variant,
            input_shape=(t, f), num_classes=len(self.classes_),
        )
        config = train_mod.TrainingConfig(
            lr_phase1=self.lr, steps_phase1=self.steps,
            lr_phase2=self.lr_final, steps_phase2=self.steps_final,
            batch_size=min(self.batch_size, X.shape[0]),
            dropout=self.dropout, seed=self.seed, eval_interval=0,
        )
        source = train_mod.ArraySource({"train": (X, y_idx.astype(np.int64))})
        result = train_mod.train(self.spec_, source, config)
        self.params_ = result.params
        self.history_ = result.metrics
        return self

    def decision_function(self, X):
        X = check_features(X)
        return subband.forward(self.spec_, self.params_, X, train=False)

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[self.decision_function(X).argmax(axis=1)]
