"""scikit-learn front end for the transformer.

:class:`TransformerSeq2Seq` maps token sequences to token sequences;
:class:`TransformerClassifier` wraps it for the detection tasks, mapping
class labels to the single-token targets ``"1"``/``"0"``.
"""
from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import tasks
from .datagen import Sample
from .tasks import TaskClass, TaskKind
from .tinyformer.model import ModelConfig, Tokenizer, TransformerModel
from .trainkit import Checkpoint, TrainConfig, predict, run_training
from .validation import check_labels, check_sequences, check_targets

_MODEL_FIELDS = [f.name for f in dataclasses.fields(ModelConfig) if f.name != "vocab_size"]
_TRAIN_FIELDS = [f.name for f in dataclasses.fields(TrainConfig)
                 if f.name not in ("pretrain_epochs", "pretrain_size", "corruption_rate")]


class TransformerSeq2Seq(BaseEstimator):
    """Encoder-decoder transformer trained with best-eval-loss checkpoint selection.

    Parameters mirror :class:`ModelConfig` and :class:`TrainConfig`. ``fit``
    takes an optional ``eval_set=(X_eval, y_eval)``; without one, a stratified
    20% slice of the training data is held out.
    """

    def __init__(self, n_layers_enc=2, n_layers_dec=2, d_model=64, n_heads=4, d_ff=256, max_len=32,
                 dropout_rate=0.1, batch_size=16, epochs=20, learning_rate=3e-4, warmup_steps=200,
                 beta1=0.9, beta2=0.999, eps=1e-8, clip_norm=1.0, seed=0, max_out_len=11, init=None):
        self.n_layers_enc = n_layers_enc
        self.n_layers_dec = n_layers_dec
        self.d_model = d_model
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.max_len = max_len
        self.dropout_rate = dropout_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.warmup_steps = warmup_steps
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm
        self.seed = seed
        self.max_out_len = max_out_len
        self.init = init

    def _configs(self):
        model_cfg = ModelConfig(vocab_size=len(tasks.DEFAULT_TABLE),
                                **{k: getattr(self, k) for k in _MODEL_FIELDS})
        train_cfg = TrainConfig(**{k: getattr(self, k) for k in _TRAIN_FIELDS})
        return model_cfg, train_cfg

    def fit(self, X, y, eval_set=None):
        X = check_sequences(X, tasks.DEFAULT_TABLE)
        y = check_targets(y, len(X))
        model_cfg, train_cfg = self._configs()
        train = [Sample(x, t, None, None, "V1") for x, t in zip(X, y)]
        if eval_set is None:
            order = np.random.default_rng(self.seed).permutation(len(train))
            cut = max(1, len(train) // 5)
            evals = [train[i] for i in order[:cut]]
            train = [train[i] for i in order[cut:]]
        else:
            Xe = check_sequences(eval_set[0], tasks.DEFAULT_TABLE)
            ye = check_targets(eval_set[1], len(Xe))
            evals = [Sample(x, t, None, None, "V1") for x, t in zip(Xe, ye)]
        model = TransformerModel(model_cfg, seed=self.seed)
        if self.init is not None:
            init = self.init if isinstance(self.init, Checkpoint) else Checkpoint.load(self.init)
            model.load_state_dict(init.state)
        self.checkpoint_, self.history_ = run_training(model, train, evals, train_cfg)
        self.model_ = self.checkpoint_.model()
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = check_sequences(X, tasks.DEFAULT_TABLE)
        return predict(self.model_, X, Tokenizer(), self.max_out_len)

    def score(self, X, y):
        """Exact-match accuracy."""
        pred = self.predict(X)
        y = check_targets(y, len(pred))
        return float(np.mean([p == t for p, t in zip(pred, y)]))


class TransformerClassifier(ClassifierMixin, TransformerSeq2Seq):
    """Classification as generation: C1 <-> ``"1"``, C2 <-> ``"0"``; anything else counts as wrong."""

    def fit(self, X, y, eval_set=None):
        X = check_sequences(X, tasks.DEFAULT_TABLE)
        labels = check_labels(y, len(X))
        self.classes_ = np.array([TaskClass.C1, TaskClass.C2], dtype=object)
        targets = [(c.target_marker(TaskKind.PALINDROME_DETECTION),) for c in labels]
        if eval_set is not None:
            Xe = check_sequences(eval_set[0])
            ye = [(c.target_marker(TaskKind.PALINDROME_DETECTION),) for c in check_labels(eval_set[1], len(Xe))]
            eval_set = (Xe, ye)
        return super().fit(X, targets, eval_set)

    def predict(self, X):
        out = []
        for p in super().predict(X):
            if p == (tasks.YES,):
                out.append(TaskClass.C1)
            elif p == (tasks.NO,):
                out.append(TaskClass.C2)
            else:
                out.append(None)
        return np.array(out, dtype=object)

    def score(self, X, y):
        pred = self.predict(X)
        y = check_labels(y, len(pred))
        return float(np.mean([p is t for p, t in zip(pred, y)]))
