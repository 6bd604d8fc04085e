"""Associative reference classifiers.

If one of these matches the transformer on a task, success on that task is
no evidence that the transformer internalized an identity-independent rule.
All three follow the scikit-learn estimator API and predict
:class:`~rulebench.tasks.TaskClass` labels.
"""
from __future__ import annotations

import enum

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import tasks
from .datagen import Dataset
from .tasks import SEP, TaskClass, TaskKind, TokenTable
from .trainkit import Metrics, metrics_from_flags
from .validation import check_classification_task, check_labels, check_sequences

CLASSES = np.array([TaskClass.C1, TaskClass.C2], dtype=object)


class BaselineKind(str, enum.Enum):
    MAJORITY_CLASS = "majority_class"
    VOCAB_HEURISTIC = "vocab_heuristic"
    COMPONENT_COMPARATOR = "component_comparator"


class _TaskClassifier(ClassifierMixin, BaseEstimator):
    def score(self, X, y, sample_weight=None):
        """Mean accuracy; sklearn's default stringifies enum labels inconsistently."""
        pred = self.predict(X)
        y = check_labels(y, len(pred))
        hits = np.array([p is t for p, t in zip(pred, y)], float)
        return float(np.average(hits, weights=sample_weight))


class MajorityClassClassifier(_TaskClassifier):
    """Always predicts the most frequent training class (ties go to C1)."""

    def fit(self, X, y):
        X = check_sequences(X)
        y = check_labels(y, len(X))
        n_c1 = int(sum(v is TaskClass.C1 for v in y))
        self.classes_ = CLASSES
        self.majority_ = TaskClass.C1 if n_c1 >= len(y) - n_c1 else TaskClass.C2
        return self

    def predict(self, X):
        check_is_fitted(self, "majority_")
        X = check_sequences(X)
        return np.array([self.majority_] * len(X), dtype=object)


class VocabHeuristicClassifier(_TaskClassifier):
    """Predicts the class most associated, in training, with the input's vocabulary tags.

    The feature is the multiset of V1/V2 tags of the content tokens; order and
    identity within a vocabulary are ignored. Tags never seen in training, and
    exact ties, fall back to the training majority (ties to C1).
    """

    def __init__(self, table: TokenTable | None = None):
        self.table = table

    def _tags(self, x):
        table = self.table or tasks.DEFAULT_TABLE
        return [tag for tag in (table.vocab_tag(t) for t in x) if tag is not None]

    def fit(self, X, y):
        X = check_sequences(X, self.table or tasks.DEFAULT_TABLE)
        y = check_labels(y, len(X))
        counts = {"V1": np.zeros(2), "V2": np.zeros(2)}
        for x, label in zip(X, y):
            for tag in self._tags(x):
                counts[tag][0 if label is TaskClass.C1 else 1] += 1
        self.counts_ = counts
        self.classes_ = CLASSES
        self.prior_ = MajorityClassClassifier().fit(X, y).majority_
        return self

    def decision_scores(self, X) -> np.ndarray:
        """(n, 2) association mass for C1 and C2."""
        check_is_fitted(self, "counts_")
        X = check_sequences(X, self.table or tasks.DEFAULT_TABLE)
        out = np.zeros((len(X), 2))
        for i, x in enumerate(X):
            for tag in self._tags(x):
                c = self.counts_[tag]
                if c.sum() > 0:
                    out[i] += c / c.sum()
        return out

    def predict(self, X):
        scores = self.decision_scores(X)
        pred = []
        for s in scores:
            if s[0] > s[1]:
                pred.append(TaskClass.C1)
            elif s[1] > s[0]:
                pred.append(TaskClass.C2)
            else:
                pred.append(self.prior_)
        return np.array(pred, dtype=object)


def default_embeddings(table: TokenTable = tasks.DEFAULT_TABLE) -> np.ndarray:
    """One-hot rows: orthogonal, hence injective."""
    return np.eye(len(table))


def identity_judgments(embeddings: np.ndarray, ids, tol: float = 1e-9) -> np.ndarray:
    """(L, L) boolean matrix: positions i and j judged identical iff every component agrees within ``tol``."""
    vecs = np.asarray(embeddings)[np.asarray(ids)]
    return (np.abs(vecs[:, None, :] - vecs[None, :, :]) <= tol).all(axis=-1)


class ComponentComparatorClassifier(_TaskClassifier):
    """Zero-training identity detector built from component-wise embedding comparison.

    Repetition: C1 iff some pair of distinct positions is judged identical.
    Palindrome: C1 iff every position i matches position L-1-i.
    Copy/reverse detection: C1 iff left[i] matches right[i] for every i.
    ``fit`` only validates and binds the embedding table; ``y`` is ignored.
    """

    def __init__(self, task=TaskKind.REPETITION_DETECTION, embeddings=None, tol: float = 1e-9,
                 table: TokenTable | None = None):
        self.task = task
        self.embeddings = embeddings
        self.tol = tol
        self.table = table

    def fit(self, X=None, y=None):
        self.task_ = check_classification_task(self.task)
        table = self.table or tasks.DEFAULT_TABLE
        emb = default_embeddings(table) if self.embeddings is None else np.asarray(self.embeddings, float)
        if emb.ndim != 2 or emb.shape[0] != len(table):
            raise ValueError(f"embedding table must have one row per token ({len(table)}), got {emb.shape}")
        self.embeddings_ = emb
        self.classes_ = CLASSES
        return self

    def _judge(self, x) -> TaskClass:
        table = self.table or tasks.DEFAULT_TABLE
        ids = [table.id_of(t) for t in x]
        if self.task_ is TaskKind.COPY_REVERSE_DETECTION:
            k = x.index(SEP)
            left, right = ids[:k], ids[k + 1:]
            if len(left) != len(right):
                return TaskClass.C2
            same = identity_judgments(self.embeddings_, left + right, self.tol)
            n = len(left)
            hit = all(same[i, n + i] for i in range(n))
        else:
            same = identity_judgments(self.embeddings_, ids, self.tol)
            n = len(ids)
            if self.task_ is TaskKind.REPETITION_DETECTION:
                hit = bool(np.triu(same, k=1).any())
            else:
                hit = all(same[i, n - 1 - i] for i in range(n))
        return TaskClass.C1 if hit else TaskClass.C2

    def predict(self, X):
        check_is_fitted(self, "embeddings_")
        X = check_sequences(X, self.table or tasks.DEFAULT_TABLE)
        return np.array([self._judge(x) for x in X], dtype=object)


def tolerance_sensitivity(embeddings: np.ndarray, tols=(1e-12, 1e-9, 1e-6, 1e-3, 1e-1)) -> dict:
    """For each tolerance, the number of distinct-token pairs judged identical."""
    emb = np.asarray(embeddings, float)
    diff = np.abs(emb[:, None, :] - emb[None, :, :]).max(axis=-1)
    iu = np.triu_indices(len(emb), k=1)
    return {tol: int((diff[iu] <= tol).sum()) for tol in tols}


def make_baseline(kind, task=None, table: TokenTable | None = None):
    kind = BaselineKind(kind)
    if kind is BaselineKind.MAJORITY_CLASS:
        return MajorityClassClassifier()
    if kind is BaselineKind.VOCAB_HEURISTIC:
        return VocabHeuristicClassifier(table=table)
    return ComponentComparatorClassifier(task=task, table=table)


def baseline_metrics(clf, dataset: Dataset, kind) -> Metrics:
    """Per-class accuracy of a fitted baseline, in the trainer's Metrics format."""
    pred = clf.predict(dataset)
    flags = [p is s.klass for p, s in zip(pred, dataset.samples)]
    return metrics_from_flags(dataset.samples, flags, source=BaselineKind(kind).value)


def supports(kind, task) -> bool:
    """Baselines are classifiers; the component comparator has no rule for seq2seq."""
    return TaskKind(task).is_classification
