"""Input checks shared by the estimators."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .datagen import Dataset, Sample
from .tasks import TaskClass, TaskError, TaskKind, TokenTable


def check_sequences(X, table: TokenTable | None = None) -> list[tuple[str, ...]]:
    """Coerce ``X`` to a list of non-empty token tuples.

    Accepts a Dataset, a list of Samples, a list of whitespace-separated
    strings or a list of token sequences.
    """
    if isinstance(X, Dataset):
        X = X.samples
    if isinstance(X, (str, bytes)):
        raise TypeError("expected a collection of sequences, got a single string")
    out = []
    for i, x in enumerate(X):
        if isinstance(x, Sample):
            x = x.input_tokens
        elif isinstance(x, str):
            x = x.split()
        x = tuple(x)
        if not x:
            raise TaskError(f"sample {i} is empty")
        if table is not None:
            for tok in x:
                if tok not in table:
                    raise TaskError(f"sample {i}: token {tok!r} not in the token table")
        out.append(x)
    if not out:
        raise ValueError("found 0 samples; at least one is required")
    return out


def check_labels(y, n: int) -> np.ndarray:
    """Task-class labels as an object array of :class:`TaskClass`."""
    if isinstance(y, Dataset):
        y = [s.klass for s in y.samples]
    labels = np.array([TaskClass(v) for v in y], dtype=object)
    if labels.shape[0] != n:
        raise ValueError(f"X has {n} samples but y has {labels.shape[0]}")
    return labels


def check_targets(y, n: int) -> list[tuple[str, ...]]:
    """Target token sequences for seq2seq fitting."""
    if isinstance(y, Dataset):
        y = [s.target_tokens for s in y.samples]
    out = [tuple(t.split()) if isinstance(t, str) else tuple(t) for t in y]
    if len(out) != n:
        raise ValueError(f"X has {n} samples but y has {len(out)}")
    return out


def check_classification_task(task) -> TaskKind:
    task = TaskKind(task)
    if not task.is_classification:
        raise ValueError(f"{task.value} is not a classification task")
    return task


def samples_to_xy(samples: Sequence[Sample]):
    return [s.input_tokens for s in samples], [s.klass for s in samples]
