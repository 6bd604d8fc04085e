"""Adam, the epoch loop with best-eval-loss checkpointing, and per-class metrics."""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datagen import Dataset, Sample
from .tasks import TaskClass, TaskKind
from .tinyformer import autograd as ag
from .tinyformer.model import (
    ModelConfig,
    Tokenizer,
    TransformerModel,
    greedy_decode,
    load_checkpoint,
    save_checkpoint,
    sequence_loss,
    teacher_forced,
)

log = logging.getLogger(__name__)

EVAL_BATCH = 500


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    epochs: int = 20
    learning_rate: float = 3e-4
    warmup_steps: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = 1.0
    seed: int = 0
    pretrain_epochs: int = 0
    pretrain_size: int = 10000
    corruption_rate: float = 0.15

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.pretrain_epochs < 0:
            raise ValueError("pretrain_epochs must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def lr_at(self, step: int) -> float:
        """Linear warmup to ``learning_rate`` over ``warmup_steps``, then constant."""
        if self.warmup_steps <= 0:
            return self.learning_rate
        return self.learning_rate * min(1.0, step / self.warmup_steps)


class Adam:
    """Adam with bias correction. Moments are keyed by parameter name and persist across steps."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict, grads: dict, lr: float | None = None) -> None:
        """Update ``params`` (name -> ndarray or Tensor) in place."""
        for name, g in grads.items():
            if not np.isfinite(g).all():
                bad = int((~np.isfinite(g)).sum())
                raise TrainingError(f"non-finite gradient in {name!r} ({bad} entries) at step {self.t + 1}")
        self.t += 1
        lr = self.lr if lr is None else lr
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = params[name]
            arr = p.data if isinstance(p, ag.Tensor) else p
            if name not in self.m:
                self.m[name] = np.zeros_like(arr)
                self.v[name] = np.zeros_like(arr)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            arr -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


def adam_step(model: TransformerModel, grads: dict, config: TrainConfig, step: int,
              optimizer: Adam | None = None) -> Adam:
    """One Adam update of ``model`` at 1-based ``step`` (learning rate from the warmup schedule)."""
    if optimizer is None:
        optimizer = Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    if optimizer.t != step - 1:
        raise TrainingError(f"optimizer is at step {optimizer.t}, asked for step {step}")
    optimizer.step(model.params, grads, lr=config.lr_at(step))
    return optimizer


def clip_by_global_norm(grads: dict, max_norm: float) -> float:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


@dataclass
class Checkpoint:
    state: dict
    epoch: int
    eval_loss: float
    step: int
    config: ModelConfig

    def __post_init__(self):
        if not math.isfinite(self.eval_loss):
            raise TrainingError("checkpoint eval loss must be finite")

    def model(self) -> TransformerModel:
        m = TransformerModel(self.config)
        m.load_state_dict(self.state)
        return m

    def save(self, path) -> None:
        save_checkpoint(path, self.model(), step=self.step, eval_loss=self.eval_loss,
                        extra={"epoch": self.epoch})

    @classmethod
    def load(cls, path) -> "Checkpoint":
        model, meta = load_checkpoint(path)
        return cls(model.state_dict(), meta["extra"].get("epoch", 0), meta["eval_loss"],
                   meta["step"], model.config)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    eval_loss: float
    train_acc: dict
    eval_acc: dict

    COLUMNS = ("epoch", "train_loss", "eval_loss", "train_acc_C1", "train_acc_C2",
               "eval_acc_C1", "eval_acc_C2")

    def to_row(self) -> str:
        vals = [str(self.epoch), repr(self.train_loss), repr(self.eval_loss)]
        for acc in (self.train_acc, self.eval_acc):
            vals += [repr(acc.get(k, float("nan"))) for k in ("C1", "C2")]
        return "\t".join(vals)


def write_history(history: Sequence[EpochRecord], path) -> None:
    lines = ["\t".join(EpochRecord.COLUMNS)] + [r.to_row() for r in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_history(path) -> list[EpochRecord]:
    rows = Path(path).read_text(encoding="ascii").splitlines()
    if not rows or tuple(rows[0].split("\t")) != EpochRecord.COLUMNS:
        raise ValueError(f"{path}: not a history file")
    out = []
    for line in rows[1:]:
        f = line.split("\t")
        out.append(EpochRecord(int(f[0]), float(f[1]), float(f[2]),
                               {"C1": float(f[3]), "C2": float(f[4])},
                               {"C1": float(f[5]), "C2": float(f[6])}))
    return out


@dataclass
class Metrics:
    """Exact-match accuracy per task class, plus the teacher-forced loss."""

    task: str | None
    accuracy: dict
    counts: dict
    loss: float = float("nan")
    source: str = "tinyformer"

    @property
    def overall(self) -> float:
        n = sum(self.counts.values())
        return sum(self.accuracy[k] * self.counts[k] for k in self.counts) / n if n else float("nan")

    def to_dict(self) -> dict:
        return {"task": self.task, "source": self.source, "loss": self.loss,
                "accuracy": dict(self.accuracy), "counts": dict(self.counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "Metrics":
        return cls(d["task"], dict(d["accuracy"]), dict(d["counts"]), d.get("loss", float("nan")),
                   d.get("source", "tinyformer"))


def metrics_from_flags(samples: Sequence[Sample], correct: Sequence[bool], loss: float = float("nan"),
                       source: str = "tinyformer") -> Metrics:
    acc, counts = {}, {}
    for s, ok in zip(samples, correct, strict=True):
        key = s.klass.value if s.klass is not None else "all"
        counts[key] = counts.get(key, 0) + 1
        acc[key] = acc.get(key, 0) + int(bool(ok))
    acc = {k: acc[k] / counts[k] for k in sorted(counts)}
    task = samples[0].task.value if samples and samples[0].task is not None else None
    return Metrics(task, acc, dict(sorted(counts.items())), loss, source)


# ------------------------------------------------------------------ loops

def _batches(n: int, size: int, order: np.ndarray | None = None):
    idx = np.arange(n) if order is None else order
    for i in range(0, n, size):
        yield idx[i: i + size]


def dataset_loss_and_hits(model: TransformerModel, samples: Sequence[Sample], tok: Tokenizer,
                          batch_size: int = EVAL_BATCH) -> tuple[float, np.ndarray]:
    """Token-mean teacher-forced loss and per-sample exact-match flags.

    Exact match under teacher forcing equals greedy-decoding exact match: if
    every position's argmax is the target, greedy decoding reproduces the
    target prefix step by step.
    """
    total, count = 0.0, 0.0
    hits = np.zeros(len(samples), dtype=bool)
    for idx in _batches(len(samples), batch_size):
        batch = [samples[i] for i in idx]
        src = tok.batch_inputs([s.input_tokens for s in batch])
        dec_in, dec_out, w = tok.batch_targets([s.target_tokens for s in batch])
        logits = teacher_forced(model, src, dec_in, tok.pad_id)
        z = logits - logits.max(axis=-1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
        picked = np.take_along_axis(logp, dec_out[..., None], axis=-1)[..., 0]
        total -= float((picked * w).sum())
        count += float(w.sum())
        ok = (logits.argmax(axis=-1) == dec_out) | (w == 0)
        hits[idx] = ok.all(axis=1)
    return total / count, hits


def _class_acc(samples, hits) -> dict:
    return metrics_from_flags(samples, hits).accuracy


def pretrain(model: TransformerModel, corpus: Dataset, config: TrainConfig,
             tok: Tokenizer | None = None, optimizer: Adam | None = None) -> Adam:
    """``config.pretrain_epochs`` passes of denoising on ``corpus``; no checkpoint selection."""
    tok = tok or Tokenizer()
    optimizer = optimizer or Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng([config.seed, 1])
    drop_rng = np.random.default_rng([config.seed, 2])
    for epoch in range(config.pretrain_epochs):
        loss = _epoch(model, corpus.samples, config, tok, optimizer, rng, drop_rng)
        log.info("pretrain epoch %d loss %.4f", epoch + 1, loss)
    return optimizer


def _epoch(model, samples, config, tok, optimizer, rng, drop_rng) -> float:
    order = rng.permutation(len(samples))
    losses = []
    for idx in _batches(len(samples), config.batch_size, order):
        batch = [samples[i] for i in idx]
        src = tok.batch_inputs([s.input_tokens for s in batch])
        dec_in, dec_out, w = tok.batch_targets([s.target_tokens for s in batch])
        model.zero_grad()
        loss = sequence_loss(model, src, dec_in, dec_out, w, tok.pad_id, train=True, rng=drop_rng)
        value = float(loss.data)
        if not math.isfinite(value):
            raise TrainingError(f"non-finite training loss at step {optimizer.t + 1}")
        ag.backward(loss)
        grads = model.gradients()
        clip_by_global_norm(grads, config.clip_norm)
        optimizer.step(model.params, grads, lr=config.lr_at(optimizer.t + 1))
        if not model.all_finite():
            raise TrainingError(f"non-finite parameters after step {optimizer.t}")
        losses.append(value)
    return float(np.mean(losses))


def run_training(model: TransformerModel, train: Dataset | Sequence[Sample],
                 eval_set: Dataset | Sequence[Sample], config: TrainConfig = TrainConfig(),
                 tok: Tokenizer | None = None, optimizer: Adam | None = None,
                 on_epoch: Callable[[EpochRecord], None] | None = None
                 ) -> tuple[Checkpoint, list[EpochRecord]]:
    """Train for ``config.epochs`` epochs; return the lowest-eval-loss checkpoint and the history."""
    tok = tok or Tokenizer()
    train_s, eval_s = list(train), list(eval_set)
    if not train_s or not eval_s:
        raise TrainingError("training and evaluation sets must be non-empty")
    optimizer = optimizer or Adam(config.learning_rate, config.beta1, config.beta2, config.eps)
    rng = np.random.default_rng([config.seed, 3])
    drop_rng = np.random.default_rng([config.seed, 4])
    history: list[EpochRecord] = []
    best: Checkpoint | None = None
    for epoch in range(1, config.epochs + 1):
        _epoch(model, train_s, config, tok, optimizer, rng, drop_rng)
        train_loss, train_hits = dataset_loss_and_hits(model, train_s, tok)
        eval_loss, eval_hits = dataset_loss_and_hits(model, eval_s, tok)
        if not math.isfinite(eval_loss):
            raise TrainingError(f"non-finite eval loss after epoch {epoch}")
        rec = EpochRecord(epoch, train_loss, eval_loss, _class_acc(train_s, train_hits),
                          _class_acc(eval_s, eval_hits))
        history.append(rec)
        log.info("epoch %d train %.4f eval %.4f acc %s", epoch, train_loss, eval_loss, rec.eval_acc)
        if on_epoch is not None:
            on_epoch(rec)
        if best is None or eval_loss < best.eval_loss:
            best = Checkpoint(model.state_dict(), epoch, eval_loss, optimizer.t, model.config)
    return best, history


def predict(model: TransformerModel, inputs: Sequence[Sequence[str]], tok: Tokenizer | None = None,
            max_out_len: int = 11, batch_size: int = EVAL_BATCH) -> list[tuple[str, ...]]:
    tok = tok or Tokenizer()
    out: list[tuple[str, ...]] = []
    for idx in _batches(len(inputs), batch_size):
        src = tok.batch_inputs([inputs[i] for i in idx])
        ids = greedy_decode(model, src, max_out_len, tok.start_id, tok.end_id, tok.pad_id)
        out += [tok.surfaces(r) for r in ids]
    return out


def evaluate(checkpoint: Checkpoint | TransformerModel, dataset: Dataset | Sequence[Sample],
             tok: Tokenizer | None = None, max_out_len: int = 11) -> Metrics:
    """Greedy-decode every sample; per-class exact-match accuracy."""
    tok = tok or Tokenizer()
    model = checkpoint.model() if isinstance(checkpoint, Checkpoint) else checkpoint
    samples = list(dataset)
    preds = predict(model, [s.input_tokens for s in samples], tok, max_out_len)
    loss, _ = dataset_loss_and_hits(model, samples, tok)
    return metrics_from_flags(samples, [p == s.target_tokens for p, s in zip(preds, samples)], loss)
