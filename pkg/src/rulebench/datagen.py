"""Seeded dataset generation for the four tasks under both protocols.

Every dataset is a pure function of its :class:`DatasetSpec`. Random
streams are derived from ``(seed, task, phase-stream)`` through
``numpy.random.SeedSequence`` so that builds are reproducible across
machines and independent across cells.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tasks
from .tasks import (
    SEP,
    TaskClass,
    TaskError,
    TaskKind,
    TokenTable,
    Vocabulary,
    gold_label,
    has_repetition,
    is_palindrome,
    reverse_seq,
)

PHASES = ("train", "eval", "test")
CONSTRAINTS = ("any", "no_repetition", "force_repetition", "palindrome", "non_palindrome")
MAX_ATTEMPTS = 1000
PRETRAIN = "denoise"


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Setting:
    """``ZeroShot`` or ``VocabFlip`` with a mix ratio."""

    name: str = "ZeroShot"
    mix_ratio: float = 0.0

    def __post_init__(self):
        if self.name not in ("ZeroShot", "VocabFlip"):
            raise DataError(f"unknown setting {self.name!r}")
        if not 0.0 <= self.mix_ratio <= 1.0:
            raise DataError(f"mix ratio {self.mix_ratio} outside [0, 1]")
        if self.name == "ZeroShot" and self.mix_ratio:
            raise DataError("mixing only applies to the vocabulary-flip setting")

    @classmethod
    def zero_shot(cls) -> "Setting":
        return cls("ZeroShot")

    @classmethod
    def flip(cls, mix_ratio: float = 0.0) -> "Setting":
        return cls("VocabFlip", float(mix_ratio))

    @property
    def is_flip(self) -> bool:
        return self.name == "VocabFlip"

    @property
    def label(self) -> str:
        if not self.is_flip:
            return "zero-shot"
        return f"flip-mix{self.mix_ratio:g}"

    @classmethod
    def parse(cls, text: str) -> "Setting":
        text = text.strip()
        if text in ("zero-shot", "zeroshot", "ZeroShot"):
            return cls.zero_shot()
        for head in ("flip-mix", "flip:", "VocabFlip:"):
            if text.startswith(head):
                return cls.flip(float(text[len(head):]))
        if text in ("flip", "VocabFlip"):
            return cls.flip(0.0)
        raise DataError(f"unknown setting {text!r}")


@dataclass(frozen=True)
class DatasetSpec:
    task: TaskKind
    setting: Setting = field(default_factory=Setting.zero_shot)
    phase: str = "train"
    pool_size: int = 10000
    eval_fraction: float = 0.2
    test_size: int = 10000
    length_range: tuple[int, int] = (1, 10)
    vocab_v1: str = tasks.DEFAULT_V1
    vocab_v2: str = tasks.DEFAULT_V2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        object.__setattr__(self, "length_range", tuple(self.length_range))
        if self.phase not in PHASES:
            raise DataError(f"unknown phase {self.phase!r}")
        lo, hi = self.length_range
        if not 1 <= lo <= hi:
            raise DataError(f"invalid length range {self.length_range}")
        if not 0.0 < self.eval_fraction < 1.0:
            raise DataError("eval_fraction must lie in (0, 1)")
        for name in ("train_size", "eval_size", "test_size"):
            n = getattr(self, name)
            if n < 2 or n % 2:
                raise DataError(f"{name}={n} must be a positive even number for a 50/50 class split")
        if not 0 <= self.seed < 2**64:
            raise DataError("seed must be a 64-bit unsigned integer")

    @property
    def eval_size(self) -> int:
        return int(round(self.pool_size * self.eval_fraction))

    @property
    def train_size(self) -> int:
        return self.pool_size - self.eval_size

    @property
    def size(self) -> int:
        return {"train": self.train_size, "eval": self.eval_size, "test": self.test_size}[self.phase]

    @property
    def table(self) -> TokenTable:
        return _table(self.vocab_v1, self.vocab_v2)

    def with_phase(self, phase: str) -> "DatasetSpec":
        return dataclasses.replace(self, phase=phase)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["task"] = self.task.value
        d["setting"] = {"name": self.setting.name, "mix_ratio": self.setting.mix_ratio}
        d["length_range"] = list(self.length_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        d = dict(d)
        d["task"] = TaskKind(d["task"])
        d["setting"] = Setting(**d["setting"])
        d["length_range"] = tuple(d["length_range"])
        return cls(**d)


_TABLES: dict = {}


def _table(v1: str, v2: str) -> TokenTable:
    key = (v1, v2)
    if key not in _TABLES:
        _TABLES[key] = TokenTable(v1, v2)
    return _TABLES[key]


@dataclass(frozen=True)
class Sample:
    input_tokens: tuple[str, ...]
    target_tokens: tuple[str, ...]
    task: TaskKind | None
    klass: TaskClass | None
    source_vocab: str
    mixed: bool = False

    def content(self):
        """The part of the input the label oracle looks at."""
        if self.task is TaskKind.COPY_REVERSE_DETECTION:
            i = self.input_tokens.index(SEP)
            return (self.input_tokens[:i], self.input_tokens[i + 1:])
        return self.input_tokens

    def content_tokens(self) -> tuple[str, ...]:
        """Vocabulary tokens only, markers stripped."""
        return tuple(t for t in self.input_tokens if t not in _SPECIAL_SET)

    def to_line(self) -> str:
        return "\t".join((
            " ".join(self.input_tokens),
            " ".join(self.target_tokens),
            self.task.value if self.task is not None else PRETRAIN,
            self.klass.value if self.klass is not None else "-",
            self.source_vocab,
            "1" if self.mixed else "0",
        ))


_SPECIAL_SET = frozenset(tasks.SPECIALS)


@dataclass
class Dataset:
    spec: DatasetSpec | None
    samples: list[Sample]
    meta: dict = field(default_factory=dict)
    fingerprint: str = ""

    def __post_init__(self):
        if not self.fingerprint:
            self.fingerprint = compute_fingerprint(self)

    def __len__(self):
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    @property
    def task(self) -> TaskKind | None:
        return self.spec.task if self.spec is not None else None

    def header(self) -> dict:
        return {
            "spec": self.spec.to_dict() if self.spec is not None else None,
            "meta": self.meta,
            "seed": self.spec.seed if self.spec is not None else self.meta.get("seed"),
        }

    def class_counts(self) -> dict:
        out: dict = {}
        for s in self.samples:
            out[s.klass] = out.get(s.klass, 0) + 1
        return out


def compute_fingerprint(d: Dataset) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(d.header(), sort_keys=True).encode("ascii"))
    for s in d.samples:
        h.update(b"\n")
        h.update(s.to_line().encode("ascii"))
    return h.hexdigest()


def derive_rng(seed: int, *key) -> np.random.Generator:
    """Independent stream for ``key`` under ``seed``; stable across platforms."""
    words = [zlib.crc32(str(k).encode()) for k in key]
    return np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, seed >> 32, *words]))


def _effective_range(vocab: Vocabulary, length_range, constraint: str) -> tuple[int, int]:
    if constraint not in CONSTRAINTS:
        raise DataError(f"unknown constraint {constraint!r}")
    lo, hi = length_range
    if lo < 1 or hi < lo:
        raise DataError(f"invalid length range {length_range}")
    if constraint in ("non_palindrome", "force_repetition"):
        lo = max(lo, 2)
    if constraint == "no_repetition":
        hi = min(hi, len(vocab))
    if constraint == "non_palindrome" and len(vocab) < 2:
        raise DataError("non-palindromes need at least two tokens")
    if lo > hi:
        raise DataError(f"constraint {constraint!r} unsatisfiable for lengths {length_range} "
                        f"over {len(vocab)} tokens")
    return lo, hi


def sample_sequence(vocab: Vocabulary, length_range, constraint: str,
                    rng: np.random.Generator) -> tuple[str, ...]:
    """Draw one sequence satisfying ``constraint``; lengths uniform over the valid range."""
    lo, hi = _effective_range(vocab, length_range, constraint)
    tokens = vocab.tokens
    n_tok = len(tokens)
    length = int(rng.integers(lo, hi + 1))

    if constraint == "any":
        return tuple(tokens[i] for i in rng.integers(0, n_tok, size=length))
    if constraint == "no_repetition":
        return tuple(tokens[i] for i in rng.choice(n_tok, size=length, replace=False))
    if constraint == "palindrome":
        half = rng.integers(0, n_tok, size=(length + 1) // 2)
        idx = list(half) + list(half[: length // 2][::-1])
        return tuple(tokens[i] for i in idx)

    predicate = has_repetition if constraint == "force_repetition" else (lambda s: not is_palindrome(s))
    for _ in range(MAX_ATTEMPTS):
        s = tuple(tokens[i] for i in rng.integers(0, n_tok, size=length))
        if predicate(s):
            return s
    # constructive fallback
    s = [tokens[i] for i in rng.integers(0, n_tok, size=length)]
    if constraint == "force_repetition":
        i, j = sorted(rng.choice(length, size=2, replace=False))
        s[j] = s[i]
    else:
        i = int(rng.integers(0, length // 2))
        others = [t for t in tokens if t != s[i]]
        s[length - 1 - i] = others[int(rng.integers(0, len(others)))]
    return tuple(s)


def _content_constraint(task: TaskKind, klass: TaskClass) -> str:
    if task in (TaskKind.COPY_REVERSE_SEQ2SEQ, TaskKind.COPY_REVERSE_DETECTION):
        return "non_palindrome"
    if task is TaskKind.PALINDROME_DETECTION:
        return "palindrome" if klass is TaskClass.C1 else "non_palindrome"
    return "force_repetition" if klass is TaskClass.C1 else "no_repetition"


def make_sample(task: TaskKind, klass: TaskClass, vocab: Vocabulary, rng: np.random.Generator,
                length_range=(1, 10), mixed: bool = False) -> Sample:
    task, klass = TaskKind(task), TaskClass(klass)
    s = sample_sequence(vocab, length_range, _content_constraint(task, klass), rng)
    marker = klass.target_marker(task)
    if task is TaskKind.COPY_REVERSE_SEQ2SEQ:
        inp = (marker,) + s
        tgt = tasks.seq2seq_target(s, klass)
    elif task is TaskKind.COPY_REVERSE_DETECTION:
        right = s if klass is TaskClass.C1 else reverse_seq(s)
        inp = s + (SEP,) + right
        tgt = (marker,)
    else:
        inp = s
        tgt = (marker,)
    return Sample(inp, tgt, task, klass, vocab.name, mixed)


def assign_vocabulary(setting: Setting, phase: str, klass: TaskClass) -> str:
    """Vocabulary tag ('V1' or 'V2') for a sample of ``klass`` in ``phase``."""
    if phase not in PHASES:
        raise DataError(f"unknown phase {phase!r}")
    klass = TaskClass(klass)
    if not setting.is_flip:
        return "V2" if phase == "test" else "V1"
    natural = "V1" if klass is TaskClass.C1 else "V2"
    if phase == "test":
        return _swap(natural)
    return natural


def _swap(tag: str) -> str:
    return "V2" if tag == "V1" else "V1"


def apply_mix(assignment: str, mix_ratio: float, rng: np.random.Generator,
              phase: str = "train") -> tuple[str, bool]:
    """Swap the vocabulary assignment with probability ``mix_ratio``.

    Returns ``(tag, mixed)``. Never used on test data.
    """
    if phase == "test":
        raise DataError("mixing is never applied to the test set")
    if not 0.0 <= mix_ratio <= 1.0:
        raise DataError(f"mix ratio {mix_ratio} outside [0, 1]")
    if rng.random() < mix_ratio:
        return _swap(assignment), True
    return assignment, False


def _generate(spec: DatasetSpec, phase_kind: str, per_class: int, rng: np.random.Generator) -> dict:
    """``per_class`` unique samples for each class, keyed by class."""
    table = spec.table
    out = {}
    seen: set = set()
    for klass in (TaskClass.C1, TaskClass.C2):
        rows = []
        base = assign_vocabulary(spec.setting, phase_kind, klass)
        while len(rows) < per_class:
            tag, mixed = base, False
            if spec.setting.is_flip and phase_kind != "test":
                tag, mixed = apply_mix(base, spec.setting.mix_ratio, rng)
            vocab = table.vocab(tag)
            for _ in range(MAX_ATTEMPTS):
                sample = make_sample(spec.task, klass, vocab, rng, spec.length_range, mixed)
                if sample.input_tokens not in seen:
                    break
            else:
                raise DataError(f"could not find a fresh {klass.value} input for {spec.task.value} "
                                f"after {MAX_ATTEMPTS} draws; the space is exhausted")
            seen.add(sample.input_tokens)
            rows.append(sample)
        out[klass] = rows
    return out


def _build_pool(spec: DatasetSpec) -> tuple[list[Sample], list[Sample]]:
    if spec.eval_size % 2 or spec.train_size % 2:
        raise DataError("train and eval sizes must both be even")
    rng = derive_rng(spec.seed, spec.task.value, spec.setting.label, "pool")
    pool = _generate(spec, "train", spec.pool_size // 2, rng)
    n_eval = spec.eval_size // 2
    train, evals = [], []
    for klass in (TaskClass.C1, TaskClass.C2):
        rows = pool[klass]
        order = rng.permutation(len(rows))
        evals += [rows[i] for i in order[:n_eval]]
        train += [rows[i] for i in order[n_eval:]]
    train = [train[i] for i in rng.permutation(len(train))]
    evals = [evals[i] for i in rng.permutation(len(evals))]
    return train, evals


def _build_test(spec: DatasetSpec) -> list[Sample]:
    rng = derive_rng(spec.seed, spec.task.value, spec.setting.label, "test")
    pool = _generate(spec, "test", spec.test_size // 2, rng)
    rows = pool[TaskClass.C1] + pool[TaskClass.C2]
    return [rows[i] for i in rng.permutation(len(rows))]


def build_splits(spec: DatasetSpec) -> dict[str, Dataset]:
    """All three phases for ``spec`` (its ``phase`` field is ignored)."""
    train, evals = _build_pool(spec)
    return {
        "train": Dataset(spec.with_phase("train"), train),
        "eval": Dataset(spec.with_phase("eval"), evals),
        "test": Dataset(spec.with_phase("test"), _build_test(spec)),
    }


def build_dataset(spec: DatasetSpec) -> Dataset:
    """One phase. Train and eval are the two sides of a single stratified pool."""
    if spec.phase == "test":
        return Dataset(spec, _build_test(spec))
    train, evals = _build_pool(spec)
    return Dataset(spec, train if spec.phase == "train" else evals)


def verify_sample(s: Sample, table: TokenTable = tasks.DEFAULT_TABLE) -> None:
    """Raise ``DataError`` unless ``s`` is oracle-consistent and single-vocabulary."""
    if s.task is None:
        return
    content = s.content()
    if gold_label(s.task, content) is not s.klass:
        raise DataError(f"label mismatch: {s.to_line()}")
    if s.task is TaskKind.COPY_REVERSE_SEQ2SEQ:
        body = s.input_tokens[1:]
        if s.target_tokens != tasks.seq2seq_target(body, s.klass):
            raise DataError(f"target mismatch: {s.to_line()}")
    elif s.target_tokens != (s.klass.target_marker(s.task),):
        raise DataError(f"target mismatch: {s.to_line()}")
    tags = {table.vocab_tag(t) for t in s.content_tokens()}
    if tags != {s.source_vocab}:
        raise DataError(f"content tokens not drawn from {s.source_vocab}: {s.to_line()}")


def build_pretrain_corpus(table: TokenTable, size: int = 10000, length_range=(1, 10),
                          corruption_rate: float = 0.15,
                          rng: np.random.Generator | None = None, seed: int = 0) -> Dataset:
    """Token-corruption denoising corpus over both vocabularies.

    Half the samples come from V1 and half from V2; inputs have each token
    replaced by the sentinel with probability ``corruption_rate``; targets
    are the clean sequences.
    """
    if not 0.0 <= corruption_rate < 1.0:
        raise DataError("corruption_rate must lie in [0, 1)")
    if rng is None:
        rng = derive_rng(seed, "pretrain")
    samples = []
    for i in range(size):
        vocab = table.v1 if i % 2 == 0 else table.v2
        clean = sample_sequence(vocab, length_range, "any", rng)
        hit = rng.random(len(clean)) < corruption_rate
        noisy = tuple(tasks.SENTINEL if h else t for t, h in zip(clean, hit))
        samples.append(Sample(noisy, clean, None, None, vocab.name))
    order = rng.permutation(size)
    meta = {"kind": PRETRAIN, "size": size, "length_range": list(length_range),
            "corruption_rate": corruption_rate, "seed": seed,
            "v1": "".join(table.v1.tokens), "v2": "".join(table.v2.tokens)}
    return Dataset(None, [samples[i] for i in order], meta=meta)


# ---------------------------------------------------------------- file io

MAGIC = "#rulebench-dataset"


def write_dataset(d: Dataset, path) -> None:
    header = dict(d.header(), fingerprint=d.fingerprint)
    lines = [MAGIC + "\t" + json.dumps(header, sort_keys=True, ensure_ascii=True)]
    lines += [s.to_line() for s in d.samples]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_dataset(path, table: TokenTable | None = None) -> Dataset:
    text = Path(path).read_text(encoding="ascii")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].startswith(MAGIC + "\t"):
        raise DataError(f"{path}:1: missing dataset header")
    try:
        header = json.loads(lines[0][len(MAGIC) + 1:])
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:1: malformed header ({e})") from None
    spec = DatasetSpec.from_dict(header["spec"]) if header.get("spec") else None
    if table is None:
        if spec is not None:
            table = spec.table
        else:
            meta = header.get("meta", {})
            table = _table(meta.get("v1", tasks.DEFAULT_V1), meta.get("v2", tasks.DEFAULT_V2))
    samples = [_parse_line(line, lineno, path, table) for lineno, line in enumerate(lines[1:], 2)]
    d = Dataset(spec, samples, meta=header.get("meta", {}))
    if d.fingerprint != header.get("fingerprint"):
        raise DataError(f"{path}: fingerprint mismatch (file says {header.get('fingerprint')}, "
                        f"content hashes to {d.fingerprint})")
    return d


def _parse_line(line: str, lineno: int, path, table: TokenTable) -> Sample:
    parts = line.split("\t")
    if len(parts) != 6:
        raise DataError(f"{path}:{lineno}: expected 6 tab-separated fields, got {len(parts)}")
    inp, tgt, task, klass, vocab, mixed = parts
    inp_t, tgt_t = tuple(inp.split(" ")), tuple(tgt.split(" "))
    for tok in inp_t + tgt_t:
        if tok not in table:
            raise DataError(f"{path}:{lineno}: token {tok!r} not in the token table")
    try:
        kind = None if task == PRETRAIN else TaskKind(task)
        cls = None if klass == "-" else TaskClass(klass)
    except ValueError as e:
        raise DataError(f"{path}:{lineno}: {e}") from None
    if vocab not in ("V1", "V2") or mixed not in ("0", "1"):
        raise DataError(f"{path}:{lineno}: bad vocab tag or mixed flag")
    return Sample(inp_t, tgt_t, kind, cls, vocab, mixed == "1")


def iter_content_vocab(samples: Iterable[Sample]) -> set:
    return {t for s in samples for t in s.content_tokens()}


def as_xy(d: Dataset | Sequence[Sample]):
    """``(inputs, targets)`` lists, sklearn-style."""
    return [s.input_tokens for s in d], [s.target_tokens for s in d]
