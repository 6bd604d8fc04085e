"""Tokens, vocabularies, task identities and exact label oracles.

Sequences are plain tuples of token surface strings; every predicate here
is pure and works on any sequence of hashable tokens.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

PAD = "<pad>"
START = "<s>"
END = "<eos>"
SEP = "</s>"
COPY = "copy:"
REVERSE = "reverse:"
YES = "1"
NO = "0"
SENTINEL = "<mask>"

SPECIALS = (PAD, START, END, SEP, COPY, REVERSE, YES, NO, SENTINEL)

DEFAULT_V1 = "abcdefghij"
DEFAULT_V2 = "klmnopqrst"


class TaskError(ValueError):
    """Invalid input for a task oracle."""


@dataclass(frozen=True)
class Token:
    id: int
    surface: str
    kind: str  # special | v1 | v2


@dataclass(frozen=True)
class Vocabulary:
    name: str
    tokens: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.tokens)) != len(self.tokens):
            raise TaskError(f"vocabulary {self.name} has duplicate tokens")
        if not self.tokens:
            raise TaskError(f"vocabulary {self.name} is empty")
        object.__setattr__(self, "_members", frozenset(self.tokens))

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self._members

    def __iter__(self):
        return iter(self.tokens)


class TaskKind(str, enum.Enum):
    COPY_REVERSE_SEQ2SEQ = "copy_reverse_seq2seq"
    COPY_REVERSE_DETECTION = "copy_reverse_detection"
    PALINDROME_DETECTION = "palindrome_detection"
    REPETITION_DETECTION = "repetition_detection"

    @property
    def is_seq2seq(self) -> bool:
        return self is TaskKind.COPY_REVERSE_SEQ2SEQ

    @property
    def is_classification(self) -> bool:
        return not self.is_seq2seq

    @property
    def takes_pair(self) -> bool:
        return self is TaskKind.COPY_REVERSE_DETECTION

    @property
    def short(self) -> str:
        return _SHORT[self]

    @classmethod
    def parse(cls, text: str) -> "TaskKind":
        text = text.strip().lower()
        for kind in cls:
            if text in (kind.value, kind.short):
                return kind
        raise TaskError(f"unknown task {text!r}")


_SHORT = {
    TaskKind.COPY_REVERSE_SEQ2SEQ: "copy",
    TaskKind.COPY_REVERSE_DETECTION: "detect",
    TaskKind.PALINDROME_DETECTION: "palindrome",
    TaskKind.REPETITION_DETECTION: "repetition",
}


class TaskClass(str, enum.Enum):
    C1 = "C1"
    C2 = "C2"

    def meaning(self, kind: TaskKind) -> str:
        return CLASS_MEANINGS[kind][self is TaskClass.C2]

    def target_marker(self, kind: TaskKind) -> str:
        """Prefix token for seq2seq, label token for classification."""
        if kind.is_seq2seq:
            return COPY if self is TaskClass.C1 else REVERSE
        return YES if self is TaskClass.C1 else NO


CLASS_MEANINGS = {
    TaskKind.COPY_REVERSE_SEQ2SEQ: ("copy", "reverse"),
    TaskKind.COPY_REVERSE_DETECTION: ("copy", "reverse"),
    TaskKind.PALINDROME_DETECTION: ("palindrome", "non-palindrome"),
    TaskKind.REPETITION_DETECTION: ("repetition", "no repetition"),
}


class SequencePair(NamedTuple):
    left: tuple
    right: tuple


class TokenTable:
    """Dense id assignment: specials, then V1, then V2."""

    def __init__(self, v1: Sequence[str] = DEFAULT_V1, v2: Sequence[str] = DEFAULT_V2):
        self.v1 = Vocabulary("V1", tuple(v1))
        self.v2 = Vocabulary("V2", tuple(v2))
        overlap = set(self.v1.tokens) & set(self.v2.tokens)
        if overlap:
            raise TaskError(f"V1 and V2 overlap on {sorted(overlap)}")
        clash = (set(self.v1.tokens) | set(self.v2.tokens)) & set(SPECIALS)
        if clash:
            raise TaskError(f"vocabulary tokens collide with reserved markers: {sorted(clash)}")
        for tok in self.v1.tokens + self.v2.tokens:
            if not (len(tok) == 1 and tok.isprintable() and not tok.isspace()):
                raise TaskError(f"vocabulary token {tok!r} is not a single printable character")
        tokens = [Token(i, s, "special") for i, s in enumerate(SPECIALS)]
        tokens += [Token(len(tokens) + i, s, "v1") for i, s in enumerate(self.v1.tokens)]
        tokens += [Token(len(tokens) + i, s, "v2") for i, s in enumerate(self.v2.tokens)]
        self.tokens = tuple(tokens)
        self._by_surface = {t.surface: t for t in tokens}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, surface):
        return surface in self._by_surface

    def __eq__(self, other):
        return isinstance(other, TokenTable) and self.tokens == other.tokens

    def __hash__(self):
        return hash(self.tokens)

    def id_of(self, surface: str) -> int:
        try:
            return self._by_surface[surface].id
        except KeyError:
            raise TaskError(f"unknown token {surface!r}") from None

    def surface_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise TaskError(f"token id {idx} out of range")
        return self.tokens[idx].surface

    def vocab(self, name: str) -> Vocabulary:
        if name == "V1":
            return self.v1
        if name == "V2":
            return self.v2
        raise TaskError(f"unknown vocabulary {name!r}")

    def vocab_tag(self, surface: str) -> str | None:
        """'V1', 'V2' or None for reserved markers."""
        kind = self._by_surface[surface].kind
        return {"v1": "V1", "v2": "V2"}.get(kind)

    def to_lines(self) -> list[str]:
        return [f"{t.id}\t{t.surface}\t{t.kind}" for t in self.tokens]

    def write(self, path) -> None:
        Path(path).write_text("\n".join(self.to_lines()) + "\n", encoding="ascii")

    @classmethod
    def read(cls, path) -> "TokenTable":
        v1, v2 = [], []
        specials = []
        for lineno, line in enumerate(Path(path).read_text(encoding="ascii").splitlines(), 1):
            parts = line.split("\t")
            if len(parts) != 3:
                raise TaskError(f"{path}:{lineno}: expected 3 fields")
            idx, surface, kind = parts
            if int(idx) != lineno - 1:
                raise TaskError(f"{path}:{lineno}: ids must be dense and ordered")
            {"special": specials, "v1": v1, "v2": v2}[kind].append(surface)
        if tuple(specials) != SPECIALS:
            raise TaskError(f"{path}: reserved markers differ from this build")
        return cls(v1, v2)


DEFAULT_TABLE = TokenTable()


def reverse_seq(s: Sequence) -> tuple:
    return tuple(reversed(tuple(s)))


def _nonempty(s: Sequence) -> tuple:
    s = tuple(s)
    if not s:
        raise TaskError("empty sequence")
    return s


def is_palindrome(s: Sequence) -> bool:
    s = _nonempty(s)
    return s == s[::-1]


def has_repetition(s: Sequence) -> bool:
    s = _nonempty(s)
    return len(set(s)) < len(s)


def is_copy_pair(p: SequencePair) -> bool:
    return tuple(p[0]) == tuple(p[1])


def is_reverse_pair(p: SequencePair) -> bool:
    return tuple(p[0]) == reverse_seq(p[1])


def gold_label(kind: TaskKind, content) -> TaskClass:
    """Class whose oracle predicate holds for ``content``.

    ``content`` is a SequencePair for copy/reverse detection and a plain
    sequence otherwise. For the seq2seq task the plain sequence is
    ``(prefix, *tokens)`` and the prefix decides the class.
    """
    if kind is TaskKind.COPY_REVERSE_DETECTION:
        if not (isinstance(content, tuple) and len(content) == 2
                and all(isinstance(x, (tuple, list)) for x in content)):
            raise TaskError("copy/reverse detection expects a (left, right) pair")
        left, right = _nonempty(content[0]), _nonempty(content[1])
        if is_palindrome(left):
            raise TaskError("palindromic left sequence is ambiguous between copy and reverse")
        pair = SequencePair(left, right)
        if is_copy_pair(pair):
            return TaskClass.C1
        if is_reverse_pair(pair):
            return TaskClass.C2
        raise TaskError("pair is neither a copy nor a reversal")
    if isinstance(content, SequencePair) or (
        isinstance(content, tuple) and content and isinstance(content[0], (tuple, list))
    ):
        raise TaskError(f"{kind.value} expects a single sequence, got a pair")
    s = _nonempty(content)
    if kind is TaskKind.COPY_REVERSE_SEQ2SEQ:
        prefix, body = s[0], s[1:]
        if prefix not in (COPY, REVERSE) or not body:
            raise TaskError("seq2seq input must be a copy:/reverse: prefix followed by tokens")
        if is_palindrome(body):
            raise TaskError("palindromic content is ambiguous between copy and reverse")
        return TaskClass.C1 if prefix == COPY else TaskClass.C2
    if kind is TaskKind.PALINDROME_DETECTION:
        return TaskClass.C1 if is_palindrome(s) else TaskClass.C2
    if kind is TaskKind.REPETITION_DETECTION:
        return TaskClass.C1 if has_repetition(s) else TaskClass.C2
    raise TaskError(f"unknown task {kind!r}")


def seq2seq_target(content: Sequence, klass: TaskClass) -> tuple:
    content = tuple(content)
    return content if klass is TaskClass.C1 else reverse_seq(content)


ENUMERATION_CAP = 2_000_000


def enumerate_sequences(vocab, max_len: int, cap: int = ENUMERATION_CAP) -> Iterator[tuple]:
    """Every sequence of length 1..max_len, shortest first, lexicographic by token order."""
    tokens = tuple(vocab)
    if max_len < 1:
        raise TaskError("max_len must be >= 1")
    total = sum(len(tokens) ** n for n in range(1, max_len + 1))
    if total > cap:
        raise TaskError(f"enumeration of {total} sequences exceeds cap {cap}")
    for n in range(1, max_len + 1):
        yield from itertools.product(tokens, repeat=n)
