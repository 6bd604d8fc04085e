import itertools
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from rulebench import tasks
from rulebench.tasks import (
    SequencePair,
    TaskClass,
    TaskError,
    TaskKind,
    TokenTable,
    Vocabulary,
    enumerate_sequences,
    gold_label,
    has_repetition,
    is_copy_pair,
    is_palindrome,
    is_reverse_pair,
    reverse_seq,
)

V1 = tasks.DEFAULT_TABLE.v1
seqs = st.lists(st.sampled_from(list("abcdefghij")), min_size=1, max_size=10).map(tuple)


def test_reverse_examples():
    assert reverse_seq(("a", "b")) == ("b", "a")
    assert reverse_seq(("a",)) == ("a",)


def test_reverse_is_involution():
    rng = random.Random(0)
    for _ in range(1000):
        s = tuple(rng.choice("abcdefghij") for _ in range(rng.randint(1, 10)))
        assert reverse_seq(reverse_seq(s)) == s


def test_palindrome_and_repetition_examples():
    assert is_palindrome(("a", "b", "a"))
    assert is_palindrome(("a",))
    assert has_repetition(("a", "b", "a"))
    assert not has_repetition(("a",))
    with pytest.raises(TaskError):
        is_palindrome(())
    with pytest.raises(TaskError):
        has_repetition([])


def _brute_palindrome(s):
    return all(s[i] == s[len(s) - 1 - i] for i in range(len(s)))


def _brute_repetition(s):
    return any(s[i] == s[j] for i in range(len(s)) for j in range(i + 1, len(s)))


def test_length3_counts_by_enumeration():
    # oracle: 10 * 10 palindromes (free first and middle); 1000 - 10*9*8 repeats
    all3 = list(itertools.product(V1.tokens, repeat=3))
    assert len(all3) == 1000
    assert sum(_brute_palindrome(s) for s in all3) == 100
    assert sum(_brute_repetition(s) for s in all3) == 1000 - 10 * 9 * 8 == 280
    assert sum(is_palindrome(s) for s in all3) == 100
    assert sum(has_repetition(s) for s in all3) == 280


def test_pair_predicates():
    assert is_copy_pair(SequencePair(("a", "b"), ("a", "b")))
    assert not is_copy_pair(SequencePair(("a", "b"), ("b", "a")))
    assert is_copy_pair(SequencePair(("a",), ("a",)))
    assert is_reverse_pair(SequencePair(("a", "b"), ("b", "a")))
    assert not is_reverse_pair(SequencePair(("a", "b", "c"), ("a", "b", "c")))


def test_copy_and_reverse_never_both_for_non_palindromes():
    rng = random.Random(1)
    checked = 0
    while checked < 1000:
        s = tuple(rng.choice("abcdefghij") for _ in range(rng.randint(2, 10)))
        if is_palindrome(s):
            continue
        for right in (s, reverse_seq(s)):
            p = SequencePair(s, right)
            assert not (is_copy_pair(p) and is_reverse_pair(p))
        checked += 1


@given(seqs)
def test_palindrome_reversal_symmetry(s):
    assert is_palindrome(s) == is_palindrome(reverse_seq(s))


@given(seqs, st.randoms())
def test_repetition_permutation_invariant(s, r):
    perm = list(s)
    r.shuffle(perm)
    assert has_repetition(s) == has_repetition(perm)


@given(seqs)
def test_pigeonhole(s):
    if len(s) > len(set("abcdefghij")):
        assert has_repetition(s)
    if not has_repetition(s):
        assert len(s) <= 10


@given(seqs)
def test_pair_property(s):
    if is_palindrome(s):
        return
    assert is_copy_pair((s, s)) and not is_reverse_pair((s, s))
    r = reverse_seq(s)
    assert is_reverse_pair((s, r)) and not is_copy_pair((s, r))


def test_gold_label_examples():
    assert gold_label(TaskKind.PALINDROME_DETECTION, ("a", "b", "b")) is TaskClass.C2
    assert gold_label(TaskKind.REPETITION_DETECTION, ("a", "b", "c")) is TaskClass.C2
    assert gold_label(TaskKind.PALINDROME_DETECTION, ("a", "b", "a")) is TaskClass.C1
    assert gold_label(TaskKind.COPY_REVERSE_DETECTION, (("a", "b"), ("a", "b"))) is TaskClass.C1
    assert gold_label(TaskKind.COPY_REVERSE_DETECTION, (("a", "b"), ("b", "a"))) is TaskClass.C2
    assert gold_label(TaskKind.COPY_REVERSE_SEQ2SEQ, ("reverse:", "a", "b")) is TaskClass.C2


def test_gold_label_rejections():
    with pytest.raises(TaskError, match="ambiguous"):
        gold_label(TaskKind.COPY_REVERSE_DETECTION, (("a", "b", "a"), ("a", "b", "a")))
    with pytest.raises(TaskError, match="pair"):
        gold_label(TaskKind.COPY_REVERSE_DETECTION, ("a", "b"))
    with pytest.raises(TaskError, match="single sequence"):
        gold_label(TaskKind.PALINDROME_DETECTION, (("a",), ("a",)))
    with pytest.raises(TaskError):
        gold_label(TaskKind.REPETITION_DETECTION, ())
    with pytest.raises(TaskError, match="ambiguous"):
        gold_label(TaskKind.COPY_REVERSE_SEQ2SEQ, ("copy:", "a", "a"))


def test_gold_label_agrees_with_brute_force_on_full_enumeration():
    alphabet = Vocabulary("A", tuple("abcde"))
    every = list(enumerate_sequences(alphabet, 4))
    assert len(every) == 780
    for s in every:
        assert (gold_label(TaskKind.PALINDROME_DETECTION, s) is TaskClass.C1) == _brute_palindrome(s)
        assert (gold_label(TaskKind.REPETITION_DETECTION, s) is TaskClass.C1) == _brute_repetition(s)
        if not _brute_palindrome(s):
            assert gold_label(TaskKind.COPY_REVERSE_DETECTION, (s, s)) is TaskClass.C1
            assert gold_label(TaskKind.COPY_REVERSE_DETECTION, (s, s[::-1])) is TaskClass.C2


def test_enumeration():
    two = Vocabulary("A", ("a", "b"))
    got = list(enumerate_sequences(two, 2))
    assert got == [("a",), ("b",), ("a", "a"), ("a", "b"), ("b", "a"), ("b", "b")]
    assert len(list(enumerate_sequences(Vocabulary("A", tuple("abcde")), 4))) == 5 + 25 + 125 + 625
    with pytest.raises(TaskError, match="cap"):
        next(enumerate_sequences(V1, 10, cap=1000))
    with pytest.raises(TaskError):
        next(enumerate_sequences(V1, 0))


def test_token_table_layout(tmp_path):
    table = TokenTable()
    surfaces = [t.surface for t in table.tokens]
    assert len(set(surfaces)) == len(surfaces)
    assert [t.id for t in table.tokens] == list(range(len(table)))
    assert surfaces[: len(tasks.SPECIALS)] == list(tasks.SPECIALS)
    assert surfaces[len(tasks.SPECIALS):] == list("abcdefghijklmnopqrst")
    assert set(table.v1.tokens).isdisjoint(table.v2.tokens)
    assert len(table.v1) == len(table.v2) == 10
    path = tmp_path / "tokens.tsv"
    table.write(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "0\t<pad>\tspecial"
    assert lines[len(tasks.SPECIALS)] == f"{len(tasks.SPECIALS)}\ta\tv1"
    assert lines[-1].endswith("\tt\tv2")
    assert TokenTable.read(path) == table


def test_token_table_rejects_collisions():
    with pytest.raises(TaskError, match="overlap"):
        TokenTable("abc", "cde")
    with pytest.raises(TaskError, match="reserved"):
        TokenTable(["a", "1"], "xy")


def test_class_markers():
    assert TaskClass.C1.target_marker(TaskKind.PALINDROME_DETECTION) == "1"
    assert TaskClass.C2.target_marker(TaskKind.REPETITION_DETECTION) == "0"
    assert TaskClass.C2.target_marker(TaskKind.COPY_REVERSE_SEQ2SEQ) == "reverse:"
    assert TaskClass.C2.meaning(TaskKind.PALINDROME_DETECTION) == "non-palindrome"
    assert TaskKind.parse("detect") is TaskKind.COPY_REVERSE_DETECTION
