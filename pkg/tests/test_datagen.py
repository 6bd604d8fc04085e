import dataclasses

import numpy as np
import pytest

from rulebench import datagen
from rulebench.datagen import (
    DataError,
    DatasetSpec,
    Setting,
    apply_mix,
    assign_vocabulary,
    build_dataset,
    build_pretrain_corpus,
    build_splits,
    make_sample,
    read_dataset,
    sample_sequence,
    verify_sample,
    write_dataset,
)
from rulebench.tasks import DEFAULT_TABLE, TaskClass, TaskKind, has_repetition, is_palindrome

V1 = DEFAULT_TABLE.v1
SMALL = dict(pool_size=400, test_size=200)


def rng(seed=0):
    return np.random.default_rng(seed)


def test_palindrome_construction():
    r = rng()
    for _ in range(200):
        s = sample_sequence(V1, (3, 3), "palindrome", r)
        assert len(s) == 3 and s[0] == s[2]


def test_no_repetition_draws():
    r = rng(1)
    for _ in range(10000):
        s = sample_sequence(V1, (2, 10), "no_repetition", r)
        assert not has_repetition(s)
        assert 2 <= len(s) <= 10


def test_any_lengths_in_range():
    r = rng(2)
    lengths = {len(sample_sequence(V1, (1, 10), "any", r)) for _ in range(2000)}
    assert lengths == set(range(1, 11))


@pytest.mark.parametrize("constraint,check", [
    ("force_repetition", has_repetition),
    ("non_palindrome", lambda s: not is_palindrome(s)),
    ("palindrome", is_palindrome),
])
def test_constraints_hold(constraint, check):
    r = rng(3)
    for _ in range(2000):
        s = sample_sequence(V1, (1, 10), constraint, r)
        assert check(s)


def test_constructive_fallback(monkeypatch):
    monkeypatch.setattr(datagen, "MAX_ATTEMPTS", 0)
    r = rng(4)
    for _ in range(500):
        assert has_repetition(sample_sequence(V1, (2, 6), "force_repetition", r))
        assert not is_palindrome(sample_sequence(V1, (2, 6), "non_palindrome", r))


def test_unsatisfiable_constraints():
    with pytest.raises(DataError):
        sample_sequence(V1, (11, 12), "no_repetition", rng())
    with pytest.raises(DataError):
        sample_sequence(V1, (1, 1), "non_palindrome", rng())
    with pytest.raises(DataError):
        sample_sequence(V1, (1, 1), "force_repetition", rng())
    with pytest.raises(DataError):
        sample_sequence(V1, (1, 3), "sorted", rng())


def test_make_sample_shapes():
    r = rng(5)
    seen_reverse = False
    for _ in range(200):
        s = make_sample(TaskKind.COPY_REVERSE_SEQ2SEQ, TaskClass.C2, V1, r)
        assert s.input_tokens[0] == "reverse:"
        assert s.target_tokens == tuple(reversed(s.input_tokens[1:]))
        seen_reverse = True
    assert seen_reverse
    s = make_sample(TaskKind.REPETITION_DETECTION, TaskClass.C1, V1, r)
    assert has_repetition(s.input_tokens) and s.target_tokens == ("1",)
    s = make_sample(TaskKind.COPY_REVERSE_DETECTION, TaskClass.C2, V1, r)
    i = s.input_tokens.index("</s>")
    assert s.input_tokens[i + 1:] == tuple(reversed(s.input_tokens[:i]))
    assert s.target_tokens == ("0",)


@pytest.mark.parametrize("task", list(TaskKind))
@pytest.mark.parametrize("klass", list(TaskClass))
def test_make_sample_matches_oracle(task, klass):
    r = rng(6)
    for _ in range(10000):
        verify_sample(make_sample(task, klass, V1, r))


def test_assign_vocabulary_table():
    zs, fl = Setting.zero_shot(), Setting.flip(0.0)
    assert assign_vocabulary(zs, "test", TaskClass.C1) == "V2"
    assert assign_vocabulary(zs, "train", TaskClass.C2) == "V1"
    assert assign_vocabulary(zs, "eval", TaskClass.C1) == "V1"
    assert assign_vocabulary(fl, "train", TaskClass.C2) == "V2"
    assert assign_vocabulary(fl, "train", TaskClass.C1) == "V1"
    assert assign_vocabulary(fl, "test", TaskClass.C2) == "V1"
    assert assign_vocabulary(fl, "test", TaskClass.C1) == "V2"


def test_apply_mix_bounds():
    r = rng(7)
    assert all(apply_mix("V1", 0.0, r) == ("V1", False) for _ in range(1000))
    assert all(apply_mix("V1", 1.0, r) == ("V2", True) for _ in range(1000))
    swaps = sum(apply_mix("V1", 0.10, r)[1] for _ in range(10000))
    # binomial(10000, 0.1): sd 30, so [900, 1100] is +-3.3 sd
    assert 900 <= swaps <= 1100
    with pytest.raises(DataError):
        apply_mix("V1", 0.1, r, phase="test")


def test_setting_validation():
    with pytest.raises(DataError):
        Setting.flip(1.5)
    with pytest.raises(DataError):
        Setting("ZeroShot", 0.1)
    assert Setting.parse("flip-mix0.01") == Setting.flip(0.01)
    assert Setting.parse(Setting.flip(0.1).label) == Setting.flip(0.1)
    assert Setting.parse("zero-shot") == Setting.zero_shot()


def test_default_sizes():
    spec = DatasetSpec(TaskKind.PALINDROME_DETECTION)
    assert (spec.train_size, spec.eval_size, spec.test_size) == (8000, 2000, 10000)
    splits = build_splits(spec)
    assert [len(splits[p]) for p in ("train", "eval", "test")] == [8000, 2000, 10000]
    for d in splits.values():
        counts = d.class_counts()
        assert counts[TaskClass.C1] == counts[TaskClass.C2] == len(d) // 2


@pytest.mark.parametrize("task", list(TaskKind))
def test_splits_are_sound(task):
    splits = build_splits(DatasetSpec(task, Setting.flip(0.1), seed=11, **SMALL))
    inputs = {}
    for phase, d in splits.items():
        keys = [s.input_tokens for s in d]
        assert len(keys) == len(set(keys)), "duplicates within a phase"
        inputs[phase] = set(keys)
        for s in d:
            verify_sample(s)
            if phase == "test":
                assert not s.mixed
    assert inputs["train"].isdisjoint(inputs["eval"])


def test_build_dataset_matches_splits():
    spec = DatasetSpec(TaskKind.REPETITION_DETECTION, seed=3, **SMALL)
    splits = build_splits(spec)
    for phase in ("train", "eval", "test"):
        assert build_dataset(spec.with_phase(phase)).fingerprint == splits[phase].fingerprint


def test_fingerprints_deterministic_and_seed_sensitive():
    spec = DatasetSpec(TaskKind.COPY_REVERSE_DETECTION, phase="test", pool_size=20, test_size=20)
    assert build_dataset(spec).fingerprint == build_dataset(spec).fingerprint
    prints = {build_dataset(dataclasses.replace(spec, seed=s)).fingerprint for s in range(1000)}
    assert len(prints) >= 999


def test_protocol_properties():
    zs = build_splits(DatasetSpec(TaskKind.REPETITION_DETECTION, Setting.zero_shot(), **SMALL))
    train_vocab = datagen.iter_content_vocab(zs["train"]) | datagen.iter_content_vocab(zs["eval"])
    assert train_vocab.isdisjoint(datagen.iter_content_vocab(zs["test"]))

    fl = build_splits(DatasetSpec(TaskKind.PALINDROME_DETECTION, Setting.flip(0.0), **SMALL))
    for s in fl["train"]:
        assert s.source_vocab == ("V1" if s.klass is TaskClass.C1 else "V2")
    for s in fl["test"]:
        assert s.source_vocab == ("V2" if s.klass is TaskClass.C1 else "V1")


def test_io_round_trip(tmp_path):
    d = build_dataset(DatasetSpec(TaskKind.COPY_REVERSE_SEQ2SEQ, Setting.flip(0.1), phase="train",
                                  pool_size=10000, test_size=20))
    path = tmp_path / "train.tsv"
    write_dataset(d, path)
    back = read_dataset(path)
    assert back.fingerprint == d.fingerprint
    assert back.samples == d.samples
    assert back.spec == d.spec
    write_dataset(back, tmp_path / "again.tsv")
    assert (tmp_path / "again.tsv").read_bytes() == path.read_bytes()
    path.read_bytes().decode("ascii")


def test_io_errors(tmp_path):
    d = build_dataset(DatasetSpec(TaskKind.PALINDROME_DETECTION, phase="eval", pool_size=40, test_size=20))
    path = tmp_path / "eval.tsv"
    write_dataset(d, path)
    lines = path.read_text().splitlines()
    bad = lines[:]
    bad[3] = "a b Z\t1\tpalindrome_detection\tC1\tV1\t0"
    path.write_text("\n".join(bad) + "\n")
    with pytest.raises(DataError, match=r":4: token 'Z'"):
        read_dataset(path)
    bad = lines[:]
    bad[2] = bad[2].replace("\t", " ", 1)
    path.write_text("\n".join(bad) + "\n")
    with pytest.raises(DataError, match=":3:"):
        read_dataset(path)
    tampered = lines[:]
    tampered[1], tampered[2] = tampered[2], tampered[1]
    path.write_text("\n".join(tampered) + "\n")
    with pytest.raises(DataError, match="fingerprint"):
        read_dataset(path)


def test_pretrain_corpus():
    corpus = build_pretrain_corpus(DEFAULT_TABLE, size=10000, seed=1)
    v1 = sum(s.source_vocab == "V1" for s in corpus)
    assert 0.48 <= v1 / len(corpus) <= 0.52
    for s in corpus:
        assert all(t in DEFAULT_TABLE for t in s.target_tokens)
        assert len(s.input_tokens) == len(s.target_tokens)
        assert {DEFAULT_TABLE.vocab_tag(t) for t in s.target_tokens} == {s.source_vocab}
    masked = sum(t == "<mask>" for s in corpus for t in s.input_tokens)
    total = sum(len(s.input_tokens) for s in corpus)
    assert 0.13 < masked / total < 0.17
    clean = build_pretrain_corpus(DEFAULT_TABLE, size=500, corruption_rate=0.0, seed=1)
    assert all(s.input_tokens == s.target_tokens for s in clean)
    with pytest.raises(DataError):
        build_pretrain_corpus(DEFAULT_TABLE, size=10, corruption_rate=1.0)


def test_pretrain_corpus_round_trip(tmp_path):
    corpus = build_pretrain_corpus(DEFAULT_TABLE, size=50, seed=2)
    write_dataset(corpus, tmp_path / "c.tsv")
    assert read_dataset(tmp_path / "c.tsv").fingerprint == corpus.fingerprint
