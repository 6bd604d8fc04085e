"""Accuracy matrices (task/class rows x setting columns) from a result store."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .datagen import Setting
from .tasks import TaskClass, TaskKind

HIGH, LOW = 0.90, 0.10
REFERENCE_LABEL = "external (t5-base reference)"
FORMATS = ("tsv", "markdown", "structured")

# Published t5-base test accuracies per (task, class) for
# zero-shot, flip mix 0, flip mix 0.01, flip mix 0.10. Single numbers, no seeds.
T5_REFERENCE = {
    (TaskKind.COPY_REVERSE_SEQ2SEQ, TaskClass.C1): (1.00, 0.75, 1.00, 1.00),
    (TaskKind.COPY_REVERSE_SEQ2SEQ, TaskClass.C2): (0.97, 0.72, 0.99, 0.99),
    (TaskKind.COPY_REVERSE_DETECTION, TaskClass.C1): (1.00, 0.00, 1.00, 1.00),
    (TaskKind.COPY_REVERSE_DETECTION, TaskClass.C2): (0.88, 0.00, 0.94, 1.00),
    (TaskKind.PALINDROME_DETECTION, TaskClass.C1): (1.00, 0.07, 0.09, 0.90),
    (TaskKind.PALINDROME_DETECTION, TaskClass.C2): (0.90, 0.00, 0.02, 0.91),
    (TaskKind.REPETITION_DETECTION, TaskClass.C1): (0.96, 0.08, 0.27, 0.30),
    (TaskKind.REPETITION_DETECTION, TaskClass.C2): (1.00, 0.10, 0.12, 0.10),
}
_REF_SETTINGS = ("zero-shot", Setting.flip(0.0).label, Setting.flip(0.01).label, Setting.flip(0.1).label)


class ReportError(ValueError):
    pass


def reference_value(task: TaskKind, klass: TaskClass, setting_label: str) -> float | None:
    if setting_label not in _REF_SETTINGS:
        return None
    return T5_REFERENCE[(task, klass)][_REF_SETTINGS.index(setting_label)]


@dataclass
class ReportRow:
    task: str
    klass: str
    meaning: str
    phase: str
    source: str
    cells: dict = field(default_factory=dict)  # setting label -> list of per-seed values

    def mean(self, setting: str) -> float | None:
        vals = self.cells.get(setting)
        return float(np.mean(vals)) if vals else None

    def spread(self, setting: str) -> float | None:
        vals = self.cells.get(setting)
        return float(np.std(vals)) if vals else None


def band(value: float | None) -> str:
    if value is None:
        return ""
    if value >= HIGH:
        return "high"
    if value <= LOW:
        return "low"
    return ""


def _ordered(values, key_order):
    seen = [v for v in key_order if v in values]
    return seen + sorted(v for v in values if v not in key_order)


def build_rows(records: list[dict], phase: str = "test", source: str | None = None):
    """Rows for one phase; returns ``(rows, settings, missing)``."""
    ok = [r for r in records if r.get("status") == "ok" and (source is None or r["source"] == source)]
    if not records:
        raise ReportError("result store is empty")
    tasks = _ordered({r["task"] for r in records}, [t.value for t in TaskKind])
    settings = _ordered({r["setting"] for r in records}, list(_REF_SETTINGS))
    sources = _ordered({r["source"] for r in ok} or ({source} if source else set()), ["tinyformer"])
    seeds = sorted({r["seed"] for r in records})
    rows, missing = [], []
    for src in sources:
        for task in tasks:
            kind = TaskKind(task)
            if src != "tinyformer" and kind.is_seq2seq:
                continue  # baselines are classifiers
            for klass in TaskClass:
                row = ReportRow(task, klass.value, klass.meaning(kind), phase, src)
                for setting in settings:
                    vals = []
                    for r in ok:
                        if (r["source"], r["task"], r["setting"]) == (src, task, setting):
                            vals.append(r["metrics"][phase]["accuracy"][klass.value])
                    if vals:
                        row.cells[setting] = vals
                    if len(vals) < len(seeds):
                        missing.append((src, task, klass.value, setting, len(seeds) - len(vals)))
                rows.append(row)
    return rows, settings, missing


def trend_summary(rows: list[ReportRow]) -> dict:
    """Descriptive gaps: seq2seq minus classification under flip; zero-shot minus flip."""
    flip = [s for s in {k for r in rows for k in r.cells} if s.startswith("flip")]

    def mean_of(selected, settings):
        vals = [r.mean(s) for r in selected for s in settings if r.mean(s) is not None]
        return float(np.mean(vals)) if vals else None

    s2s = [r for r in rows if TaskKind(r.task).is_seq2seq]
    cls = [r for r in rows if not TaskKind(r.task).is_seq2seq]
    out = {}
    a, b = mean_of(s2s, flip), mean_of(cls, flip)
    out["seq2seq_minus_classification_flip"] = None if a is None or b is None else a - b
    z, f = mean_of(rows, ["zero-shot"]), mean_of(rows, flip)
    out["zero_shot_minus_flip"] = None if z is None or f is None else z - f
    return out


def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.4f}"


def emit_report(records: list[dict], fmt: str = "markdown", phase: str = "test", source: str | None = None,
                reference: bool = False) -> str:
    if fmt not in FORMATS:
        raise ReportError(f"unknown format {fmt!r}; choose from {FORMATS}")
    rows, settings, missing = build_rows(records, phase, source)
    trends = {}
    for src in dict.fromkeys(r.source for r in rows):
        trends[src] = trend_summary([r for r in rows if r.source == src])
    show_ref = reference and phase == "test"
    if fmt == "structured":
        return _structured(rows, settings, missing, trends, show_ref)
    if fmt == "tsv":
        return _tsv(rows, settings, show_ref)
    return _markdown(rows, settings, missing, trends, show_ref, phase)


def _structured(rows, settings, missing, trends, show_ref) -> str:
    out = {"settings": settings, "rows": [], "missing": [list(m) for m in missing], "trends": trends,
           "bands": {"high": HIGH, "low": LOW}}
    for r in rows:
        cells = {}
        for s in settings:
            entry = {"mean": r.mean(s), "spread": r.spread(s), "values": r.cells.get(s, []),
                     "band": band(r.mean(s))}
            if show_ref:
                entry["reference"] = reference_value(TaskKind(r.task), TaskClass(r.klass), s)
            cells[s] = entry
        out["rows"].append({"task": r.task, "class": r.klass, "meaning": r.meaning, "phase": r.phase,
                            "source": r.source, "cells": cells})
    if show_ref:
        out["reference_label"] = REFERENCE_LABEL
    return json.dumps(out, indent=1, sort_keys=True)


def _tsv(rows, settings, show_ref) -> str:
    head = ["source", "task", "class", "meaning", "phase"]
    for s in settings:
        head += [f"{s}:mean", f"{s}:spread", f"{s}:n", f"{s}:band"]
        if show_ref:
            head.append(f"{s}:{REFERENCE_LABEL}")
    lines = ["\t".join(head)]
    for r in rows:
        vals = [r.source, r.task, r.klass, r.meaning, r.phase]
        for s in settings:
            vals += [_fmt(r.mean(s)), _fmt(r.spread(s)), str(len(r.cells.get(s, []))), band(r.mean(s))]
            if show_ref:
                vals.append(_fmt(reference_value(TaskKind(r.task), TaskClass(r.klass), s)))
        lines.append("\t".join(vals))
    return "\n".join(lines) + "\n"


def _markdown(rows, settings, missing, trends, show_ref, phase) -> str:
    out = []
    for src in dict.fromkeys(r.source for r in rows):
        sub = [r for r in rows if r.source == src]
        out.append(f"### {src} ({phase} accuracy per task class, mean ± spread over seeds)\n")
        head = ["task", "class"]
        for s in settings:
            head.append(s)
            if show_ref:
                head.append(f"{s} [{REFERENCE_LABEL}]")
        out.append("| " + " | ".join(head) + " |")
        out.append("|" + "---|" * len(head))
        for r in sub:
            cells = [TaskKind(r.task).short, r.meaning]
            for s in settings:
                m = r.mean(s)
                if m is None:
                    cells.append("(missing)")
                else:
                    mark = {"high": " ▲", "low": " ▼"}.get(band(m), "")
                    cells.append(f"{_fmt(m)} ± {_fmt(r.spread(s))}{mark}")
                if show_ref:
                    cells.append(_fmt(reference_value(TaskKind(r.task), TaskClass(r.klass), s)))
            out.append("| " + " | ".join(cells) + " |")
        t = trends[src]
        out.append("")
        out.append(f"- seq2seq − classification (flip settings): {_fmt_trend(t['seq2seq_minus_classification_flip'])}")
        out.append(f"- zero-shot − flip: {_fmt_trend(t['zero_shot_minus_flip'])}")
        out.append("")
    out.append(f"▲ mean ≥ {HIGH:.2f}; ▼ mean ≤ {LOW:.2f}. Spread is the population standard deviation over seeds.")
    if show_ref:
        out.append(f"Columns marked [{REFERENCE_LABEL}] are published t5-base numbers, not results of this "
                   "bench.")
    out.append("Caveat: the published t5-base accuracies are single numbers per cell; whether each is one run "
               "or an average is not stated, so they carry no spread.")
    if missing:
        out.append("")
        out.append("Missing cells: " + "; ".join(f"{s}/{t}/{c}/{st} ({n} seed(s))" for s, t, c, st, n in missing))
    return "\n".join(out) + "\n"


def _fmt_trend(x):
    return "n/a" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{x:+.4f}"
