"""Experiment grid: config parsing, per-cell execution and the on-disk result store.

Config files are line-oriented ``key = value`` pairs with dotted section
names (``model.d_model = 64``). A ``[section]`` line prefixes the keys that
follow it. ``#`` starts a comment. See ``CONFIG_SCHEMA`` for every key.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .baselines import BaselineKind, baseline_metrics, make_baseline, supports
from .datagen import DatasetSpec, Setting, build_pretrain_corpus, build_splits, compute_fingerprint
from .tasks import TaskKind
from .tinyformer.model import ModelConfig, Tokenizer, TransformerModel
from .trainkit import TrainConfig, evaluate, pretrain, run_training, write_history

log = logging.getLogger(__name__)

DEFAULT_SETTINGS = (Setting.zero_shot(), Setting.flip(0.0), Setting.flip(0.01), Setting.flip(0.10))
MODEL_SOURCE = "tinyformer"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DataConfig:
    pool_size: int = 10000
    test_size: int = 10000
    eval_fraction: float = 0.2
    length_min: int = 1
    length_max: int = 10


@dataclass(frozen=True)
class PretrainConfig:
    zero_shot: bool = True
    flip: bool = False
    epochs: int = 2
    size: int = 10000
    corruption_rate: float = 0.15

    def enabled_for(self, setting: Setting) -> bool:
        return (self.flip if setting.is_flip else self.zero_shot) and self.epochs > 0


@dataclass(frozen=True)
class ExperimentGrid:
    tasks: tuple = tuple(TaskKind)
    settings: tuple = DEFAULT_SETTINGS
    seeds: tuple = (0, 1, 2)
    baselines: tuple = tuple(BaselineKind)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    workers: int = 1
    transformer: bool = True

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("grid.tasks: at least one task is required")
        if not self.settings:
            raise ConfigError("grid.settings: at least one setting is required")
        if not self.seeds:
            raise ConfigError("grid.seeds: at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("grid.seeds: duplicate seeds")
        if len(set(self.settings)) != len(self.settings):
            raise ConfigError("grid.settings: duplicate settings")
        if self.workers < 1:
            raise ConfigError("grid.workers: must be >= 1")

    def cells(self) -> list["Cell"]:
        out = []
        for task in self.tasks:
            for setting in self.settings:
                for seed in self.seeds:
                    if self.transformer:
                        out.append(Cell(MODEL_SOURCE, task, setting, seed))
                    for kind in self.baselines:
                        if supports(kind, task):
                            out.append(Cell(BaselineKind(kind).value, task, setting, seed))
        return out

    def dataset_spec(self, task: TaskKind, setting: Setting, seed: int) -> DatasetSpec:
        d = self.data
        return DatasetSpec(task, setting, pool_size=d.pool_size, test_size=d.test_size,
                           eval_fraction=d.eval_fraction, length_range=(d.length_min, d.length_max),
                           seed=seed)

    def to_dict(self) -> dict:
        return {
            "tasks": [t.value for t in self.tasks],
            "settings": [s.label for s in self.settings],
            "seeds": list(self.seeds),
            "baselines": [BaselineKind(b).value for b in self.baselines],
            "model": self.model.to_dict(),
            "train": self.train.to_dict(),
            "data": dataclasses.asdict(self.data),
            "pretrain": dataclasses.asdict(self.pretrain),
            "transformer": self.transformer,
        }


@dataclass(frozen=True)
class Cell:
    source: str
    task: TaskKind
    setting: Setting
    seed: int

    @property
    def cell_id(self) -> str:
        return f"{self.source}__{self.task.short}__{self.setting.label}__s{self.seed}"


# ------------------------------------------------------------------ config

def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _list(v: str) -> list[str]:
    return [x.strip() for x in v.split(",") if x.strip()]


def _typed_fields(cls, skip=()):
    conv = {"int": int, "float": float, "bool": _bool}
    return {f.name: conv[f.type if isinstance(f.type, str) else f.type.__name__]
            for f in dataclasses.fields(cls) if f.name not in skip}


CONFIG_SCHEMA = {
    "grid": {"tasks": _list, "settings": _list, "seeds": _list, "baselines": _list,
             "workers": int, "transformer": _bool},
    "model": _typed_fields(ModelConfig, skip=("vocab_size",)),
    "train": _typed_fields(TrainConfig, skip=("seed", "pretrain_epochs", "pretrain_size", "corruption_rate")),
    "data": _typed_fields(DataConfig),
    "pretrain": _typed_fields(PretrainConfig),
}


def parse_config_text(text: str, source: str = "<config>") -> ExperimentGrid:
    values: dict[str, dict] = {k: {} for k in CONFIG_SCHEMA}
    section = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in CONFIG_SCHEMA:
                raise ConfigError(f"{source}:{lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        path = f"{section}.{key}" if section and "." not in key else key
        if "." not in path:
            raise ConfigError(f"{source}:{lineno}: key {key!r} needs a section (e.g. model.{key})")
        sect, name = path.split(".", 1)
        if sect not in CONFIG_SCHEMA or name not in CONFIG_SCHEMA[sect]:
            raise ConfigError(f"{source}:{lineno}: unknown key {path!r}")
        if name in values[sect]:
            raise ConfigError(f"{source}:{lineno}: duplicate key {path!r}")
        try:
            values[sect][name] = CONFIG_SCHEMA[sect][name](value)
        except ValueError as e:
            raise ConfigError(f"{source}:{lineno}: {path}: {e}") from None
    return _build_grid(values, source)


def _build_grid(values: dict, source: str) -> ExperimentGrid:
    g = values["grid"]
    kwargs = {}
    try:
        if "tasks" in g:
            kwargs["tasks"] = tuple(TaskKind.parse(t) for t in g["tasks"])
        if "settings" in g:
            kwargs["settings"] = tuple(Setting.parse(s) for s in g["settings"])
        if "seeds" in g:
            seeds = tuple(int(s) for s in g["seeds"])
            if any(s < 0 for s in seeds):
                raise ConfigError("grid.seeds: seeds must be non-negative")
            kwargs["seeds"] = seeds
        if "baselines" in g:
            kwargs["baselines"] = tuple(BaselineKind(b) for b in g["baselines"] if b != "none")
    except ValueError as e:
        raise ConfigError(f"{source}: grid: {e}") from None
    for key in ("workers", "transformer"):
        if key in g:
            kwargs[key] = g[key]
    for sect, cls in (("model", ModelConfig), ("train", TrainConfig), ("data", DataConfig),
                      ("pretrain", PretrainConfig)):
        try:
            kwargs[sect] = cls(**values[sect])
        except (ValueError, TypeError) as e:
            raise ConfigError(f"{source}: {sect}: {e}") from None
    d = kwargs["data"]
    if not 1 <= d.length_min <= d.length_max:
        raise ConfigError(f"{source}: data.length_min/length_max: invalid range")
    pt = kwargs["pretrain"]
    if not 0.0 <= pt.corruption_rate < 1.0:
        raise ConfigError(f"{source}: pretrain.corruption_rate: must lie in [0, 1)")
    return ExperimentGrid(**kwargs)


def parse_config(path) -> ExperimentGrid:
    """Validated grid from a config file; an empty file gives the default grid."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    return parse_config_text(path.read_text(), str(path))


# ------------------------------------------------------------------ store

class ResultStore:
    """``<root>/cells/<cell_id>/`` holds result.json, and for model cells history.tsv and best.npz."""

    def __init__(self, root):
        self.root = Path(root)
        (self.root / "cells").mkdir(parents=True, exist_ok=True)

    def cell_dir(self, cell_id: str) -> Path:
        return self.root / "cells" / cell_id

    def load(self, cell_id: str) -> dict | None:
        path = self.cell_dir(cell_id) / "result.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def save(self, record: dict) -> None:
        d = self.cell_dir(record["cell_id"])
        d.mkdir(parents=True, exist_ok=True)
        tmp = d / "result.json.tmp"
        tmp.write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
        tmp.replace(d / "result.json")

    def records(self) -> list[dict]:
        out = []
        for path in sorted((self.root / "cells").glob("*/result.json")):
            out.append(json.loads(path.read_text()))
        return out


@dataclass
class GridRun:
    store: ResultStore
    executed: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    failed: list = field(default_factory=list)
    training_steps: int = 0


def _cell_key(grid: ExperimentGrid, cell: Cell, fingerprints: dict) -> str:
    payload = {"cell": cell.cell_id, "config": _cell_config(grid, cell), "fingerprints": fingerprints,
               "version": __version__}
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def _cell_config(grid: ExperimentGrid, cell: Cell) -> dict:
    cfg = {"data": grid.dataset_spec(cell.task, cell.setting, cell.seed).to_dict()}
    if cell.source == MODEL_SOURCE:
        cfg["model"] = grid.model.to_dict()
        cfg["train"] = dataclasses.replace(grid.train, seed=cell.seed).to_dict()
        cfg["pretrain"] = dataclasses.asdict(grid.pretrain) | {"enabled": grid.pretrain.enabled_for(cell.setting)}
    return cfg


def run_cell(grid: ExperimentGrid, cell: Cell, store: ResultStore) -> tuple[str, dict]:
    """Execute one cell unless an identical completed record exists. Returns (status, record)."""
    splits = build_splits(grid.dataset_spec(cell.task, cell.setting, cell.seed))
    fingerprints = {p: d.fingerprint for p, d in splits.items()}
    key = _cell_key(grid, cell, fingerprints)
    prior = store.load(cell.cell_id)
    if prior is not None and prior.get("key") == key and prior.get("status") == "ok":
        return "skipped", prior
    record = {
        "cell_id": cell.cell_id, "key": key, "source": cell.source, "task": cell.task.value,
        "setting": cell.setting.label, "mix_ratio": cell.setting.mix_ratio, "seed": cell.seed,
        "config": _cell_config(grid, cell), "fingerprints": fingerprints, "version": __version__,
    }
    try:
        if cell.source == MODEL_SOURCE:
            record.update(_run_model_cell(grid, cell, splits, store))
        else:
            train = splits["train"].samples
            clf = make_baseline(cell.source, cell.task).fit(
                [s.input_tokens for s in train], [s.klass for s in train])
            record["metrics"] = {p: baseline_metrics(clf, d, cell.source).to_dict() for p, d in splits.items()}
            record["training_steps"] = 0
        record["status"] = "ok"
    except Exception as e:  # recorded; remaining cells proceed
        record["status"] = "failed"
        record["error"] = f"{type(e).__name__}: {e}"
        log.error("cell %s failed:\n%s", cell.cell_id, traceback.format_exc())
    # datasets must be unchanged by training and evaluation
    for p, d in splits.items():
        if compute_fingerprint(d) != fingerprints[p]:
            record["status"] = "failed"
            record["error"] = f"dataset {p} was mutated during the run"
    store.save(record)
    return record["status"], record


def _run_model_cell(grid: ExperimentGrid, cell: Cell, splits: dict, store: ResultStore) -> dict:
    tok = Tokenizer()
    model = TransformerModel(grid.model, seed=cell.seed)
    train_cfg = dataclasses.replace(grid.train, seed=cell.seed)
    out = {"pretrain_steps": 0}
    steps = 0
    if grid.pretrain.enabled_for(cell.setting):
        corpus = build_pretrain_corpus(tok.table, grid.pretrain.size,
                                       (grid.data.length_min, grid.data.length_max),
                                       grid.pretrain.corruption_rate, seed=cell.seed)
        pcfg = dataclasses.replace(train_cfg, pretrain_epochs=grid.pretrain.epochs)
        opt = pretrain(model, corpus, pcfg, tok)
        out["pretrain_steps"] = opt.t
        out["pretrain_fingerprint"] = corpus.fingerprint
        steps += opt.t
    best, history = run_training(model, splits["train"], splits["eval"], train_cfg, tok)
    steps += len(history) * math.ceil(len(splits["train"]) / train_cfg.batch_size)
    d = store.cell_dir(cell.cell_id)
    d.mkdir(parents=True, exist_ok=True)
    write_history(history, d / "history.tsv")
    best.save(d / "best.npz")
    out["training_steps"] = steps
    out["best_epoch"] = best.epoch
    out["best_eval_loss"] = best.eval_loss
    out["history"] = [dataclasses.asdict(r) for r in history]
    out["metrics"] = {p: evaluate(best, ds, tok).to_dict() for p, ds in splits.items()}
    return out


def _run_cell_job(args):
    grid, cell, root = args
    return cell.cell_id, run_cell(grid, cell, ResultStore(root))[0]


def run_grid(grid: ExperimentGrid, out_dir, workers: int | None = None) -> GridRun:
    """Run every cell, skipping those already completed with identical inputs."""
    store = ResultStore(out_dir)
    (store.root / "grid.json").write_text(json.dumps(grid.to_dict(), sort_keys=True, indent=1) + "\n")
    run = GridRun(store)
    cells = grid.cells()
    workers = workers or grid.workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_cell_job, [(grid, c, str(store.root)) for c in cells]))
    else:
        results = [_run_cell_job((grid, c, str(store.root))) for c in cells]
    for cell_id, status in results:
        {"ok": run.executed, "skipped": run.skipped, "failed": run.failed}[status].append(cell_id)
    for cell_id in run.executed:
        run.training_steps += store.load(cell_id).get("training_steps", 0)
    return run
