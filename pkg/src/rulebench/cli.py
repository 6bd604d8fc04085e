"""Command-line entry point: ``rulebench <command> ...``.

Commands: gen, pretrain, train, eval, baseline, grid, report. Every command
that takes ``--config`` reads the same key = value file as the grid runner,
so model/train/data overrides are shared between single runs and grids.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .baselines import BaselineKind, baseline_metrics, make_baseline, supports
from .datagen import PHASES, Setting, build_pretrain_corpus, build_splits, read_dataset, write_dataset
from .grid import ConfigError, ExperimentGrid, ResultStore, parse_config, run_grid
from .report import FORMATS, emit_report
from .tasks import TaskKind
from .tinyformer.model import Tokenizer, TransformerModel, load_checkpoint, save_checkpoint
from .trainkit import evaluate, pretrain, run_training, write_history

log = logging.getLogger("rulebench")


def _grid(args) -> ExperimentGrid:
    return parse_config(args.config) if args.config else ExperimentGrid()


def _splits(grid: ExperimentGrid, args):
    return build_splits(grid.dataset_spec(TaskKind.parse(args.task), Setting.parse(args.setting), args.seed))


def _emit(obj: dict, out: Path | None, name: str) -> None:
    text = json.dumps(obj, indent=1, sort_keys=True)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text + "\n")
    print(text)


def cmd_gen(args) -> int:
    splits = _splits(_grid(args), args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for phase, d in splits.items():
        write_dataset(d, out / f"{phase}.tsv")
        print(f"{phase}\t{len(d)}\t{d.fingerprint}")
    return 0


def cmd_pretrain(args) -> int:
    grid = _grid(args)
    tok = Tokenizer()
    model = TransformerModel(grid.model, seed=args.seed)
    p = grid.pretrain
    corpus = build_pretrain_corpus(tok.table, p.size, (grid.data.length_min, grid.data.length_max),
                                   p.corruption_rate, seed=args.seed)
    cfg = dataclasses.replace(grid.train, seed=args.seed, pretrain_epochs=args.epochs or p.epochs)
    opt = pretrain(model, corpus, cfg, tok)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "pretrained.npz", model, step=opt.t, extra={"epoch": 0})
    print(f"pretrained {opt.t} steps -> {out / 'pretrained.npz'}")
    return 0


def cmd_train(args) -> int:
    grid = _grid(args)
    splits = _splits(grid, args)
    tok = Tokenizer()
    model = TransformerModel(grid.model, seed=args.seed)
    if args.init:
        model.load_state_dict(load_checkpoint(args.init)[0].state_dict())
    cfg = dataclasses.replace(grid.train, seed=args.seed)
    if args.epochs:
        cfg = dataclasses.replace(cfg, epochs=args.epochs)
    best, history = run_training(model, splits["train"], splits["eval"], cfg, tok)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    best.save(out / "best.npz")
    write_history(history, out / "history.tsv")
    metrics = {p: evaluate(best, d, tok).to_dict() for p, d in splits.items()}
    _emit({"best_epoch": best.epoch, "best_eval_loss": best.eval_loss, "metrics": metrics,
           "fingerprints": {p: d.fingerprint for p, d in splits.items()}}, out, "metrics.json")
    return 0


def cmd_eval(args) -> int:
    model, _ = load_checkpoint(args.checkpoint)
    result = {}
    for path in args.data:
        result[path] = evaluate(model, read_dataset(path)).to_dict()
    _emit(result, None, "")
    return 0


def cmd_baseline(args) -> int:
    task = TaskKind.parse(args.task)
    if not supports(args.kind, task):
        print(f"error: baseline {args.kind} does not apply to {task.value}", file=sys.stderr)
        return 2
    splits = _splits(_grid(args), args)
    train = splits["train"].samples
    clf = make_baseline(args.kind, task).fit([s.input_tokens for s in train], [s.klass for s in train])
    _emit({p: baseline_metrics(clf, d, args.kind).to_dict() for p, d in splits.items()},
          Path(args.out) if args.out else None, f"{args.kind}.json")
    return 0


def cmd_grid(args) -> int:
    grid = _grid(args)
    run = run_grid(grid, args.out, args.workers)
    print(f"executed {len(run.executed)}, skipped {len(run.skipped)}, failed {len(run.failed)}, "
          f"training steps {run.training_steps}")
    if run.failed:
        print("failed cells:", file=sys.stderr)
        for cell_id in run.failed:
            print(f"  {cell_id}: {run.store.load(cell_id).get('error', '')}", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    records = ResultStore(args.out).records()
    text = emit_report(records, args.format, args.phase, args.source, args.reference)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    failed = [r["cell_id"] for r in records if r.get("status") != "ok"]
    if failed:
        print("failed cells: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulebench", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"rulebench {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, task=True, out_required=True):
        p.add_argument("--config", help="key = value config file (see README)")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=out_required, help="output directory")
        if task:
            p.add_argument("--task", required=True, help="copy, detect, palindrome or repetition")
            p.add_argument("--setting", default="zero-shot", help="zero-shot or flip-mix<ratio>")

    p = sub.add_parser("gen", help="generate train/eval/test datasets")
    common(p)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("pretrain", help="denoising pretraining on the mixed-vocabulary corpus")
    common(p, task=False)
    p.add_argument("--epochs", type=int, help="overrides pretrain.epochs")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", help="train one model and evaluate it on all phases")
    common(p)
    p.add_argument("--epochs", type=int, help="overrides train.epochs")
    p.add_argument("--init", help="checkpoint to start from, e.g. pretrained.npz")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-class accuracy of a checkpoint on dataset files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("data", nargs="+", help="dataset files written by 'gen'")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="fit and score one baseline")
    common(p, out_required=False)
    p.add_argument("--kind", required=True, choices=[k.value for k in BaselineKind])
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("grid", help="run (or resume) an experiment grid")
    p.add_argument("--config", help="grid config file; omitted means the default grid")
    p.add_argument("--out", required=True, help="result store directory")
    p.add_argument("--workers", type=int, help="parallel cells (default: grid.workers)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("report", help="accuracy matrix from a result store")
    p.add_argument("--out", required=True, help="result store directory")
    p.add_argument("--format", choices=FORMATS, default="markdown")
    p.add_argument("--phase", choices=PHASES, default="test")
    p.add_argument("--source", help="only this model or baseline")
    p.add_argument("--reference", action="store_true", help="add the external t5-base reference column")
    p.add_argument("--output", help="write to this file instead of stdout")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
