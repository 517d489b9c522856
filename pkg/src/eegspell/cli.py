"""``eegspell`` command-line entry point.

Subcommands: simulate | preprocess | train | decode | evaluate. Every command
prints the fully resolved configuration before doing any work.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .codebook import CodebookError, default_codebook, load_codebook
from .config import ConfigError, RunConfig, load_run_config
from .core import DatasetFormatError, EegSpellError, InvariantError, Paradigm, SessionDataset, read_dataset, write_dataset
from .decoder import (
    CharacterPrediction,
    DirectPrediction,
    direct_report_row,
    rank_characters,
    rank_direct,
    report_rows,
    write_report,
)
from .evaluation import compare_paradigms, dataset_labels, run_cross_validation, write_curve_csv
from .preprocess import preprocess_dataset
from .synth import generate_direct_set, generate_order_probe, generate_session_set
from .tsld.estimator import TSLDClassifier
from .tsld.network import DivergenceError
from .tsld.training import METRIC_FIELDS

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGENCE = 0, 2, 3, 4
DATASET_DIRS = {"mental": "mental", "direct": "direct", "probe": "probe"}
CHECKPOINT_NAME = "model.tsld"
LOCATION_KEYS = ("out", "data", "checkpoint", "codebook")

log = logging.getLogger("eegspell")


class CommandError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


def _parse_set(items) -> dict[str, dict]:
    out: dict[str, dict] = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or not name:
            raise ConfigError(f"--set expects section.key=value, got {item!r}")
        out.setdefault(section.strip(), {})[name.strip()] = value
    return out


def resolve_config(args) -> RunConfig:
    """Config file, then ``--set`` entries, then dedicated flags (flags win)."""
    overrides = _parse_set(args.set)
    run = overrides.setdefault("run", {})
    model = overrides.setdefault("model", {})
    if args.seed is not None:
        run["seed"] = str(args.seed)
        overrides.setdefault("synth", {})["seed"] = str(args.seed)
    if args.out is not None:
        run["out"] = args.out
    if args.jobs is not None:
        run["jobs"] = str(args.jobs)
    if getattr(args, "data", None):
        run["data"] = args.data
    if getattr(args, "checkpoint", None):
        run["checkpoint"] = args.checkpoint
    if args.direct:
        model["direct_mode"] = "true"
    if args.ablate_gru:
        model["use_gru"] = "false"
    if args.soft_vote:
        model["soft_vote"] = "true"
    return load_run_config(args.config, overrides)


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.run.out)


def _dataset_path(cfg: RunConfig) -> Path:
    if cfg.run.data:
        return Path(cfg.run.data)
    return _out(cfg) / DATASET_DIRS["direct" if cfg.model["direct_mode"] else "mental"]


def _checkpoint_path(cfg: RunConfig) -> Path:
    return Path(cfg.run.checkpoint) if cfg.run.checkpoint else _out(cfg) / CHECKPOINT_NAME


def _table(cfg: RunConfig):
    return load_codebook(cfg.run.codebook) if cfg.run.codebook else default_codebook()


def _load(path: Path, cfg: RunConfig) -> SessionDataset:
    if not path.exists():
        raise CommandError(f"dataset not found: {path}", EXIT_DATA)
    dataset = read_dataset(path)
    want = Paradigm.DirectImagination if cfg.model["direct_mode"] else Paradigm.MentalTask
    if dataset.paradigm is not want:
        raise CommandError(
            f"{path} holds a {dataset.paradigm.value} dataset but the model is configured for {want.value}", EXIT_CONFIG
        )
    return dataset


def cmd_simulate(cfg: RunConfig, args) -> int:
    out = _out(cfg)
    sets = {
        "mental": generate_session_set(_table(cfg), cfg.synth),
        "direct": generate_direct_set(cfg.synth),
        "probe": generate_order_probe(cfg.synth),
    }
    for name, dataset in sets.items():
        write_dataset(dataset, out / DATASET_DIRS[name])
        print(f"{name}: {len(dataset)} segments, sessions {dataset.sessions} -> {out / DATASET_DIRS[name]}")
    return EXIT_OK


def cmd_preprocess(cfg: RunConfig, args) -> int:
    src = _dataset_path(cfg)
    dataset = _load(src, cfg)
    X = preprocess_dataset(dataset, cfg.preprocess)
    segments = tuple(
        dataclasses.replace(seg, recording=seg.recording.with_data(x)) for seg, x in zip(dataset.segments, X)
    )
    dest = _out(cfg) / f"{src.name}_preprocessed"
    write_dataset(SessionDataset(segments, dataset.alphabet, dataset.paradigm), dest)
    print(f"preprocessed {len(segments)} segments -> {dest}")
    return EXIT_OK


def _provenance(cfg: RunConfig) -> dict:
    """Resolved config minus file locations, so a checkpoint does not depend on where it was written."""
    d = cfg.to_dict()
    d["run"] = {k: v for k, v in d["run"].items() if k not in LOCATION_KEYS}
    return d


def cmd_train(cfg: RunConfig, args) -> int:
    ckpt = _checkpoint_path(cfg)
    if ckpt.exists() and not args.force:
        raise CommandError(f"checkpoint {ckpt} exists; pass --force to overwrite", EXIT_CONFIG)
    dataset = _load(_dataset_path(cfg), cfg).subset(cfg.run.train_sessions)
    if not len(dataset):
        raise CommandError(f"no segments in train_sessions {cfg.run.train_sessions}", EXIT_DATA)
    X = preprocess_dataset(dataset, cfg.preprocess)
    est = cfg.estimator().fit(X, dataset_labels(dataset))
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    est.save(ckpt, {"run": _provenance(cfg)})
    metrics = _out(cfg) / "train_metrics.csv"
    with open(metrics, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_FIELDS)
        writer.writeheader()
        writer.writerows(est.history_)
    print(f"trained {est.n_steps_} steps, best epoch {est.best_epoch_} -> {ckpt}, {metrics}")
    return EXIT_OK


def cmd_decode(cfg: RunConfig, args) -> int:
    ckpt = _checkpoint_path(cfg)
    if not ckpt.exists():
        raise CommandError(f"checkpoint not found: {ckpt}", EXIT_DATA)
    est = TSLDClassifier.load(ckpt)
    if est.config_.direct_mode != bool(cfg.model["direct_mode"]):
        raise CommandError("checkpoint head does not match --direct", EXIT_CONFIG)
    est.set_params(soft_vote=cfg.model["soft_vote"], shift=cfg.model["shift"])
    dataset = _load(_dataset_path(cfg), cfg).subset(cfg.run.decode_sessions)
    if not len(dataset):
        raise CommandError(f"no segments in decode_sessions {cfg.run.decode_sessions}", EXIT_DATA)
    X = preprocess_dataset(dataset, cfg.preprocess)
    decisions = est.decide(X)
    rows = []
    if est.config_.direct_mode:
        for seg, dec in zip(dataset.segments, decisions):
            ranking = rank_direct(dec.task_probs, dataset.alphabet)
            pred = DirectPrediction(ranking[0], ranking, dec.task_probs, dec.task_votes, dec.n_windows)
            rows.append(direct_report_row(seg.character, pred))
        n_chars = len(rows)
    else:
        table = _table(cfg)
        by_id = {id(s): d for s, d in zip(dataset.segments, decisions)}
        trials = dataset.characters()
        for _, char, triple in trials:
            decs = tuple(by_id[id(s)] for s in triple)
            ranking, scores, exact = rank_characters(decs, table)
            rows.extend(report_rows(char, CharacterPrediction(exact, ranking, scores, decs), table))
        n_chars = len(trials)
    report = _out(cfg) / "decode_report.csv"
    report.parent.mkdir(parents=True, exist_ok=True)
    write_report(report, rows)
    print(f"decoded {n_chars} characters -> {report}")
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig, args) -> int:
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    kw = {"seeds": cfg.run.eval_seeds, "preprocess": cfg.preprocess, "n_jobs": cfg.run.jobs}
    if args.paradigm_compare:
        mental = read_dataset(_require(out / DATASET_DIRS["mental"], cfg.run.data))
        direct = read_dataset(_require(out / DATASET_DIRS["direct"]))
        cmp = compare_paradigms(mental, direct, cfg.estimator(), table=_table(cfg), **kw)
        (out / "paradigm_compare.json").write_text(json.dumps(cmp.to_dict(), indent=2))
        write_curve_csv(out / "paradigm_curve.csv", {"mental_task": cmp.mental, "direct": cmp.direct})
        print(f"mental top1 {cmp.mental.mean('top1'):.4f}  direct top1 {cmp.direct.mean('top1'):.4f}  ratio {cmp.ratio:.3f}")
        return EXIT_OK
    dataset = _load(_dataset_path(cfg), cfg)
    report = run_cross_validation(dataset, cfg.estimator(), table=_table(cfg), **kw)
    tag = "cv_nogru" if not cfg.model["use_gru"] else "cv"
    report.write_json(out / f"{tag}.json")
    report.write_csv(out / f"{tag}.csv")
    write_curve_csv(out / f"{tag}_curve.csv", {dataset.paradigm.value: report})
    for name, stats in report.summary().items():
        print(f"{name}: {stats['mean']:.4f} +/- {stats['sd']:.4f}")
    return EXIT_OK


def _require(path: Path, override: str = "") -> Path:
    path = Path(override) if override else path
    if not path.exists():
        raise CommandError(f"dataset not found: {path}", EXIT_DATA)
    return path


COMMANDS = {
    "simulate": cmd_simulate,
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "decode": cmd_decode,
    "evaluate": cmd_evaluate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI file with [preprocess] [model] [train] [synth] [run] sections")
    common.add_argument("--seed", type=int, help="seed for generation and training")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--jobs", type=int, help="worker cap for evaluation")
    common.add_argument("--force", action="store_true", help="overwrite an existing checkpoint")
    common.add_argument("--direct", action="store_true", help="direct-imagination paradigm (36-way head)")
    common.add_argument("--ablate-gru", action="store_true", help="replace the GRU with a per-step linear map")
    common.add_argument("--soft-vote", action="store_true", help="average window probabilities instead of voting")
    common.add_argument("--data", metavar="DIR", help="dataset directory (default: OUT/mental or OUT/direct)")
    common.add_argument("--checkpoint", metavar="PATH", help="checkpoint file (default: OUT/model.tsld)")
    common.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override one config entry")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="eegspell", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "evaluate":
            p.add_argument("--paradigm-compare", action="store_true", help="run the mental-task and direct arms")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
    except (ConfigError, CodebookError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(cfg.dumps())
    try:
        return COMMANDS[args.command](cfg, args)
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (ConfigError, CodebookError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DatasetFormatError, InvariantError, EegSpellError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
