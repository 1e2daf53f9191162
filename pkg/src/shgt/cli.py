"""Command-line surface: generate / train / eval / gradcheck / plot.

Artifacts are written atomically (temp file + rename) and every command
is deterministic given its inputs and seed. Exit codes: 0 success, 2
usage, 3 data or config validation, 4 numerical fault.
"""

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from decimal import Decimal, InvalidOperation

import numpy as np

from . import metrics, objectives, training
from .config import (
    _TRAIN_TYPES,
    ABLATIONS,
    TrainConfig,
    load_generator_config,
    load_train_config,
)
from .data import generate_synthetic, load_corpus, make_examples, split_patients, write_corpus
from .errors import ConfigError, DataError, NumericalError, ShgtError
from .hypergraph import build_hypergraph
from .model import STREAM_PAIRS, ShgtModel, stream

logger = logging.getLogger("shgt.cli")

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

GRADCHECK_TOLERANCE = 1e-6


# -- small file helpers ------------------------------------------------


def _atomic_write_text(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _ListWriter:
    """File-like shim collecting csv output into a list of strings."""

    def __init__(self, sink):
        self.sink = sink

    def write(self, text):
        self.sink.append(text)


def _sha256_file(path):
    digest = hashlib.sha256()
    try:
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return digest.hexdigest()


# -- pipeline assembly -------------------------------------------------


def _build_model(corpus_path, config):
    dataset = load_corpus(corpus_path)
    examples = make_examples(dataset)
    h = build_hypergraph(dataset, examples)
    model = ShgtModel(h, examples, config)
    split = split_patients(len(examples), config.seed)
    return dataset, model, split


def _split_rows(split, name):
    rows = {"train": split.train, "validation": split.validation, "test": split.test}
    if name not in rows:
        raise ConfigError(f"unknown split {name!r}")
    return np.asarray(rows[name], dtype=np.int64)


# -- one training run --------------------------------------------------


def _manifest_path(run_dir):
    return os.path.join(run_dir, "run_manifest.json")


def _write_manifest(run_dir, payload):
    _atomic_write_text(_manifest_path(run_dir), json.dumps(payload, indent=2, sort_keys=True) + "\n")


def run_training(corpus_path, config, run_dir, ks=(10, 20), threshold=0.5, capped=True):
    """Train one configuration into run_dir; returns a summary dict.

    On data/config faults every artifact this run wrote is removed and
    the error re-raised. On divergence the last good checkpoint and the
    log are kept and the manifest records the status.
    """
    os.makedirs(run_dir, exist_ok=True)
    artifacts = {
        "checkpoint": "model.ckpt",
        "training_log": "training_log.jsonl",
        "eval_report": "eval_report.txt",
        "manifest": "run_manifest.json",
    }
    written = []
    try:
        fingerprint = _sha256_file(corpus_path)
        _, model, split = _build_model(corpus_path, config)
        manifest = {
            "format_version": 1,
            "command": "train",
            "config": config.echo(),
            "corpus": os.path.abspath(corpus_path),
            "corpus_sha256": fingerprint,
            "seed": config.seed,
            "split_sizes": {
                "train": len(split.train),
                "validation": len(split.validation),
                "test": len(split.test),
            },
            "artifacts": artifacts,
            "status": "running",
            "started_unix": time.time(),
            "finished_unix": None,
            "duration_seconds": None,
            "artifact_version": None,
        }
        _write_manifest(run_dir, manifest)
        written.append(_manifest_path(run_dir))

        result = training.train(model, split)

        ckpt_path = os.path.join(run_dir, artifacts["checkpoint"])
        training.save_checkpoint(ckpt_path, result.params, config)
        written.append(ckpt_path)
        log_path = os.path.join(run_dir, artifacts["training_log"])
        _atomic_write_text(log_path, "\n".join(result.log_lines) + "\n")
        written.append(log_path)

        report = metrics.evaluate(
            model, result.params, _split_rows(split, "test"), ks=ks, threshold=threshold, capped=capped
        )
        report_path = os.path.join(run_dir, artifacts["eval_report"])
        _atomic_write_text(report_path, "\n".join(report.machine_lines()) + "\n")
        written.append(report_path)

        version = hashlib.sha256()
        with open(ckpt_path, "rb") as fh:
            version.update(fh.read())
        with open(log_path, "rb") as fh:
            version.update(fh.read())
        now = time.time()
        manifest.update(
            status="diverged" if result.diverged else "ok",
            finished_unix=now,
            duration_seconds=now - manifest["started_unix"],
            artifact_version=version.hexdigest()[:12],
        )
        _write_manifest(run_dir, manifest)
    except (DataError, ConfigError):
        for path in written:
            if os.path.exists(path):
                os.unlink(path)
        raise
    first_epoch = {}
    for line in result.log_lines:
        record = json.loads(line)
        if "l_total" in record:
            first_epoch = record
            break
    return {
        "run_dir": run_dir,
        "seed": config.seed,
        "diverged": result.diverged,
        "divergence_stage": result.divergence_stage,
        "best_epoch": result.best_epoch,
        "best_val_w_f1": result.best_val_w_f1,
        "epochs_run": result.epochs_run,
        "first_epoch": first_epoch,
        "test_w_f1": report.w_f1,
        "test_recall": {str(k): v for k, v in report.recall_at.items()},
    }


def _run_training_star(job):
    corpus_path, config, run_dir, ks, threshold, capped = job
    return run_training(corpus_path, config, run_dir, ks, threshold, capped)


# -- sweep grammar -----------------------------------------------------


def _decimal(text):
    try:
        return Decimal(text)
    except InvalidOperation:
        raise ConfigError(f"--sweep: cannot parse number {text!r}") from None


def _expand_piece(piece, is_int):
    if ".." not in piece:
        return [_decimal(piece)]
    start_text, _, rest = piece.partition("..")
    if ":" in rest:
        stop_text, _, step_text = rest.partition(":")
        step = _decimal(step_text)
    else:
        stop_text = rest
        step = Decimal(1) if is_int else Decimal("0.1")
    start, stop = _decimal(start_text), _decimal(stop_text)
    if step <= 0:
        raise ConfigError(f"--sweep: step must be positive in {piece!r}")
    if stop < start:
        raise ConfigError(f"--sweep: empty range {piece!r}")
    values = []
    current = start
    while current <= stop:
        values.append(current)
        current += step
    return values


def parse_sweep(text):
    """`key=v1,v2,a..b[:step]`; integer keys step by 1, float keys by
    0.1 unless an explicit :step is given. Returns (key, [values])."""
    key, eq, rest = text.partition("=")
    key = key.strip()
    if not eq or not rest.strip():
        raise ConfigError(f"--sweep expects key=values, got {text!r}")
    if key not in _TRAIN_TYPES or _TRAIN_TYPES[key] not in (int, float) or key == "seed":
        raise ConfigError(f"--sweep: key {key!r} is not sweepable")
    is_int = _TRAIN_TYPES[key] is int
    values = []
    for piece in rest.split(","):
        values.extend(_expand_piece(piece.strip(), is_int))
    out = []
    for value in values:
        if is_int:
            if value != value.to_integral_value():
                raise ConfigError(f"--sweep: {key} needs integer values, got {value}")
            out.append(int(value))
        else:
            out.append(float(value))
    return key, out


# -- commands ----------------------------------------------------------


def cmd_generate(args):
    gen = load_generator_config(args.config)
    dataset = generate_synthetic(gen, args.seed)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".corpus-")
    os.close(fd)
    try:
        write_corpus(dataset, tmp)
        os.replace(tmp, args.out)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    vocab = dataset.vocabulary
    print(
        f"wrote {args.out}: {len(dataset.patients)} patients, "
        f"{dataset.n_input_visits} input visits, vocabulary {vocab.size} "
        f"(D={vocab.n_diagnosis} M={vocab.n_medication} P={vocab.n_procedure})"
    )
    return 0


def _summary_block(results, ks):
    lines = [f"seeds: {', '.join(str(r['seed']) for r in results)}  (test split, x100)"]
    values = {"w-F1": [r["test_w_f1"] for r in results]}
    for k in ks:
        values[f"R@{k}"] = [r["test_recall"][str(k)] for r in results]
    for name, series in values.items():
        lines.append(f"{name}: {metrics.format_mean_std(series)}")
    return lines, values


def cmd_train(args):
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.ablate is not None:
        overrides["ablate"] = args.ablate
    config = load_train_config(args.config, overrides)
    ks = tuple(args.k) if args.k else (10, 20)
    threshold = args.threshold

    if args.sweep and args.seeds > 1:
        raise ConfigError("--sweep and --seeds cannot be combined")

    if args.sweep:
        key, sweep_values = parse_sweep(args.sweep)
        os.makedirs(args.out, exist_ok=True)
        rows = []
        any_diverged = False
        for value in sweep_values:
            sub = dataclasses.replace(config, **{key: value}).validate()
            run_dir = os.path.join(args.out, f"{key}-{value:g}")
            summary = run_training(args.corpus, sub, run_dir, ks, threshold, args.capped)
            any_diverged = any_diverged or summary["diverged"]
            first = summary["first_epoch"]
            rows.append(
                {
                    "key": key,
                    "value": value,
                    "seed": sub.seed,
                    "epoch1_l_clas": first.get("l_clas"),
                    "epoch1_l_stru": first.get("l_stru"),
                    "epoch1_l_total": first.get("l_total"),
                    "best_val_w_f1": summary["best_val_w_f1"],
                    "test_w_f1": summary["test_w_f1"],
                }
            )
            print(f"{key}={value:g}: best val w-F1 {summary['best_val_w_f1']:.4f}, "
                  f"test w-F1 {summary['test_w_f1']:.4f}")
        buffer = []
        writer = csv.DictWriter(_ListWriter(buffer), fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
        _atomic_write_text(os.path.join(args.out, "sweep.csv"), "".join(buffer))
        print(f"sweep results in {os.path.join(args.out, 'sweep.csv')}")
        return 4 if any_diverged else 0

    seeds = [config.seed + i for i in range(args.seeds)]
    jobs = []
    for seed in seeds:
        sub = dataclasses.replace(config, seed=seed)
        run_dir = args.out if len(seeds) == 1 else os.path.join(args.out, f"seed-{seed}")
        jobs.append((args.corpus, sub, run_dir, ks, threshold, args.capped))

    if args.parallel and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(len(jobs), os.cpu_count() or 1)) as pool:
            results = list(pool.map(_run_training_star, jobs))
    else:
        results = [_run_training_star(job) for job in jobs]

    for summary in results:
        status = "diverged" if summary["diverged"] else "ok"
        print(
            f"seed {summary['seed']}: {status}, best epoch {summary['best_epoch']}, "
            f"val w-F1 {summary['best_val_w_f1']:.4f}, test w-F1 {summary['test_w_f1']:.4f}"
        )
    if len(results) > 1:
        lines, values = _summary_block(results, ks)
        print("\n".join(lines))
        os.makedirs(args.out, exist_ok=True)
        _atomic_write_text(os.path.join(args.out, "summary.txt"), "\n".join(lines) + "\n")
        payload = {
            name: {
                "values": series,
                "mean": float(np.mean(series)),
                "std": float(np.std(series, ddof=1)) if len(series) > 1 else 0.0,
            }
            for name, series in values.items()
        }
        _atomic_write_text(
            os.path.join(args.out, "summary.json"),
            json.dumps(payload, indent=2, sort_keys=True) + "\n",
        )
    return 4 if any(r["diverged"] for r in results) else 0


def cmd_eval(args):
    params, echo = training.load_checkpoint(args.checkpoint)
    config = TrainConfig(**echo).validate()
    manifest_file = _manifest_path(os.path.dirname(os.path.abspath(args.checkpoint)))
    if os.path.exists(manifest_file):
        with open(manifest_file, encoding="utf-8") as fh:
            manifest = json.load(fh)
        current = _sha256_file(args.corpus)
        if manifest.get("corpus_sha256") != current:
            raise DataError(
                "corpus fingerprint mismatch: checkpoint was trained on different corpus bytes"
            )
    _, model, split = _build_model(args.corpus, config)
    training.check_compatible(params, model)
    rows = _split_rows(split, args.split)
    ks = tuple(args.k) if args.k else (10, 20)
    report = metrics.evaluate(
        model, params, rows, ks=ks, threshold=args.threshold, capped=args.capped
    )
    print(f"split: {args.split}")
    print(report.table())
    out = args.out or os.path.join(
        os.path.dirname(os.path.abspath(args.checkpoint)), f"eval-{args.split}.txt"
    )
    _atomic_write_text(out, "\n".join(report.machine_lines()) + "\n")
    print(f"report written to {out}")
    return 0


def cmd_gradcheck(args):
    overrides = {"dropout": 0.0}
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = load_train_config(args.config, overrides)
    _, model, _ = _build_model(args.corpus, config)
    params = model.init_parameters(config.seed)
    pairs = objectives.sample_negatives(model.h, stream(config.seed, STREAM_PAIRS, 0))
    rows = np.arange(len(model.examples), dtype=np.int64)

    def loss_fn(p):
        breakdown, _ = model.forward(p, pairs, rows, train_mode=True, rng=None)
        return breakdown.total

    def grad_fn(p):
        _, trace = model.forward(p, pairs, rows, train_mode=True, rng=None)
        return model.backward(trace, p)

    h = 1e-5
    # Discrepancies at the scale of central-difference roundoff
    # (eps*|loss|/(2h), with margin) cannot indicate a wrong gradient.
    atol = 50 * np.finfo(np.float64).eps * max(1.0, abs(loss_fn(params))) / (2 * h)
    report = training.finite_difference_check(
        params, loss_fn, grad_fn, h=h, samples=args.samples, atol=atol
    )
    print(f"h = {h:g}, ignoring discrepancies below {atol:.2e}")
    for line in report.lines():
        print(line)
    if report.max_relative_error < GRADCHECK_TOLERANCE:
        print(f"PASS (tolerance {GRADCHECK_TOLERANCE:g})")
        return 0
    raise NumericalError(
        f"gradient check failed: max relative error {report.max_relative_error:.3e} "
        f">= {GRADCHECK_TOLERANCE:g}",
        stage="gradcheck",
    )


PLOT_CSV_COLUMNS = ["epoch", "l_clas", "l_stru", "l_total", "val_w_f1"]


def cmd_plot(args):
    rows = []
    try:
        with open(args.log, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                record = json.loads(line)
                if "epoch" in record and "l_total" in record:
                    rows.append(record)
    except OSError as exc:
        raise DataError(f"cannot read training log {args.log}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed training log {args.log}: {exc}") from None
    if not rows:
        raise DataError(f"training log {args.log} contains no epoch records")
    os.makedirs(args.out, exist_ok=True)

    buffer = []
    writer = csv.DictWriter(_ListWriter(buffer), fieldnames=PLOT_CSV_COLUMNS, extrasaction="ignore")
    writer.writeheader()
    writer.writerows(rows)
    csv_path = os.path.join(args.out, "curves.csv")
    _atomic_write_text(csv_path, "".join(buffer))

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r["epoch"] for r in rows]
    fig, (ax_loss, ax_metric) = plt.subplots(1, 2, figsize=(10, 4))
    ax_loss.plot(epochs, [r["l_clas"] for r in rows], label="classification")
    ax_loss.plot(epochs, [r["l_stru"] for r in rows], label="reconstruction")
    ax_loss.plot(epochs, [r["l_total"] for r in rows], label="total")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend()
    ax_metric.plot(epochs, [r["val_w_f1"] for r in rows], label="validation w-F1")
    ax_metric.set_xlabel("epoch")
    ax_metric.set_ylabel("w-F1")
    ax_metric.legend()
    fig.tight_layout()
    png_path = os.path.join(args.out, "curves.png")
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    print(f"wrote {csv_path} and {png_path}")
    return 0


# -- argument parsing --------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(
        prog="shgt",
        description="Structure-aware hypergraph transformer for diagnosis prediction.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic corpus")
    p.add_argument("--config", help="generator config file (key = value)")
    p.add_argument("--out", required=True, help="corpus output path (.jsonl)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", help="training config file (key = value)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--seed", type=int, default=None, help="overrides config seed")
    p.add_argument("--seeds", type=int, default=1, metavar="N",
                   help="run N seeds (base..base+N-1) and summarize mean ± std")
    p.add_argument("--parallel", action="store_true", help="run seeds in parallel processes")
    p.add_argument("--ablate", choices=list(ABLATIONS))
    p.add_argument("--sweep", metavar="KEY=VALUES",
                   help="train once per value, e.g. alpha=0,0.1..0.5 or layers=1..4")
    p.add_argument("--k", type=int, action="append", help="recall cutoff (repeatable)")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--uncapped-recall", dest="capped", action="store_false",
                   help="divide recall@k by |true| instead of min(k, |true|)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--out", help="report path (default: next to checkpoint)")
    p.add_argument("--k", type=int, action="append")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--uncapped-recall", dest="capped", action="store_false")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    p.add_argument("--config")
    p.add_argument("--corpus", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--samples", type=int, default=20, help="coordinates checked per tensor")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("plot", help="render training curves to PNG + CSV")
    p.add_argument("log", help="training_log.jsonl from a run directory")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)

    return parser


def _configure_logging():
    name = os.environ.get("SHGT_LOG_LEVEL", "info").lower()
    if name not in LOG_LEVELS:
        print(
            f"shgt: invalid SHGT_LOG_LEVEL {name!r}, expected one of {sorted(LOG_LEVELS)}",
            file=sys.stderr,
        )
        return None
    logging.basicConfig(
        level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )
    return name


def main(argv=None):
    if _configure_logging() is None:
        return 2
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (DataError, ConfigError) as exc:
        logger.error("%s", exc)
        return 3
    except NumericalError as exc:
        logger.error("%s", exc)
        return 4
    except ShgtError as exc:
        logger.error("%s", exc)
        return 3


if __name__ == "__main__":
    sys.exit(main())
