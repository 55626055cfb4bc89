"""Command-line entry point: ``learnpool {train,eval,export-maps,gradcheck}``.

Exit codes: 0 success, 1 verification failure, 2 usage or data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from . import dataset, io, training, verify
from .config import ConfigError, load_config, preset
from .errors import DataError, FormatError
from .pooling import pool_update

log = logging.getLogger("learnpool")

EXIT_OK, EXIT_VERIFY, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _thread_limit(threads: int | None):
    if not threads:
        return nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=threads)


def _build_config(args):
    cfg = preset(args.preset)
    if args.config:
        try:
            cfg = load_config(args.config, base=cfg)
        except OSError as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        except ConfigError as exc:
            raise UsageError(f"{args.config}: {exc}") from None
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.eta_pool is not None:
        overrides["eta_pool"] = args.eta_pool
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.synthetic:
        overrides["synthetic"] = True
    try:
        return cfg.replace(**overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_samples(cfg, data_dir=None, file=None, synthetic=False):
    if synthetic or cfg.synthetic:
        return dataset.generate_synthetic(cfg.synthetic_count, cfg.n, cfg.seed)
    try:
        if file:
            return dataset.load_cifar_batch(file, n=cfg.n, t=cfg.t)
        if not data_dir:
            raise UsageError("no data: pass --data-dir (CIFAR-10 binary batches) or --synthetic")
        return dataset.load_cifar_dir(data_dir, n=cfg.n, t=cfg.t)
    except (OSError, FormatError, DataError) as exc:
        raise UsageError(f"cannot load data: {exc}") from None


def _write_trial(out: Path, cfg, result) -> None:
    report = result.report
    io.write_metrics(out / "metrics.csv", report.history)
    bundle = io.ModelBundle(cfg.replace(seed=result.seed, trials=1), result.codebook,
                            report.best_maps, result.classifier, result.stats)
    io.save_bundle(out / "model.bundle", bundle)
    io.export_maps(out / "maps", report.best_maps)


def cmd_train(args) -> int:
    cfg = _build_config(args)
    if args.dry_run:
        plan = training.plan_schedule(cfg)
        print(f"dry run: n={cfg.n} w={cfg.w} P={cfg.grid_size} k={cfg.k} p={cfg.p} "
              f"batch_size={cfg.batch_size} eta_pool={cfg.eta_pool:g} trials={cfg.trials}")
        print(plan.describe())
        return EXIT_OK
    samples = _load_samples(cfg, args.data_dir)
    out = Path(args.out)
    per_trial_dirs = cfg.trials > 1

    def on_trial(result):
        target = out / f"trial_{result.trial}" if per_trial_dirs else out
        _write_trial(target, cfg, result)
        r = result.report
        print(f"trial {result.trial} seed {result.seed}: baseline {r.baseline_val_acc:.4f} "
              f"best {r.best_post_pool_acc:.4f} (at {r.best_examples_seen} examples)")

    with _thread_limit(args.threads):
        summary = training.run_trials(cfg, samples, threads=args.threads or 1, on_trial=on_trial)
    text = summary.format()
    print(text)
    if per_trial_dirs:
        io.atomic_write(out / "summary.txt", text + "\n")
        io.atomic_write(out / "summary.json", json.dumps(summary.aggregate(), indent=2) + "\n")
    return EXIT_OK


def _load_bundle(path):
    try:
        return io.load_bundle(path)
    except OSError as exc:
        raise UsageError(f"cannot read bundle {path}: {exc}") from None
    except FormatError as exc:
        raise UsageError(f"corrupt bundle {path}: {exc}") from None


def cmd_eval(args) -> int:
    bundle = _load_bundle(args.bundle)
    cfg = bundle.config
    if args.k is not None and args.k != bundle.codebook.k:
        raise UsageError(f"--k {args.k} does not match bundle codebook k={bundle.codebook.k}")
    samples = _load_samples(cfg, args.data_dir, args.file, args.synthetic)
    if samples and samples[0].n != cfg.n:
        raise UsageError(f"image side {samples[0].n} does not match bundle n={cfg.n}")
    with _thread_limit(args.threads):
        encoder = training.GridEncoder(bundle.codebook, 0, args.threads or 1)
        acc = training.evaluate(bundle.classifier, bundle.codebook, bundle.maps, bundle.stats,
                                samples, encoder)
    print(f"accuracy {acc:.4f}")
    return EXIT_OK


def cmd_export_maps(args) -> int:
    bundle = _load_bundle(args.bundle)
    try:
        written = io.export_maps(args.out, bundle.maps)
    except OSError as exc:
        raise UsageError(f"cannot write maps to {args.out}: {exc}") from None
    for path in written:
        print(path)
    return EXIT_OK


def _corrupted_update(maps, grids, delta0, stats, eta):
    # negative control: drops the 1/sigma factor
    from .pooling import NormStats
    unit = NormStats(stats.mu, stats.sigma * 0 + 1, frozen=True)
    return pool_update(maps, grids, delta0, unit, eta)


def cmd_gradcheck(args) -> int:
    update = _corrupted_update if args.corrupt_update else None
    report = verify.run_gradcheck(instances=args.instances, P=args.P, k=args.k, hidden=args.hidden,
                                  t=args.t, step=args.step, threshold=args.threshold,
                                  seed=args.seed, eta=args.eta, update=update)
    print(report.format_table())
    print(report.summary_line())
    return EXIT_OK if report.passed else EXIT_VERIFY


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="learnpool", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="learn codebook, train classifier, then train pool maps")
    t.add_argument("--config", help="key = value config file")
    t.add_argument("--preset", choices=["paper", "desk"], default="paper")
    t.add_argument("--data-dir", help="directory holding CIFAR-10 data_batch_*.bin files")
    t.add_argument("--synthetic", action="store_true", help="use the generated two-class dataset")
    t.add_argument("--out", default="runs/latest")
    t.add_argument("--seed", type=int)
    t.add_argument("--eta-pool", type=float)
    t.add_argument("--trials", type=int)
    t.add_argument("--threads", type=int, help="cap worker and BLAS threads (1 = sequential)")
    t.add_argument("--dry-run", action="store_true",
                   help="print batch, check and phase-boundary counts without training")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a saved model bundle")
    e.add_argument("--bundle", required=True)
    e.add_argument("--data-dir")
    e.add_argument("--file", help="a single CIFAR-10 binary batch file")
    e.add_argument("--synthetic", action="store_true",
                   help="regenerate the synthetic dataset described by the bundle config")
    e.add_argument("--k", type=int, help="expected codebook size; mismatch is an error")
    e.add_argument("--threads", type=int)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("export-maps", help="write pool maps as PGM images and a PMAP dump")
    x.add_argument("--bundle", required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_maps)

    g = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    g.add_argument("--instances", type=int, default=10)
    g.add_argument("--P", type=int, default=4)
    g.add_argument("--k", type=int, default=2)
    g.add_argument("--hidden", type=int, default=3)
    g.add_argument("--t", type=int, default=3)
    g.add_argument("--step", type=float, default=1e-6)
    g.add_argument("--threshold", type=float, default=1e-5)
    g.add_argument("--eta", type=float, default=1.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--corrupt-update", action="store_true", help=argparse.SUPPRESS)
    g.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
