"""Command-line entry point: ``aafm <command> --config FILE [--set key=value ...]``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 1 anything else raised by the package.

Environment: ``AAFM_OUTPUT_ROOT`` prefixes relative output directories and
the dataset cache; ``AAFM_THREADS`` caps BLAS threads (set it to 1 for
byte-reproducible runs).
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import yaml

from . import __version__, config, movielens, pipeline
from .errors import AAFMError, ConfigError

logger = logging.getLogger("aafm")


def _threads():
    n = os.environ.get("AAFM_THREADS")
    if not n:
        return nullcontext()
    try:
        n = int(n)
    except ValueError:
        raise ConfigError(f"AAFM_THREADS must be an integer, got {n!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _load(args, **extra):
    overrides = list(args.set or [])
    overrides += [f"{k}={v}" for k, v in extra.items() if v is not None]
    return config.load_config(args.config, overrides)


def _run_dir(cfg):
    return cfg.output_path() / cfg.variant


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path


def _figures(cfg, args):
    return cfg.figures and not getattr(args, "no_figures", False)


# -- commands -------------------------------------------------------------------


def cmd_fetch_movielens(args):
    dest = Path(args.dest) if args.dest else movielens.default_data_dir()
    movielens.prepare_movielens(dest, source=args.source, allow_download=not args.offline)
    counts = movielens.summary_counts(dest)
    print(f"wrote {dest}: " + ", ".join(f"{k}={v}" for k, v in counts.items()))


def cmd_prepare(args):
    cfg = _load(args)
    split, prov, path, hit = pipeline.prepare(cfg, force=args.force)
    st = pipeline.feature_stats(split, cfg)
    out = _write(cfg.output_path() / "stats.tsv", pipeline.stats_tsv(split, st, cfg.stamp()))
    print(f"cache {'hit' if hit else 'written'}: {path}")
    print(f"positives {prov['n_positives']} (train {prov['n_train']}, test {prov['n_test']}), "
          f"row errors {prov['n_row_errors']}")
    print(f"stats: {out}")


def cmd_stats(args):
    cfg = _load(args)
    split, *_ = pipeline.prepare(cfg)
    st = pipeline.feature_stats(split, cfg)
    out = _write(cfg.output_path() / "stats.tsv", pipeline.stats_tsv(split, st, cfg.stamp()))
    for d, name in enumerate(split.schema.names):
        seen = st.counts[d] > 0
        print(f"{name:<16} values {int(seen.sum()):>5}  max alpha {st.alpha[d].max():.4f}  "
              f"beta range [{int(st.beta[d][seen].min())}, {int(st.beta[d].max())}]")
    print(f"stats: {out}")


def _train(cfg, figures):
    split, *_ = pipeline.prepare(cfg)
    out = _run_dir(cfg)
    _write(out / "config.yaml", "".join(f"# {s}\n" for s in cfg.stamp())
           + yaml.safe_dump(cfg.to_dict() | {"output_dir": cfg.output_dir}, sort_keys=True))
    result, data, st = pipeline.run_training(cfg, split, out)
    if figures:
        from . import plotting

        plotting.training_curves(result.log, out / "figures" / "training.png", cfg.variant,
                                 stamp=cfg.stamp(data.digest()))
    return out, result, split, data, st


def cmd_train(args):
    cfg = _load(args, variant=args.variant)
    if args.resume:
        split, *_ = pipeline.prepare(cfg)
        out = _run_dir(cfg)
        result, _, _ = pipeline.run_training(cfg, split, out, resume_from=args.resume)
    else:
        out, result, *_ = _train(cfg, _figures(cfg, args))
    last = result.log.records[-1]
    print(f"{cfg.variant}: {len(result.log.records)} epochs, test AUC {last.val_auc:.4f}, "
          f"logloss {last.val_logloss:.4f}")
    print(f"outputs: {out}")


def _evaluate(cfg, checkpoint, out, probe=True, figures=True, label=None):
    split, *_ = pipeline.prepare(cfg)
    report, header = pipeline.run_eval(cfg, split, checkpoint, probe=probe)
    stamp = cfg.stamp(header.get("data_hash"))
    _write(out / "eval.tsv", report.to_tsv(stamp))
    _write(out / "eval.txt", "\n".join(f"# {s}" for s in stamp) + "\n" + report.to_text())
    if report.groups is not None:
        _write(out / "groups.tsv", report.groups_tsv())
    if figures:
        from . import plotting

        plotting.bucket_auc({label or cfg.variant: report}, out / "figures" / "buckets.png", stamp)
        if report.robustness:
            plotting.robustness({label or cfg.variant: report.robustness}, out / "figures" / "robustness.png",
                                stamp)
    return report


def cmd_eval(args):
    cfg = _load(args, variant=args.variant)
    out = _run_dir(cfg)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out / "final.ckpt"
    if not checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    report = _evaluate(cfg, checkpoint, out, probe=not args.no_probe, figures=_figures(cfg, args))
    print(report.to_text(), end="")
    print(f"outputs: {out}")


def cmd_robustness(args):
    overrides = {"variant": args.variant, "eval.probe_mode": args.mode, "eval.probe_trials": args.trials}
    if args.levels:
        overrides["eval.probe_levels"] = "[" + ",".join(str(x) for x in args.levels) + "]"
    cfg = _load(args, **overrides)
    if not cfg.eval.probe_levels:
        raise ConfigError("no probe levels configured; pass --levels")
    out = _run_dir(cfg)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out / "final.ckpt"
    if not checkpoint.exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    split, *_ = pipeline.prepare(cfg)
    report, header = pipeline.run_eval(cfg, split, checkpoint)
    lines = [f"# {s}" for s in cfg.stamp(header.get("data_hash"))]
    lines.append(f"# mode={cfg.eval.probe_mode} trials={cfg.eval.probe_trials}")
    lines.append("level\tdrop_pct")
    lines += [f"{lv:g}\t{d:.10f}" for lv, d in sorted(report.robustness.items())]
    _write(out / "robustness.tsv", "\n".join(lines) + "\n")
    if _figures(cfg, args):
        from . import plotting

        plotting.robustness({cfg.variant: report.robustness}, out / "figures" / "robustness.png",
                            cfg.stamp(header.get("data_hash")))
    print(f"clean AUC {report.auc:.4f}; AUC drop % under {cfg.eval.probe_mode} noise:")
    for lv, d in sorted(report.robustness.items()):
        print(f"  {lv:g}\t{d:.3f}")


def _sweep_one(args):
    path, overrides, t, figures = args
    with _threads():
        cfg = config.load_config(path, overrides)
        out, result, split, _, _ = _train(cfg, figures)
        report = _evaluate(cfg, out / "final.ckpt", out, probe=False, figures=figures)
    return {"t": float(t), "auc": report.auc, "logloss": report.logloss, "std": report.std, "efgd": report.efgd}


def cmd_sweep_t(args):
    cfg = _load(args, variant=args.variant)
    if not cfg.train.adversary.adaptive_lambda:
        raise ConfigError(f"variant {cfg.variant!r} does not re-weight samples; sweep needs adaptive lambda")
    t_values = args.t or cfg.t_values
    root = cfg.output_path() / "sweep-t"
    jobs = []
    for t in t_values:
        overrides = list(args.set or []) + [f"variant={cfg.variant}", f"train.adversary.t={t}",
                                            f"output_dir={Path(cfg.output_dir) / 'sweep-t' / f't_{t:g}'}"]
        jobs.append((args.config, overrides, t, _figures(cfg, args)))
    if args.parallel > 1:
        with ProcessPoolExecutor(max_workers=args.parallel) as pool:
            rows = list(pool.map(_sweep_one, jobs))
    else:
        rows = [_sweep_one(j) for j in jobs]
    lines = [f"# {s}" for s in cfg.stamp()] + ["t\tauc\tlogloss\tstd\tefgd"]
    lines += [f"{r['t']:g}\t{r['auc']:.10f}\t{r['logloss']:.10f}\t{r['std']:.10f}\t{r['efgd']:.10f}" for r in rows]
    out = _write(root / "frontier.tsv", "\n".join(lines) + "\n")
    if _figures(cfg, args):
        from . import plotting

        plotting.t_frontier(rows, root / "figures" / "frontier.png", cfg.stamp())
    for r in rows:
        print(f"t={r['t']:g}\tAUC {r['auc']:.4f}\tSTD {r['std']:.4f}\tEFGD {r['efgd']:.4f}")
    print(f"frontier: {out}")


def cmd_compare(args):
    """Train and evaluate several variants under one configuration."""
    base = _load(args)
    variants = args.variants or ["fm", "advfm", "aafm"]
    reports = {}
    for v in variants:
        cfg = _load(args, variant=v)
        out, *_ = _train(cfg, _figures(cfg, args))
        reports[v] = _evaluate(cfg, out / "final.ckpt", out, figures=False)
    root = base.output_path()
    keys = [k for k, _ in reports[variants[0]].fields()]
    stamp = [s for s in base.stamp() if not s.startswith(("variant=", "adversary="))]
    lines = [f"# {s}" for s in stamp]
    lines.append("metric\t" + "\t".join(variants))
    for k in keys:
        row = [dict(r.fields()).get(k, "") for r in reports.values()]
        lines.append(k + "\t" + "\t".join(f"{x:.10f}" if isinstance(x, float) else str(x) for x in row))
    out = _write(root / "comparison.tsv", "\n".join(lines) + "\n")
    if _figures(base, args):
        from . import plotting

        plotting.bucket_auc(reports, root / "figures" / "buckets.png", stamp)
        if all(r.robustness for r in reports.values()):
            plotting.robustness({v: r.robustness for v, r in reports.items()}, root / "figures" / "robustness.png",
                                stamp)
    for line in lines:
        if not line.startswith("#"):
            print(line)
    print(f"comparison: {out}")


# -- parser ---------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="aafm", description="Feature-aware adversarial factorization machine experiments.")
    p.add_argument("--version", action="version", version=f"aafm {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", required=True, help="experiment YAML file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key, e.g. train.epochs=5 (repeatable)")
        return sp

    def with_figures(sp):
        sp.add_argument("--no-figures", action="store_true", help="skip writing PNG figures")
        return sp

    sp = sub.add_parser("fetch-movielens", help="write MovieLens-100K as three TSV tables")
    sp.add_argument("--dest", help="output directory (default: data/ml-100k under the repository)")
    sp.add_argument("--source", help="GroupLens ml-100k directory, an atomic-file directory, or a wheel")
    sp.add_argument("--offline", action="store_true", help="never download")
    sp.set_defaults(func=cmd_fetch_movielens)

    sp = with_config(sub.add_parser("prepare", help="ingest, split and cache the dataset"))
    sp.add_argument("--force", action="store_true", help="rebuild the cache even if inputs are unchanged")
    sp.set_defaults(func=cmd_prepare)

    sp = with_config(sub.add_parser("stats", help="dump per-value frequency and variety"))
    sp.set_defaults(func=cmd_stats)

    sp = with_figures(with_config(sub.add_parser("train", help="train one variant")))
    sp.add_argument("--variant", choices=sorted(config.VARIANTS))
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.set_defaults(func=cmd_train)

    sp = with_figures(with_config(sub.add_parser("eval", help="evaluate a checkpoint")))
    sp.add_argument("--variant", choices=sorted(config.VARIANTS))
    sp.add_argument("--checkpoint", help="default: <output_dir>/<variant>/final.ckpt")
    sp.add_argument("--no-probe", action="store_true", help="skip the robustness section")
    sp.set_defaults(func=cmd_eval)

    sp = with_figures(with_config(sub.add_parser("robustness", help="AUC drop under embedding noise")))
    sp.add_argument("--variant", choices=sorted(config.VARIANTS))
    sp.add_argument("--checkpoint")
    sp.add_argument("--levels", type=float, nargs="+")
    sp.add_argument("--mode", choices=["adversarial", "random", "sample-adversarial"])
    sp.add_argument("--trials", type=int)
    sp.set_defaults(func=cmd_robustness)

    sp = with_figures(with_config(sub.add_parser("sweep-t", help="train and evaluate once per re-weighting ceiling")))
    sp.add_argument("--variant", choices=sorted(config.VARIANTS))
    sp.add_argument("--t", type=float, nargs="+", help="default: t_values from the config")
    sp.add_argument("--parallel", type=int, default=1, help="worker processes (default 1: sequential)")
    sp.set_defaults(func=cmd_sweep_t)

    sp = with_figures(with_config(sub.add_parser("compare", help="train and evaluate several variants")))
    sp.add_argument("--variants", nargs="+", choices=sorted(config.VARIANTS))
    sp.set_defaults(func=cmd_compare)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _threads():
            args.func(args)
    except AAFMError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
