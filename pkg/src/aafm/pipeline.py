"""End-to-end steps shared by the CLI and the acceptance suite."""

import logging
import os
from dataclasses import asdict
from pathlib import Path

from . import dataset, evaluation, fm, storage
from . import stats as fstats
from .trainer import Trainer

logger = logging.getLogger(__name__)


def load_rows(data_cfg):
    """Read the interaction table and left-join the side tables."""
    rows = dataset.read_table(data_cfg.interactions, data_cfg.delimiter, data_cfg.header,
                              data_cfg.columns, data_cfg.encoding)
    for side in ("user_table", "item_table"):
        tbl = getattr(data_cfg, side)
        if not tbl:
            continue
        side_rows = dataset.read_table(tbl["path"], tbl.get("delimiter", data_cfg.delimiter),
                                       tbl.get("header", True), tbl.get("columns"), data_cfg.encoding)
        rows = dataset.join_side_table(rows, side_rows, tbl["key"], tbl.get("keep"))
    if data_cfg.min_user_interactions is not None or data_cfg.max_user_interactions is not None:
        user_col = data_cfg.user_column or next(
            d["column"] if isinstance(d, dict) else d.column
            for d in data_cfg.domains
            if (d["name"] if isinstance(d, dict) else d.name) == data_cfg.user_domain)
        rows = dataset.filter_users(rows, user_col, data_cfg.min_user_interactions,
                                    data_cfg.max_user_interactions)
    return rows


def _source_files(data_cfg):
    files = [data_cfg.interactions]
    files += [tbl["path"] for tbl in (data_cfg.user_table, data_cfg.item_table) if tbl]
    return files


def cache_key(cfg):
    files = {Path(p).name: storage.file_digest(p) for p in _source_files(cfg.data)}
    data = asdict(cfg.data)
    for k in ("interactions",):
        data.pop(k)
    for side in ("user_table", "item_table"):
        if data.get(side):
            data[side] = {k: v for k, v in data[side].items() if k != "path"}
    return storage.digest({"data": data, "files": files})


def cache_dir():
    return Path(os.environ.get("AAFM_OUTPUT_ROOT", ".")) / "cache"


def prepare(cfg, force=False, directory=None):
    """Ingest and split, reusing the on-disk cache when inputs are unchanged.

    Returns ``(split, provenance, cache_path, hit)``.
    """
    key = cache_key(cfg)
    path = Path(directory or cache_dir()) / f"dataset-{key}.bin"
    if path.exists() and not force:
        split, provenance = dataset.load_split(path)
        return split, provenance, path, True
    rows = load_rows(cfg.data)
    ing = dataset.ingest(rows, cfg.data.column_spec(), cfg.data.bins, cfg.data.max_error_fraction,
                         cfg.data.na_values)
    split = dataset.leave_one_out_split(ing.positives, ing.schema, ing.dictionaries)
    provenance = {
        "cache_key": key,
        "n_rows": len(rows),
        "n_row_errors": len(ing.row_errors),
        "n_positives": len(ing.positives),
        "n_train": len(split.train),
        "n_test": len(split.test),
    }
    dataset.save_split(path, split, provenance)
    return split, provenance, path, False


def feature_stats(split, cfg):
    return fstats.compute_stats(split.train, split.schema, cfg.include_id_domains)


def stats_tsv(split, st, preamble=()):
    lines = [f"# {p}" for p in preamble]
    lines.append("domain\ttoken\tcount\talpha\tbeta")
    for name, tok, count, a, b in fstats.report_rows(st, split.schema, split.value_dictionaries):
        lines.append(f"{name}\t{tok}\t{count}\t{a:.12g}\t{b}")
    return "\n".join(lines) + "\n"


def training_data(split, cfg):
    return dataset.with_negatives(split, cfg.train.negative_ratio, cfg.seed)


def diagnostics_tsv(rows, preamble=()):
    lines = [f"# {p}" for p in preamble]
    lines.append("epoch\tdomain\teps_mean\teps_max\tomega\tlambda_q0\tlambda_q25\tlambda_q50"
                 "\tlambda_q75\tlambda_q100\tdecay_loss")
    for r in rows:
        lines.append("\t".join(str(r[0]) if i == 0 else (r[i] if i == 1 else f"{r[i]:.10g}")
                               for i in range(len(r))))
    return "\n".join(lines) + "\n"


def run_training(cfg, split, out_dir, data=None, st=None, resume_from=None):
    """Train ``cfg.variant`` and write its log, diagnostics and checkpoints."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    st = st or feature_stats(split, cfg)
    data = data or training_data(split, cfg)
    data_hash = data.digest()
    stamp = cfg.stamp(data_hash)
    header = {"config_hash": cfg.digest(), "seed": cfg.seed, "variant": cfg.variant, "data_hash": data_hash}
    trainer = Trainer(data, st, cfg.train, checkpoint_dir=out_dir, header=header)
    if resume_from is not None:
        trainer.restore(resume_from)
    result = trainer.run()
    trainer.save(out_dir / "final.ckpt")
    (out_dir / "train_log.tsv").write_text(result.log.to_tsv(stamp))
    (out_dir / "timing.tsv").write_text(result.log.timing_tsv())
    (out_dir / "adversary.tsv").write_text(diagnostics_tsv(result.diagnostics, stamp))
    return result, data, st


def run_eval(cfg, split, checkpoint, data=None, st=None, probe=True):
    st = st or feature_stats(split, cfg)
    data = data or training_data(split, cfg)
    params, header, _ = fm.load_checkpoint(checkpoint, split.schema)
    levels = cfg.eval.probe_levels if probe else None
    return evaluation.evaluate(
        params, data.test, st,
        probe_levels=levels, trials=cfg.eval.probe_trials, rng_seed=cfg.seed, mode=cfg.eval.probe_mode,
        group_domains=cfg.eval.group_domains, dictionaries=split.value_dictionaries, schema=split.schema,
    ), header
