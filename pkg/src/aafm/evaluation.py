"""Accuracy, feature-fairness and robustness metrics."""

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import adversary, fm
from .errors import UndefinedMetricError

logger = logging.getLogger(__name__)

N_BUCKETS = 6
TAIL_FRACTION = 0.1


def auc(scores, labels):
    """Rank-sum AUC; tied scores count half."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(scores, labels):
    """Mean cross-entropy.

    Terms are summed as offsets from the first one, so a set of identical
    terms (a constant predictor) averages to exactly that term.
    """
    per = fm.bce(np.asarray(scores, dtype=np.float64).reshape(-1), np.asarray(labels).reshape(-1))
    if per.size == 0:
        raise UndefinedMetricError("logloss of an empty set")
    return float(per[0] + math.fsum((per - per[0]).tolist()) / per.size)


@dataclass
class Buckets:
    order: np.ndarray
    buckets: list
    top: np.ndarray
    bottom: np.ndarray


def bucketize_keys(keys, n_buckets=N_BUCKETS, tail=TAIL_FRACTION):
    """Rank by ``keys`` descending (ties by index) and cut into contiguous groups.

    Bucket sizes differ by at most one, the larger ones first. ``top`` and
    ``bottom`` hold the highest- and lowest-ranked ``floor(tail * N)`` samples.
    """
    keys = np.asarray(keys, dtype=np.float64)
    n = keys.size
    if n < 10:
        raise UndefinedMetricError(f"fairness metrics need at least 10 samples, got {n}")
    order = np.lexsort((np.arange(n), -keys))
    k = max(1, int(math.floor(tail * n)))
    return Buckets(order, np.array_split(order, n_buckets), order[:k], order[n - k:])


def bucketize(test, stats, n_buckets=N_BUCKETS, tail=TAIL_FRACTION):
    """Buckets of a sample table ranked by joint ``alpha * beta`` (log domain)."""
    return bucketize_keys(stats.log_joint_ab(test.values), n_buckets, tail)


@dataclass
class FairnessResult:
    efgd: float
    std: float
    bucket_auc: list
    top_auc: float
    bottom_auc: float
    dropped: list = field(default_factory=list)


def _auc_or_nan(scores, labels):
    try:
        return auc(scores, labels)
    except UndefinedMetricError:
        return float("nan")


def fairness_metrics(scores, labels, buckets):
    """EFGD (absolute top/bottom tail AUC gap) and population std of bucket AUCs.

    Buckets without both classes are dropped from the std and listed in
    ``dropped`` (1-based).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    bucket_auc = [_auc_or_nan(scores[b], labels[b]) for b in buckets.buckets]
    dropped = [k + 1 for k, a in enumerate(bucket_auc) if math.isnan(a)]
    for k in dropped:
        logger.warning("bucket %d holds a single class; left out of STD", k)
    valid = [a for a in bucket_auc if not math.isnan(a)]
    std = float(np.std(valid)) if valid else float("nan")
    top = _auc_or_nan(scores[buckets.top], labels[buckets.top])
    bottom = _auc_or_nan(scores[buckets.bottom], labels[buckets.bottom])
    if math.isnan(top) or math.isnan(bottom):
        logger.warning("a tail decile holds a single class; EFGD undefined")
    return FairnessResult(abs(top - bottom), std, bucket_auc, top, bottom, dropped)


PROBE_MODES = ("adversarial", "random", "sample-adversarial")


def _unit_rows(g):
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    live = norms >= adversary.ZERO_GRAD
    return np.where(live, g / np.where(live, norms, 1.0), 0.0)


def perturb_tables(params, test, level, mode="adversarial", rng=None, batch_size=8192):
    """Copy of ``params`` with every embedding row moved by a norm-``level`` step.

    ``adversarial`` follows each row's gradient of the mean test loss, so a
    row the test set never touches stays put; ``random`` draws a uniformly
    random direction per row.
    """
    noisy = params.copy()
    if mode == "random":
        for d, table in enumerate(noisy.embeddings):
            noisy.embeddings[d] = table + level * _unit_rows(rng.standard_normal(table.shape))
        return noisy
    grads = [np.zeros_like(t) for t in params.embeddings]
    n = len(test)
    for s in range(0, n, batch_size):
        trace = fm.forward(params, test.values[s:s + batch_size])
        labels = test.labels[s:s + batch_size]
        g = fm.backward(trace, labels, params, weights=np.full(len(labels), 1.0 / n))
        for d, (rows, rg) in enumerate(zip(g.rows, g.row_grads)):
            grads[d][rows] += rg
    for d, table in enumerate(noisy.embeddings):
        noisy.embeddings[d] = table + level * _unit_rows(grads[d])
    return noisy


def perturbed_scores(params, test, level, mode="adversarial", rng=None, batch_size=8192):
    """Predictions under noise of norm ``level`` per feature embedding.

    ``adversarial`` and ``random`` perturb the embedding tables (see
    :func:`perturb_tables`). ``sample-adversarial`` instead moves each
    sample's gathered embeddings along that sample's own loss gradient,
    a much stronger attack.
    """
    if mode not in PROBE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")
    if mode != "sample-adversarial":
        return fm.predict(perturb_tables(params, test, level, mode, rng, batch_size), test.values, batch_size)
    out = np.empty(len(test))
    for s in range(0, len(test), batch_size):
        values = test.values[s:s + batch_size]
        trace = fm.forward(params, values)
        delta = adversary.fgsm_delta(trace, test.labels[s:s + batch_size], params, level)
        out[s:s + batch_size] = fm.forward(params, values, delta).yhat
    return out


def robustness_probe(params, test, levels, trials=1, rng_seed=0, mode="adversarial"):
    """Percent AUC drop ``100 * (clean - noisy) / clean`` per noise level.

    Noisy AUC is averaged over ``trials``; each trial of each level draws
    from its own derived seed (only ``random`` mode consumes randomness).
    """
    if mode not in PROBE_MODES:
        raise ValueError(f"unknown noise mode {mode!r}")
    clean = auc(fm.predict(params, test.values), test.labels)
    drops = {}
    seeds = np.random.SeedSequence(rng_seed).spawn(max(1, len(levels)))
    for level, seed in zip(levels, seeds):
        level = float(level)
        if level == 0:
            drops[level] = 0.0
            continue
        n_trials = trials if mode == "random" else 1
        trial_rngs = [np.random.default_rng(s) for s in seed.spawn(n_trials)]
        noisy = [auc(perturbed_scores(params, test, level, mode, r), test.labels) for r in trial_rngs]
        drops[level] = 100.0 * (clean - float(np.mean(noisy))) / clean
    return drops


def group_table(scores, labels, values, domains, dictionaries, schema, min_size=1):
    """AUC per combination of the given domains' values."""
    idx = [schema.index(d) for d in domains]
    keys = values[:, idx]
    uniq, inv = np.unique(keys, axis=0, return_inverse=True)
    inv = inv.reshape(-1)
    inverse = [{k: tok for tok, k in dictionaries[d].items()} for d in idx]
    rows = []
    for g, combo in enumerate(uniq):
        members = np.flatnonzero(inv == g)
        if members.size < min_size:
            continue
        name = "+".join(inverse[j][int(v)] for j, v in enumerate(combo))
        rows.append((name, int(members.size), int(labels[members].sum()),
                     _auc_or_nan(scores[members], labels[members])))
    return rows


@dataclass
class EvalReport:
    auc: float
    logloss: float
    bucket_auc: list
    efgd: float
    std: float
    top_decile_auc: float
    bottom_decile_auc: float
    n_samples: int
    n_positive: int
    dropped_buckets: list = field(default_factory=list)
    robustness: dict = None
    robustness_mode: str = None
    groups: list = None

    def fields(self):
        """Flat, stably named key/value pairs."""
        out = [
            ("n_samples", self.n_samples),
            ("n_positive", self.n_positive),
            ("auc", self.auc),
            ("logloss", self.logloss),
            ("efgd", self.efgd),
            ("std", self.std),
            ("top_decile_auc", self.top_decile_auc),
            ("bottom_decile_auc", self.bottom_decile_auc),
        ]
        out += [(f"bucket_auc_{k + 1}", a) for k, a in enumerate(self.bucket_auc)]
        out.append(("dropped_buckets", ",".join(str(k) for k in self.dropped_buckets)))
        if self.robustness is not None:
            out.append(("robustness_mode", self.robustness_mode))
            out += [(f"drop_pct@{level:g}", d) for level, d in sorted(self.robustness.items())]
        return out

    def to_tsv(self, preamble=()):
        lines = [f"# {p}" for p in preamble]
        lines.append("key\tvalue")
        for k, v in self.fields():
            lines.append(f"{k}\t{_fmt(v)}")
        return "\n".join(lines) + "\n"

    def to_text(self):
        lines = [
            f"samples        {self.n_samples} ({self.n_positive} positive)",
            f"AUC            {self.auc:.4f}",
            f"Logloss        {self.logloss:.4f}",
            f"EFGD           {self.efgd:.4f}",
            f"STD            {self.std:.4f}",
            "bucket AUC     " + "  ".join(_fmt(a, 4) for a in self.bucket_auc),
        ]
        if self.dropped_buckets:
            lines.append(f"single-class buckets left out of STD: {self.dropped_buckets}")
        if self.robustness is not None:
            lines.append(f"robustness ({self.robustness_mode} noise), AUC drop %:")
            for level, d in sorted(self.robustness.items()):
                lines.append(f"  level {level:g}: {-d:+.2f}")
        return "\n".join(lines) + "\n"

    def groups_tsv(self):
        lines = ["group\tn\tn_positive\tauc"]
        for name, n, npos, a in self.groups or []:
            lines.append(f"{name}\t{n}\t{npos}\t{_fmt(a)}")
        return "\n".join(lines) + "\n"


def _fmt(v, digits=10):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.{digits}f}"
    return str(v)


def evaluate(params, test, stats, probe_levels=None, trials=1, rng_seed=0, mode="adversarial",
             group_domains=None, dictionaries=None, schema=None):
    scores = fm.predict(params, test.values)
    labels = test.labels
    fair = fairness_metrics(scores, labels, bucketize(test, stats))
    report = EvalReport(
        auc=auc(scores, labels),
        logloss=logloss(scores, labels),
        bucket_auc=fair.bucket_auc,
        efgd=fair.efgd,
        std=fair.std,
        top_decile_auc=fair.top_auc,
        bottom_decile_auc=fair.bottom_auc,
        n_samples=len(test),
        n_positive=int(labels.sum()),
        dropped_buckets=fair.dropped,
    )
    if probe_levels:
        report.robustness = robustness_probe(params, test, probe_levels, trials, rng_seed, mode)
        report.robustness_mode = mode
    if group_domains:
        report.groups = group_table(scores, labels, test.values, group_domains, dictionaries, schema)
    return report
