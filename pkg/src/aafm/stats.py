"""Per-value frequency and combination-variety statistics.

For a value ``v`` of domain ``d`` over a set of training samples:

* frequency ``alpha[d][v]`` is the share of samples carrying ``v``;
* variety ``beta[d][v]`` is the number of distinct tuples formed by the
  *other* domains among the samples carrying ``v``.

Per-sample joint statistics are products over domains, either of ``alpha``
(adversarial re-weighting) or of ``alpha * beta`` (fairness bucketing).
"""

from dataclasses import dataclass

import numpy as np


def value_counts(train, schema):
    values = train.values
    return [np.bincount(values[:, d], minlength=card).astype(np.int64)
            for d, card in enumerate(schema.cardinalities)]


def compute_alpha(train, schema):
    if len(train) == 0:
        raise ValueError("statistics need a non-empty training set")
    n = len(train)
    return [c / n for c in value_counts(train, schema)]


def compute_beta(train, schema):
    if len(train) == 0:
        raise ValueError("statistics need a non-empty training set")
    # each distinct full row is exactly one distinct (v, rest-of-row) pair
    distinct = np.unique(train.values, axis=0)
    return [np.bincount(distinct[:, d], minlength=card).astype(np.int64)
            for d, card in enumerate(schema.cardinalities)]


@dataclass(frozen=True)
class FeatureStats:
    counts: tuple
    alpha: tuple
    beta: tuple
    n_train: int
    product_domains: tuple
    sample_joint_alpha: np.ndarray
    sample_joint_ab: np.ndarray

    def lookup(self, values):
        """Per-domain (alpha, beta) of each sample, shape ``(B, n)`` each.

        Values never seen in training fall back to the domain's smallest
        positive alpha and a variety of 1.
        """
        values = np.atleast_2d(np.asarray(values, dtype=np.int64))
        a = np.empty(values.shape)
        b = np.empty(values.shape)
        for d in range(values.shape[1]):
            alpha_d, beta_d = self.alpha[d], self.beta[d]
            col = values[:, d]
            ad = alpha_d[col]
            bd = beta_d[col].astype(np.float64)
            unseen = ad <= 0
            if unseen.any():
                positive = alpha_d[alpha_d > 0]
                ad = np.where(unseen, positive.min() if positive.size else 1.0, ad)
                bd = np.where(unseen, 1.0, bd)
            a[:, d] = ad
            b[:, d] = bd
        return a, b

    def joint(self, values):
        """(joint_alpha, joint_ab) arrays for a block of samples."""
        a, b = self.lookup(values)
        cols = list(self.product_domains)
        return np.prod(a[:, cols], axis=1), np.prod(a[:, cols] * b[:, cols], axis=1)

    def log_joint_ab(self, values):
        a, b = self.lookup(values)
        cols = list(self.product_domains)
        return np.sum(np.log(a[:, cols]) + np.log(b[:, cols]), axis=1)


def compute_stats(train, schema, include_id_domains=True):
    """Statistics of ``train`` plus the joint statistics of its own samples.

    ``include_id_domains=False`` leaves the user- and item-id domains out of
    the per-sample products (the per-value arrays still cover them).
    """
    counts = value_counts(train, schema)
    alpha = compute_alpha(train, schema)
    beta = compute_beta(train, schema)
    if include_id_domains:
        product = tuple(range(schema.n_domains))
    else:
        product = tuple(d for d in range(schema.n_domains) if d not in schema.id_domains())
        if not product:
            raise ValueError("excluding id domains leaves nothing to multiply")
    stats = FeatureStats(tuple(counts), tuple(alpha), tuple(beta), len(train), product,
                         np.zeros(0), np.zeros(0))
    ja, jab = stats.joint(train.values)
    object.__setattr__(stats, "sample_joint_alpha", ja)
    object.__setattr__(stats, "sample_joint_ab", jab)
    return stats


def joint_statistics(sample, stats):
    """(joint_alpha, joint_ab) of a single :class:`EncodedSample`."""
    ja, jab = stats.joint(np.asarray(sample.values)[None, :])
    return float(ja[0]), float(jab[0])


def report_rows(stats, schema, dictionaries):
    """One (domain, token, count, alpha, beta) row per dictionary value."""
    rows = []
    for d, (name, card) in enumerate(schema.domains):
        tokens = [None] * card
        for tok, k in dictionaries[d].items():
            tokens[k] = tok
        for k in range(card):
            rows.append((name, tokens[k], int(stats.counts[d][k]), float(stats.alpha[d][k]), int(stats.beta[d][k])))
    return rows
