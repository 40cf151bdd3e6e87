"""Independent reference computations used by the tests.

Nothing here imports the package's numerical code paths: each oracle is a
direct, loop-based restatement of a definition.
"""

import csv
import math
from collections import Counter


def fm_logit(embs, w, v):
    """Score one sample from plain Python lists: embs[i], w[i], v[i] are vectors."""
    n = len(embs)
    total = 0.0
    for i in range(n):
        total += sum(a * b for a, b in zip(w[i], embs[i]))
    for i in range(n):
        for j in range(i + 1, n):
            vij = sum(a * b for a, b in zip(v[i], v[j]))
            eij = sum(a * b for a, b in zip(embs[i], embs[j]))
            total += vij * eij
    return total


def fm_logit_factorized(embs, v):
    """Second-order term via the sum-of-squares identity, per embedding dimension.

    With scalar pair weights <v_i, v_j> the identity runs over the
    ``d_v`` factor coordinates: sum_f [(sum_i v_if e_i)^2 - sum_i v_if^2 e_i^2] / 2,
    where the squares are inner products of embedding vectors.
    """
    n, dv = len(embs), len(v[0])
    d = len(embs[0])
    total = 0.0
    for f in range(dv):
        acc = [sum(v[i][f] * embs[i][k] for i in range(n)) for k in range(d)]
        sq = sum(a * a for a in acc)
        diag = sum(v[i][f] ** 2 * sum(x * x for x in embs[i]) for i in range(n))
        total += 0.5 * (sq - diag)
    return total


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x))


def bce(p, y):
    p = min(max(p, 1e-7), 1 - 1e-7)
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def central_diff(f, x, h=1e-4):
    """Central finite-difference gradient of scalar ``f`` at numpy array ``x`` (all entries)."""
    import numpy as np

    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + h
        fp = f(x)
        flat[k] = old - h
        fm_ = f(x)
        flat[k] = old
        gflat[k] = (fp - fm_) / (2 * h)
    return g


def auc_pairs(scores, labels):
    """AUC by enumerating every positive/negative pair."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = 0.0
    for p in pos:
        for q in neg:
            wins += 1.0 if p > q else 0.5 if p == q else 0.0
    return wins / (len(pos) * len(neg))


def beta_by_sets(rows, d):
    """value -> number of distinct tuples of the other columns, via Python sets."""
    seen = {}
    for row in rows:
        rest = tuple(x for k, x in enumerate(row) if k != d)
        seen.setdefault(row[d], set()).add(rest)
    return {v: len(s) for v, s in seen.items()}


def movielens_user_counts(interactions_path):
    """Interactions per user, read straight from the TSV."""
    with open(interactions_path, newline="") as fh:
        reader = csv.DictReader(fh, delimiter="\t")
        return Counter(r["user_id"] for r in reader)


def movielens_gender_share(interactions_path, users_path):
    with open(users_path, newline="") as fh:
        gender = {r["user_id"]: r["gender"] for r in csv.DictReader(fh, delimiter="\t")}
    with open(interactions_path, newline="") as fh:
        counts = Counter(gender[r["user_id"]] for r in csv.DictReader(fh, delimiter="\t"))
    return counts["M"] / sum(counts.values())
