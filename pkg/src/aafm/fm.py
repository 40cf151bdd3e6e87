"""Degree-2 factorization machine over per-domain feature embeddings.

A sample with embeddings ``e_1..e_n`` (one row of each domain's table) is
scored as::

    logit = sum_i <w_i, e_i> + sum_{i<j} <v_i, v_j> * <e_i, e_j>

with one ``w_i`` and one ``v_i`` vector per domain. Everything here works on
batches: ``values`` is an ``(B, n)`` index matrix and embeddings are
``(B, n, d)``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import storage
from .errors import NumericalError, SchemaError

CLAMP = 1e-7
CHECKPOINT_VERSION = "aafm-checkpoint/1"


@dataclass
class ModelParams:
    embeddings: list
    w: np.ndarray
    v: np.ndarray

    @property
    def dim(self):
        return self.w.shape[1]

    @property
    def n_domains(self):
        return self.w.shape[0]

    def copy(self):
        return ModelParams([t.copy() for t in self.embeddings], self.w.copy(), self.v.copy())

    def as_dict(self):
        out = {f"emb{d}": t for d, t in enumerate(self.embeddings)}
        out["w"] = self.w
        out["v"] = self.v
        return out

    @classmethod
    def from_dict(cls, arrays):
        n = arrays["w"].shape[0]
        return cls([np.array(arrays[f"emb{d}"], dtype=np.float64) for d in range(n)],
                   np.array(arrays["w"], dtype=np.float64), np.array(arrays["v"], dtype=np.float64))

    def check_finite(self):
        for d, table in enumerate(self.embeddings):
            if not np.isfinite(table).all():
                raise NumericalError(f"non-finite embedding in domain {d}", domain=d)
        for name in ("w", "v"):
            arr = getattr(self, name)
            bad = ~np.isfinite(arr).all(axis=1)
            if bad.any():
                d = int(np.flatnonzero(bad)[0])
                raise NumericalError(f"non-finite {name} for domain {d}", domain=d)

    def equal(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.as_dict().values(), other.as_dict().values()))


def init_params(schema, dim, seed, std=0.01, weight_std=None):
    """Normal draws: embedding tables with ``std``, ``w`` and ``v`` with
    ``weight_std`` (defaults to ``std``)."""
    rng = np.random.default_rng(seed)
    weight_std = std if weight_std is None else weight_std
    tables = [rng.normal(0.0, std, size=(card, dim)) for card in schema.cardinalities]
    n = schema.n_domains
    return ModelParams(tables, rng.normal(0.0, weight_std, size=(n, dim)),
                       rng.normal(0.0, weight_std, size=(n, dim)))


def interaction_weights(params):
    """``<v_i, v_j>`` for all domain pairs, zero on the diagonal."""
    gram = params.v @ params.v.T
    np.fill_diagonal(gram, 0.0)
    return gram


@dataclass
class ForwardTrace:
    values: np.ndarray
    e: np.ndarray
    gram: np.ndarray
    logit: np.ndarray
    yhat: np.ndarray
    _grad_e: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return self.values.shape[0]


def gather(params, values):
    values = np.atleast_2d(values)
    return np.stack([params.embeddings[d][values[:, d]] for d in range(values.shape[1])], axis=1)


def _check_finite_block(block, what):
    if not np.isfinite(block).all():
        d = int(np.flatnonzero(~np.isfinite(block).all(axis=(0, 2)))[0])
        raise NumericalError(f"non-finite {what} in domain {d}", domain=d)


def forward(params, values, delta=None):
    """Score a batch; ``delta`` (``(B, n, d)``) is added to the gathered embeddings."""
    values = np.atleast_2d(np.asarray(values, dtype=np.int64))
    e = gather(params, values)
    _check_finite_block(e, "embedding")
    if delta is not None:
        delta = np.asarray(delta, dtype=np.float64).reshape(e.shape)
        _check_finite_block(delta, "perturbation")
        e = e + delta
    if not (np.isfinite(params.w).all() and np.isfinite(params.v).all()):
        params.check_finite()
    gram = interaction_weights(params)
    first = np.einsum("bid,id->b", e, params.w)
    inner = e @ e.transpose(0, 2, 1)
    second = 0.5 * np.einsum("ij,bij->b", gram, inner)
    logit = first + second
    return ForwardTrace(values, e, gram, logit, expit(logit))


def bce(yhat, y):
    """Per-sample cross-entropy with predictions clamped to [1e-7, 1-1e-7]."""
    p = np.clip(yhat, CLAMP, 1.0 - CLAMP)
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def loss(trace, labels):
    return float(np.mean(bce(trace.yhat, labels)))


def grad_logit_wrt_embedding(trace, params, domain=None):
    """``w_i + sum_{j != i} <v_i, v_j> e_j`` for every sample, ``(B, n, d)``.

    With ``domain`` set, only that domain's ``(B, d)`` slice is returned.
    """
    if trace._grad_e is None:
        trace._grad_e = params.w[None, :, :] + np.einsum("ij,bjd->bid", trace.gram, trace.e)
    if domain is None:
        return trace._grad_e
    return trace._grad_e[:, domain, :]


@dataclass
class ParamGradients:
    """Gradients w.r.t. the parameters touched by one batch.

    ``rows[d]``/``row_grads[d]`` hold the touched rows of domain ``d``'s
    embedding table (duplicates already summed). ``d_e`` is the gradient
    w.r.t. the (possibly perturbed) gathered embeddings.
    """

    rows: list
    row_grads: list
    w: np.ndarray
    v: np.ndarray
    d_e: np.ndarray

    def dense_embeddings(self, params):
        out = [np.zeros_like(t) for t in params.embeddings]
        for d, (r, g) in enumerate(zip(self.rows, self.row_grads)):
            out[d][r] = g
        return out

    def add(self, other):
        rows, grads = [], []
        for r1, g1, r2, g2 in zip(self.rows, self.row_grads, other.rows, other.row_grads):
            r, g = _sum_rows(np.concatenate([r1, r2]), np.concatenate([g1, g2]))
            rows.append(r)
            grads.append(g)
        return ParamGradients(rows, grads, self.w + other.w, self.v + other.v, None)


def _sum_rows(idx, grads):
    uniq, inv = np.unique(idx, return_inverse=True)
    out = np.zeros((uniq.size, grads.shape[1]))
    np.add.at(out, inv, grads)
    return uniq, out


def backward(trace, labels, params, weights=None):
    """Gradients of ``sum_b weights[b] * bce_b``; default weights give the batch mean."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    b = len(trace)
    if weights is None:
        weights = np.full(b, 1.0 / b)
    r = (trace.yhat - y) * weights
    d_e = r[:, None, None] * grad_logit_wrt_embedding(trace, params)
    d_w = np.einsum("b,bid->id", r, trace.e)
    inner = trace.e @ trace.e.transpose(0, 2, 1)
    n = inner.shape[1]
    inner[:, np.arange(n), np.arange(n)] = 0.0
    d_v = np.einsum("b,bij,jd->id", r, inner, params.v)
    rows, row_grads = [], []
    for d in range(n):
        idx, g = _sum_rows(trace.values[:, d], d_e[:, d, :])
        rows.append(idx)
        row_grads.append(g)
    return ParamGradients(rows, row_grads, d_w, d_v, d_e)


def predict(params, values, batch_size=8192):
    values = np.atleast_2d(values)
    out = np.empty(values.shape[0])
    for s in range(0, values.shape[0], batch_size):
        out[s:s + batch_size] = forward(params, values[s:s + batch_size]).yhat
    return out


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, params, schema, header=None, extra=None):
    head = {"version": CHECKPOINT_VERSION, "schema_digest": schema.digest(), "dim": params.dim}
    head.update(header or {})
    arrays = dict(params.as_dict())
    for k, a in (extra or {}).items():
        arrays[f"extra.{k}"] = a
    storage.write_container(path, "ckpt", head, arrays)


def load_checkpoint(path, schema):
    header, arrays = storage.read_container(path, "ckpt")
    if header.get("version") != CHECKPOINT_VERSION:
        raise SchemaError(f"{path}: unsupported checkpoint version {header.get('version')!r}")
    if header["schema_digest"] != schema.digest():
        raise SchemaError(f"{path}: checkpoint was written for a different feature schema")
    extra = {k[len("extra."):]: a for k, a in arrays.items() if k.startswith("extra.")}
    params = ModelParams.from_dict({k: a for k, a in arrays.items() if not k.startswith("extra.")})
    for d, card in enumerate(schema.cardinalities):
        if params.embeddings[d].shape[0] != card:
            raise SchemaError(f"{path}: domain {d} table has wrong row count")
    return params, header, extra
