"""Ingestion, encoding, leave-one-out splitting and negative sampling.

Raw interaction logs are delimiter-separated tables. Each configured domain
reads one column (optionally joined in from a user- or item-side table),
applies an optional token transform or binning, and is dictionary-encoded in
first-seen order. Samples are stored column-wise as an ``(N, n_domains)``
integer matrix inside :class:`SampleTable`.
"""

import bisect
import csv
import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import storage
from .errors import ConfigError, DataError, SchemaError

logger = logging.getLogger(__name__)

SIDES = ("user", "item", "context")
CACHE_VERSION = "aafm-dataset/1"
NA_TOKEN = "<NA>"


@dataclass(frozen=True)
class FeatureSchema:
    domains: tuple
    user_id_domain_index: int
    item_id_domain_index: int
    sides: tuple = ()

    def __post_init__(self):
        domains = tuple((str(name), int(card)) for name, card in self.domains)
        object.__setattr__(self, "domains", domains)
        names = [name for name, _ in domains]
        if len(set(names)) != len(names):
            raise SchemaError(f"duplicate domain names in {names}")
        for name, card in domains:
            if card < 1:
                raise SchemaError(f"domain {name!r} has cardinality {card} < 1")
        n = len(domains)
        u, i = self.user_id_domain_index, self.item_id_domain_index
        if not (0 <= u < n and 0 <= i < n):
            raise SchemaError(f"user/item domain indices ({u}, {i}) out of range for {n} domains")
        if u == i:
            raise SchemaError("user-id and item-id domains must differ")
        sides = tuple(self.sides)
        if not sides:
            sides = tuple(
                "user" if d == u else "item" if d == i else "context" for d in range(n)
            )
        if len(sides) != n or any(s not in SIDES for s in sides):
            raise SchemaError(f"invalid domain sides {sides}")
        if sides[u] != "user" or sides[i] != "item":
            raise SchemaError("user-id domain must be user-side and item-id domain item-side")
        object.__setattr__(self, "sides", sides)

    @property
    def n_domains(self):
        return len(self.domains)

    @property
    def names(self):
        return [name for name, _ in self.domains]

    @property
    def cardinalities(self):
        return [card for _, card in self.domains]

    def index(self, name):
        return self.names.index(name)

    def id_domains(self):
        return (self.user_id_domain_index, self.item_id_domain_index)

    def to_dict(self):
        return {
            "domains": [list(d) for d in self.domains],
            "user_id_domain_index": self.user_id_domain_index,
            "item_id_domain_index": self.item_id_domain_index,
            "sides": list(self.sides),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            domains=tuple(tuple(x) for x in d["domains"]),
            user_id_domain_index=d["user_id_domain_index"],
            item_id_domain_index=d["item_id_domain_index"],
            sides=tuple(d.get("sides", ())),
        )

    def digest(self):
        return storage.digest(self.to_dict())


@dataclass(frozen=True)
class EncodedSample:
    values: tuple
    label: int

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    def validate(self, schema):
        if len(self.values) != schema.n_domains:
            raise SchemaError(f"sample has {len(self.values)} values, schema has {schema.n_domains} domains")
        for d, (v, card) in enumerate(zip(self.values, schema.cardinalities)):
            if not 0 <= v < card:
                raise SchemaError(f"value {v} out of range for domain {d} (cardinality {card})")


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SampleTable:
    """Column-wise block of encoded samples.

    ``order`` is the per-sample ordering key used to find each user's last
    interaction (timestamp or input position).
    """

    values: np.ndarray
    labels: np.ndarray
    order: np.ndarray = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.int64)
        if values.ndim != 2:
            raise ValueError("values must be a 2-D (samples x domains) array")
        labels = np.asarray(self.labels, dtype=np.int8).reshape(-1)
        if labels.shape[0] != values.shape[0]:
            raise ValueError("values and labels disagree on sample count")
        if labels.size and not np.isin(labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        order = self.order
        if order is None:
            order = np.arange(values.shape[0], dtype=np.float64)
        order = np.asarray(order, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "order", _frozen(order))

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, k):
        return EncodedSample(tuple(self.values[k]), int(self.labels[k]))

    def __iter__(self):
        for k in range(len(self)):
            yield self[k]

    @property
    def n_domains(self):
        return self.values.shape[1]

    def take(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        return SampleTable(self.values[idx], self.labels[idx], self.order[idx])

    @classmethod
    def from_samples(cls, samples, n_domains=None):
        samples = list(samples)
        if not samples:
            return cls.empty(n_domains or 0)
        return cls(
            np.array([s.values for s in samples], dtype=np.int64),
            np.array([s.label for s in samples], dtype=np.int8),
        )

    @classmethod
    def empty(cls, n_domains):
        return cls(np.zeros((0, n_domains), np.int64), np.zeros(0, np.int8), np.zeros(0))

    @classmethod
    def concat(cls, tables):
        tables = list(tables)
        return cls(
            np.concatenate([t.values for t in tables]),
            np.concatenate([t.labels for t in tables]),
            np.concatenate([t.order for t in tables]),
        )

    def validate(self, schema):
        if self.n_domains != schema.n_domains:
            raise SchemaError("sample width does not match schema")
        if len(self) and ((self.values < 0) | (self.values >= np.array(schema.cardinalities))).any():
            raise SchemaError("value index out of range for its domain")

    def pairs(self, schema):
        """(user, item) index pairs of every sample."""
        return self.values[:, [schema.user_id_domain_index, schema.item_id_domain_index]]


@dataclass(frozen=True)
class SplitDataset:
    train: SampleTable
    test: SampleTable
    schema: FeatureSchema
    value_dictionaries: tuple = ()

    def positives(self):
        return SampleTable.concat([self.train, self.test])

    def decode(self, values):
        return decode(values, self.value_dictionaries)


# -- column specification ---------------------------------------------------


@dataclass
class DomainSpec:
    name: str
    column: str
    side: str = "context"
    transform: str = None

    def __post_init__(self):
        if self.side not in SIDES:
            raise ConfigError(f"domain {self.name!r}: side must be one of {SIDES}")
        if self.transform is not None:
            _parse_transform(self.transform)


@dataclass
class ColumnSpec:
    domains: list
    user_domain: str
    item_domain: str
    timestamp_column: str = None

    def __post_init__(self):
        self.domains = [d if isinstance(d, DomainSpec) else DomainSpec(**d) for d in self.domains]
        names = [d.name for d in self.domains]
        for role, name in (("user", self.user_domain), ("item", self.item_domain)):
            if name not in names:
                raise ConfigError(f"{role} domain {name!r} is not among configured domains {names}")

    @property
    def columns(self):
        cols = [d.column for d in self.domains]
        if self.timestamp_column:
            cols.append(self.timestamp_column)
        return cols


def _parse_transform(transform):
    if transform == "first_token":
        return ("first_token", None)
    if transform.startswith("prefix:"):
        try:
            k = int(transform.split(":", 1)[1])
        except ValueError:
            k = 0
        if k < 1:
            raise ConfigError(f"bad prefix transform {transform!r}")
        return ("prefix", k)
    raise ConfigError(f"unknown transform {transform!r}")


def apply_transform(token, transform):
    if transform is None:
        return token
    kind, arg = _parse_transform(transform)
    if kind == "first_token":
        parts = token.replace("|", " ").split()
        return parts[0] if parts else token
    return token[:arg]


def check_bin_edges(edges):
    edges = [float(e) for e in edges]
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError(f"bin edges must be strictly increasing: {edges}")
    return edges


def bin_index(x, edges):
    """Index of the half-open interval ``[edges[k-1], edges[k])`` holding ``x``."""
    return bisect.bisect_right(edges, x)


def bin_label(k, edges):
    def fmt(e):
        return f"{e:g}"

    if k == 0:
        return f"<{fmt(edges[0])}"
    if k == len(edges):
        return f">={fmt(edges[-1])}"
    return f"[{fmt(edges[k - 1])},{fmt(edges[k])})"


@dataclass(frozen=True)
class RowError:
    row: int
    column: str
    message: str

    def __str__(self):
        return f"row {self.row}, column {self.column!r}: {self.message}"


@dataclass
class Ingested:
    schema: FeatureSchema
    positives: SampleTable
    dictionaries: tuple
    row_errors: list = field(default_factory=list)


def ingest(rows, spec, binning_rules=None, max_error_fraction=0.0, na_values=()):
    """Encode raw rows into integer samples.

    ``rows`` is a sequence of mappings (column -> raw string). Continuous
    columns listed in ``binning_rules`` are mapped to bin tokens first.
    Raw values listed in ``na_values`` become the token ``NA_TOKEN`` instead
    of being parsed. Unparsable rows are collected as :class:`RowError`; the
    call fails when their share exceeds ``max_error_fraction``. Every emitted
    sample is a positive (label 1).
    """
    na_values = set(na_values)
    rows = list(rows)
    if not rows:
        raise DataError("raw table is empty")
    binning_rules = {col: check_bin_edges(e) for col, e in (binning_rules or {}).items()}
    present = set(rows[0])
    missing = [c for c in spec.columns if c not in present]
    if missing:
        raise SchemaError(f"missing required columns: {missing}")

    n = len(spec.domains)
    dictionaries = [dict() for _ in range(n)]
    encoded, order, errors = [], [], []
    for row_no, row in enumerate(rows, start=1):
        tokens, bad = [], None
        for dspec in spec.domains:
            raw = row.get(dspec.column)
            if raw is None or (isinstance(raw, str) and raw.strip() == ""):
                bad = RowError(row_no, dspec.column, "missing value")
                break
            raw = str(raw).strip()
            if raw in na_values:
                tokens.append(NA_TOKEN)
                continue
            if dspec.column in binning_rules:
                try:
                    x = float(raw)
                except ValueError:
                    bad = RowError(row_no, dspec.column, f"not a number: {raw!r}")
                    break
                if not math.isfinite(x):
                    bad = RowError(row_no, dspec.column, f"non-finite value {raw!r}")
                    break
                edges = binning_rules[dspec.column]
                raw = bin_label(bin_index(x, edges), edges)
            tokens.append(apply_transform(raw, dspec.transform))
        key = float(row_no)
        if bad is None and spec.timestamp_column:
            try:
                key = float(row[spec.timestamp_column])
            except (TypeError, ValueError):
                bad = RowError(row_no, spec.timestamp_column, "unparsable timestamp")
        if bad is not None:
            errors.append(bad)
            continue
        encoded.append([dictionaries[d].setdefault(tok, len(dictionaries[d])) for d, tok in enumerate(tokens)])
        order.append(key)

    if errors:
        frac = len(errors) / len(rows)
        for err in errors[:10]:
            logger.warning("ingest: %s", err)
        if frac > max_error_fraction:
            raise DataError(
                f"{len(errors)} of {len(rows)} rows failed ({frac:.2%} > {max_error_fraction:.2%}); "
                f"first: {errors[0]}",
                errors,
            )
    if not encoded:
        raise DataError("no rows survived ingestion", errors)

    names = [d.name for d in spec.domains]
    schema = FeatureSchema(
        domains=tuple((d.name, len(dictionaries[k])) for k, d in enumerate(spec.domains)),
        user_id_domain_index=names.index(spec.user_domain),
        item_id_domain_index=names.index(spec.item_domain),
        sides=tuple(
            "user" if d.name == spec.user_domain else "item" if d.name == spec.item_domain else d.side
            for d in spec.domains
        ),
    )
    positives = SampleTable(np.array(encoded, dtype=np.int64), np.ones(len(encoded), np.int8), np.array(order))
    return Ingested(schema, positives, tuple(dictionaries), errors)


def decode(values, dictionaries):
    """Map value indices back to their tokens."""
    inverse = [{v: k for k, v in d.items()} for d in dictionaries]
    values = np.asarray(values)
    if values.ndim == 1:
        return tuple(inverse[d][int(v)] for d, v in enumerate(values))
    return [tuple(inverse[d][int(v)] for d, v in enumerate(row)) for row in values]


def encode(tokens, dictionaries):
    return tuple(dictionaries[d][tok] for d, tok in enumerate(tokens))


# -- raw table loading --------------------------------------------------------


def read_table(path, delimiter="\t", header=True, columns=None, encoding="utf-8"):
    """Read a delimited file into a list of dicts.

    Without a header line, ``columns`` names the fields. Rows with the wrong
    number of fields keep the columns they have; the missing ones surface as
    row errors during ingestion.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding=encoding, errors="replace") as fh:
        reader = csv.reader(fh, delimiter=delimiter, quoting=csv.QUOTE_NONE)
        if header:
            try:
                names = [c.strip() for c in next(reader)]
            except StopIteration:
                raise DataError(f"{path} is empty") from None
        else:
            if not columns:
                raise ConfigError(f"{path}: headerless table needs explicit column names")
            names = list(columns)
        return [dict(zip(names, rec)) for rec in reader if rec]


def join_side_table(rows, side_rows, key, columns=None):
    """Left-join attribute columns from ``side_rows`` into ``rows`` on ``key``."""
    lookup = {}
    for r in side_rows:
        lookup.setdefault(r.get(key), r)
    if not side_rows:
        return rows
    extra = [c for c in (columns or side_rows[0].keys()) if c != key]
    out = []
    for r in rows:
        match = lookup.get(r.get(key))
        joined = dict(r)
        for c in extra:
            joined[c] = None if match is None else match.get(c)
        out.append(joined)
    return out


def filter_users(rows, user_column, min_interactions=None, max_interactions=None):
    """Drop users whose interaction count falls outside the configured range."""
    if min_interactions is None and max_interactions is None:
        return rows
    counts = {}
    for r in rows:
        counts[r.get(user_column)] = counts.get(r.get(user_column), 0) + 1
    lo = min_interactions or 0
    hi = max_interactions if max_interactions is not None else math.inf
    return [r for r in rows if lo <= counts[r.get(user_column)] <= hi]


# -- splitting and sampling -------------------------------------------------------


def leave_one_out_split(positives, schema, dictionaries=()):
    """Hold out each user's final positive as the test sample.

    Users with a single interaction stay entirely in train. Repeated
    (user, item) pairs are collapsed onto their latest occurrence first so
    that train and test never share a pair.
    """
    n = len(positives)
    if n == 0:
        empty = SampleTable.empty(schema.n_domains)
        return SplitDataset(empty, empty, schema, tuple(dictionaries))
    users = positives.values[:, schema.user_id_domain_index]
    items = positives.values[:, schema.item_id_domain_index]
    idx = np.arange(n)
    ordered = np.lexsort((idx, positives.order, users))

    # latest occurrence of each (user, item) pair wins
    keys = users[ordered] * (int(items.max()) + 1) + items[ordered]
    _, last_rev = np.unique(keys[::-1], return_index=True)
    keep = np.zeros(n, bool)
    keep[ordered[n - 1 - last_rev]] = True
    dropped = n - int(keep.sum())
    if dropped:
        logger.warning("leave-one-out: collapsed %d repeated (user, item) interactions", dropped)
    ordered = ordered[keep[ordered]]

    u_sorted = users[ordered]
    is_last = np.ones(len(ordered), bool)
    is_last[:-1] = u_sorted[:-1] != u_sorted[1:]
    group_size = np.bincount(u_sorted, minlength=schema.cardinalities[schema.user_id_domain_index])
    held = ordered[is_last & (group_size[u_sorted] >= 2)]

    test_mask = np.zeros(n, bool)
    test_mask[held] = True
    train_idx = np.flatnonzero(keep & ~test_mask)
    test_idx = np.sort(held)
    return SplitDataset(positives.take(train_idx), positives.take(test_idx), schema, tuple(dictionaries))


def _item_catalog(observed, schema):
    """Item index -> values of every item-side domain, taken from observed rows."""
    item_d = schema.item_id_domain_index
    item_cols = [d for d, s in enumerate(schema.sides) if s == "item"]
    n_items = schema.cardinalities[item_d]
    catalog = np.full((n_items, schema.n_domains), -1, dtype=np.int64)
    items = observed.values[:, item_d]
    _, first = np.unique(items, return_index=True)
    catalog[items[first][:, None], np.array(item_cols)[None, :]] = observed.values[first][:, item_cols]
    known = np.zeros(n_items, bool)
    known[items[first]] = True
    return catalog, item_cols, known


def sample_negatives(positives, schema, ratio, rng_seed, observed=None):
    """Pair each positive with ``ratio`` uniformly drawn unobserved items.

    The output interleaves every positive with its negatives. Negatives copy
    the user- and context-side values of their positive and take the sampled
    item's item-side values. ``observed`` (default: ``positives``) defines
    which (user, item) pairs count as interacted and supplies item attributes.
    Users who have interacted with every catalogued item get no negatives.
    """
    if ratio < 1:
        raise ConfigError(f"negative ratio must be >= 1, got {ratio}")
    observed = positives if observed is None else observed
    rng = np.random.default_rng(rng_seed)
    item_d, user_d = schema.item_id_domain_index, schema.user_id_domain_index
    catalog, item_cols, known = _item_catalog(observed, schema)
    all_items = np.flatnonzero(known)

    seen = {}
    for u, i in observed.values[:, [user_d, item_d]]:
        seen.setdefault(int(u), set()).add(int(i))

    users = positives.values[:, user_d]
    n_neg = np.zeros(len(positives), np.int64)
    drawn = np.zeros((len(positives), ratio), np.int64)
    skipped_users = 0
    by_user = np.argsort(users, kind="stable")
    uniq, starts = np.unique(users[by_user], return_index=True)
    for u, rows in zip(uniq, np.split(by_user, starts[1:])):
        mask = np.ones(len(all_items), bool)
        interacted = seen.get(int(u), set())
        if interacted:
            mask[np.searchsorted(all_items, np.fromiter(interacted, np.int64))] = False
        candidates = all_items[mask]
        if candidates.size == 0:
            skipped_users += 1
            continue
        picks = rng.integers(0, candidates.size, size=(rows.size, ratio))
        drawn[rows] = candidates[picks]
        n_neg[rows] = ratio
    if skipped_users:
        logger.warning("negative sampling: skipped %d users with no unobserved items", skipped_users)

    block = 1 + n_neg
    start = np.concatenate([[0], np.cumsum(block)[:-1]])
    total = int(block.sum())
    values = np.empty((total, schema.n_domains), np.int64)
    labels = np.zeros(total, np.int8)
    order = np.empty(total)
    values[start] = positives.values
    labels[start] = 1
    order[start] = positives.order
    for r in range(ratio):
        has = n_neg > r
        pos = start[has] + 1 + r
        neg = positives.values[has].copy()
        neg[:, item_cols] = catalog[drawn[has, r]][:, item_cols]
        values[pos] = neg
        order[pos] = positives.order[has]
    return SampleTable(values, labels, order)


@dataclass(frozen=True)
class TrainingData:
    """Negative-augmented train and test tables sharing one schema."""

    train: SampleTable
    test: SampleTable
    schema: FeatureSchema

    def digest(self):
        h = hashlib.sha256()
        for arr in (self.train.values, self.train.labels, self.test.values, self.test.labels):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(self.schema.digest().encode())
        return h.hexdigest()[:16]


def with_negatives(split, ratio, seed):
    """Negative-augmented train and test tables drawn from disjoint seed streams.

    Training negatives avoid every observed pair, held-out test positives
    included.
    """
    train_seed, test_seed = np.random.SeedSequence(seed).spawn(2)
    observed = split.positives()
    train = sample_negatives(split.train, split.schema, ratio, train_seed, observed=observed)
    test = sample_negatives(split.test, split.schema, ratio, test_seed, observed=observed)
    return TrainingData(train, test, split.schema)


# -- cache ---------------------------------------------------------------------


def save_split(path, split, provenance):
    header = {
        "version": CACHE_VERSION,
        "schema": split.schema.to_dict(),
        "dictionaries": [list(d) for d in split.value_dictionaries],
        "provenance": provenance,
    }
    arrays = {
        "train_values": split.train.values,
        "train_order": split.train.order,
        "test_values": split.test.values,
        "test_order": split.test.order,
    }
    storage.write_container(path, "dataset", header, arrays)


def load_split(path):
    header, arrays = storage.read_container(path, "dataset")
    if header.get("version") != CACHE_VERSION:
        raise DataError(f"{path}: cache version {header.get('version')!r} != {CACHE_VERSION!r}")
    schema = FeatureSchema.from_dict(header["schema"])
    dictionaries = tuple({tok: k for k, tok in enumerate(toks)} for toks in header["dictionaries"])
    train = SampleTable(arrays["train_values"], np.ones(len(arrays["train_values"]), np.int8), arrays["train_order"])
    test = SampleTable(arrays["test_values"], np.ones(len(arrays["test_values"]), np.int8), arrays["test_order"])
    return SplitDataset(train, test, schema, dictionaries), header["provenance"]
