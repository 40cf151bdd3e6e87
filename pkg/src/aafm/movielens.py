"""Locate MovieLens-100K and normalize it into three headed TSV files.

Two source layouts are understood: the GroupLens distribution
(``u.data``/``u.user``/``u.item``) and the atomic files bundled in the
RecBole wheel (``ml-100k.inter``/``.user``/``.item``). When neither is on
disk, the wheel is fetched with ``pip download``.

Output files in ``dest``::

    interactions.tsv  user_id item_id rating timestamp
    users.tsv         user_id age gender occupation zip_code
    items.tsv         item_id title release_year genres
"""

import csv
import logging
import re
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

from .errors import DataError

logger = logging.getLogger(__name__)

GENRES = [
    "unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
    "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
    "Romance", "Sci-Fi", "Thriller", "War", "Western",
]
OUTPUTS = ("interactions.tsv", "users.tsv", "items.tsv")


def _write(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n", quoting=csv.QUOTE_NONE, escapechar="\\")
        w.writerow(header)
        w.writerows(rows)


def _from_grouplens(src, dest):
    def lines(name, sep):
        text = (src / name).read_text(encoding="latin-1")
        return [ln.split(sep) for ln in text.splitlines() if ln.strip()]

    inter = [r[:4] for r in lines("u.data", "\t")]
    users = [r[:5] for r in lines("u.user", "|")]
    items = []
    for r in lines("u.item", "|"):
        m = re.search(r"(\d{4})$", r[2])
        flags = r[5:5 + len(GENRES)]
        genres = " ".join(g for g, f in zip(GENRES, flags) if f == "1") or "unknown"
        items.append([r[0], r[1].replace("\t", " "), m.group(1) if m else "unknown", genres])
    return inter, users, items


def _from_atomic(read):
    def table(ext):
        text = read(f"ml-100k.{ext}")
        rows = [ln.split("\t") for ln in text.splitlines() if ln.strip()]
        return rows[1:]

    inter = [r[:4] for r in table("inter")]
    users = [r[:5] for r in table("user")]
    items = [[r[0], r[1], r[2] if r[2].isdigit() else "unknown", r[3]] for r in table("item")]
    return inter, users, items


def _download_wheel(workdir):
    cmd = [sys.executable, "-m", "pip", "download", "recbole", "--no-deps", "-q", "-d", str(workdir)]
    logger.info("fetching MovieLens-100K via: %s", " ".join(cmd))
    subprocess.run(cmd, check=True, capture_output=True)
    wheels = sorted(Path(workdir).glob("recbole-*.whl"))
    if not wheels:
        raise DataError("pip download did not produce a recbole wheel")
    return wheels[-1]


def _from_wheel(wheel):
    with zipfile.ZipFile(wheel) as zf:
        prefix = "recbole/dataset_example/ml-100k/"

        def read(name):
            return zf.read(prefix + name).decode("latin-1")

        return _from_atomic(read)


def prepare_movielens(dest, source=None, allow_download=True):
    """Write the normalized TSVs to ``dest`` and return its path.

    ``source`` may be a GroupLens directory, a RecBole atomic-file directory
    or a RecBole wheel. Existing outputs are reused.
    """
    dest = Path(dest)
    if all((dest / name).exists() for name in OUTPUTS):
        return dest
    dest.mkdir(parents=True, exist_ok=True)
    src = Path(source) if source else None
    if src is not None and (src / "u.data").exists():
        inter, users, items = _from_grouplens(src, dest)
    elif src is not None and (src / "ml-100k.inter").exists():
        inter, users, items = _from_atomic(lambda name: (src / name).read_text(encoding="latin-1"))
    elif src is not None and src.suffix == ".whl":
        inter, users, items = _from_wheel(src)
    elif allow_download:
        with tempfile.TemporaryDirectory() as tmp:
            try:
                wheel = _download_wheel(tmp)
            except (subprocess.CalledProcessError, OSError) as exc:
                raise DataError(f"could not download MovieLens-100K: {exc}") from exc
            inter, users, items = _from_wheel(wheel)
    else:
        raise DataError("MovieLens-100K not found and downloading is disabled")

    _write(dest / "interactions.tsv", ["user_id", "item_id", "rating", "timestamp"], inter)
    _write(dest / "users.tsv", ["user_id", "age", "gender", "occupation", "zip_code"], users)
    _write(dest / "items.tsv", ["item_id", "title", "release_year", "genres"], items)
    logger.info("MovieLens-100K: %d interactions, %d users, %d items", len(inter), len(users), len(items))
    return dest


def default_data_dir():
    return Path(__file__).resolve().parents[2] / "data" / "ml-100k"


def summary_counts(dest):
    """(interactions, users, items) row counts of a prepared directory."""
    out = []
    for name in OUTPUTS:
        with open(Path(dest) / name, encoding="utf-8") as fh:
            out.append(sum(1 for _ in fh) - 1)
    return tuple(out)
