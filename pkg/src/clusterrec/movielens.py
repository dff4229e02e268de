"""Prepare MovieLens-100K in the package's CSV formats.

The raw data is taken from the copy bundled in the ``recbole`` wheel
(atomic ``.inter``/``.item``/``.user`` files), fetched with ``pip download``
so no direct internet access is needed. Output files:

``ratings.csv``       user,item,rating,timestamp (raw 1-5 stars)
``items.csv``         item, one ``genre:<name>`` column per genre, year
``demographics.csv``  user, age, gender, one column per occupation
"""

from __future__ import annotations

import csv
import logging
import os
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

from clusterrec.dataset import RatingScale

log = logging.getLogger(__name__)

ML100K_SCALE = RatingScale(1.0, 5.0)
RECBOLE_SPEC = "recbole==1.2.1"
_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.{}"

GENRES = (
    "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime", "Documentary",
    "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery", "Romance", "Sci-Fi",
    "Thriller", "War", "Western",
)


def default_data_dir() -> Path:
    env = os.environ.get("CLUSTERREC_ML100K")
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "data" / "ml-100k"


def _download_wheel(dest: Path) -> Path:
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet", "-d", str(dest),
         RECBOLE_SPEC],
        check=True,
    )
    wheels = sorted(dest.glob("recbole-*.whl"))
    if not wheels:
        raise FileNotFoundError("pip download produced no recbole wheel")
    return wheels[0]


def _rows(text: str) -> list[list[str]]:
    lines = text.splitlines()
    return [line.split("\t") for line in lines[1:] if line.strip()]


def convert(wheel: Path, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(wheel) as zf:
        inter = _rows(zf.read(_MEMBER.format("inter")).decode("utf-8"))
        items = _rows(zf.read(_MEMBER.format("item")).decode("latin-1"))
        users = _rows(zf.read(_MEMBER.format("user")).decode("utf-8"))

    with open(out_dir / "ratings.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "item", "rating", "timestamp"])
        for user, item, rating, ts in inter:
            w.writerow([user, item, int(float(rating)), int(float(ts))])

    with open(out_dir / "items.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item", *(f"genre:{g}" for g in GENRES), "year"])
        for row in items:
            item, year = row[0], row[2] if len(row) > 2 else ""
            tags = set(row[3].split()) if len(row) > 3 else set()
            year_feat = (int(year) - 1900) / 100 if year.strip().isdigit() else 0.0
            w.writerow([item, *(int(g in tags) for g in GENRES), f"{year_feat:.2f}"])

    occupations = sorted({row[3] for row in users})
    with open(out_dir / "demographics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user", "age", "male", *(f"occ:{o}" for o in occupations)])
        for user, age, gender, occ, *_ in users:
            w.writerow([user, f"{int(age) / 100:.2f}", int(gender == "M"),
                        *(int(occ == o) for o in occupations)])


def ensure_ml100k(data_dir: Path | None = None) -> Path:
    """Return a directory holding the converted files, fetching them if absent."""
    data_dir = Path(data_dir) if data_dir else default_data_dir()
    needed = ("ratings.csv", "items.csv", "demographics.csv")
    if all((data_dir / n).exists() for n in needed):
        return data_dir
    log.info("preparing MovieLens-100K in %s", data_dir)
    with tempfile.TemporaryDirectory() as tmp:
        convert(_download_wheel(Path(tmp)), data_dir)
    return data_dir
