import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, name, passed, detail)``."""
    lines = request.config.stash[ACCEPTANCE]

    def record(number, name, passed, detail):
        lines.append((number, name, bool(passed), detail))
        print(f"criterion {number} {name}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = sorted(config.stash.get(ACCEPTANCE, []))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, name, passed, detail in lines:
        terminalreporter.write_line(
            f"[{'PASS' if passed else 'FAIL'}] {number}. {name}: {detail}"
        )


@pytest.fixture(scope="session")
def ml100k():
    """MovieLens-100K with demographics and genre labels on the [0.5, 5] scale."""
    from clusterrec.dataset import (
        RatingScale, assign_group_labels, attach_demographics, load_demographics, load_items,
        load_ratings,
    )
    from clusterrec.movielens import ensure_ml100k

    root = ensure_ml100k()
    cat = load_items(root / "items.csv")
    ds = load_ratings(root / "ratings.csv", cat, RatingScale(0.5, 5.0))
    demo, dim = load_demographics(root / "demographics.csv")
    ds = assign_group_labels(attach_demographics(ds, demo, dim), cat)
    return root, cat, ds
