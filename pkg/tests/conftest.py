import os

import numpy as np
import pytest

from mixedgp.data import ColumnSchema, MixedDataset, load_csv, load_schema

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")

# pass/fail lines registered by the acceptance tests, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def data_dir():
    return DATA_DIR


@pytest.fixture(scope="session")
def demo():
    """The 10-row regression table: X1, X2 continuous; U1 red/green/blue; Y."""
    return load_csv(os.path.join(DATA_DIR, "demo.csv"),
                    load_schema(os.path.join(DATA_DIR, "demo_schema.json")))


@pytest.fixture(scope="session")
def demo_class():
    """The classification variant: same inputs, label output apple/orange/banana."""
    return load_csv(os.path.join(DATA_DIR, "demo_class.csv"),
                    load_schema(os.path.join(DATA_DIR, "demo_class_schema.json")))


def make_dataset(x, u, y, cat_levels=None, x_names=None, y_names=None):
    """Assemble a MixedDataset from plain arrays with generated column names."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=np.int64))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if x.shape[0] == 1 and u.shape[0] > 1:
        x = x.T
    if u.shape[0] == 1 and x.shape[0] > 1:
        u = u.T
    if y.shape[0] == 1 and y.shape[1] == x.shape[0]:
        y = y.T
    n, p = x.shape
    q = u.shape[1]
    if cat_levels is None:
        cat_levels = tuple(tuple(f"l{k}" for k in range(int(u[:, t].max()) + 1 if n else 1))
                           for t in range(q))
    x_names = x_names or [f"x{s}" for s in range(p)]
    y_names = y_names or [f"y{k}" for k in range(y.shape[1])]
    schema = tuple([ColumnSchema(nm, "continuous") for nm in x_names]
                   + [ColumnSchema(f"u{t}", "categorical", cat_levels[t]) for t in range(q)]
                   + [ColumnSchema(nm, "output") for nm in y_names])
    return MixedDataset(schema, x, u, y, None, tuple(cat_levels), ())
