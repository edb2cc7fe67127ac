import numpy as np
import pytest

from jointimpute.dataset import SurveyDataset, Unit
from jointimpute.popgen import benchmark_spec, generate_population


def make_dataset(rows, population_size, x_categories=None, y_categories=None,
                 z_categories=None):
    """Build a dataset from (id, weight, group, x, y[, z]) tuples;
    None marks a missing value."""
    units = []
    for row in rows:
        if len(row) == 5:
            uid, w, g, x, y = row
            units.append(Unit(id=str(uid), weight=w, group=g, x=x, y=y))
        else:
            uid, w, g, x, y, z = row
            units.append(Unit(id=str(uid), weight=w, group=g, x=x, y=y,
                              z=z, z_missing=z is None))
    return SurveyDataset.from_units(units, population_size,
                                    x_categories=x_categories,
                                    y_categories=y_categories,
                                    z_categories=z_categories)


def random_fixture(seed, max_units=20):
    """Random small dataset with missingness, guaranteed to contain at
    least one complete pair (so every estimator family is defined)."""
    gen = np.random.default_rng(seed)
    while True:
        n = int(gen.integers(2, max_units + 1))
        k = int(gen.integers(2, 4))
        l = int(gen.integers(2, 4))
        n_groups = int(gen.integers(1, 4))
        rows = []
        for i in range(n):
            w = float(np.round(gen.uniform(0.5, 30.0), 3))
            g = int(gen.integers(1, n_groups + 1))
            pattern = gen.choice(["rr", "rm", "mr", "mm"],
                                 p=[0.45, 0.2, 0.2, 0.15])
            x = int(gen.integers(0, k)) if pattern[0] == "r" else None
            y = int(gen.integers(0, l)) if pattern[1] == "r" else None
            rows.append((f"u{i}", w, g, x, y))
        if any(x is not None and y is not None for _, _, _, x, y in rows):
            n_pop = int(gen.integers(n, 10 * n + 1))
            return make_dataset(rows, n_pop, x_categories=k, y_categories=l)


@pytest.fixture(scope="session")
def table_population():
    return generate_population(benchmark_spec())


@pytest.fixture(scope="session")
def population_spec():
    return benchmark_spec()
