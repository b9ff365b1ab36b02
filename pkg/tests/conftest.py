import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedrd import SurvivalDataset

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_dataset(rng, n, p, censor_frac=0.3, ties=False, site_id=None):
    """Continuous covariates, exponential-ish times, independent censoring indicators."""
    x = rng.uniform(-1.0, 2.0, size=(n, p))
    time = rng.exponential(1.0, size=n)
    if ties:
        time = np.round(time, 1)
    status = (rng.random(n) >= censor_frac).astype(int)
    status[rng.integers(n)] = 1
    return SurvivalDataset(time, status, x, site_id=site_id)


def random_partition(rng, data, k):
    """Split ``data`` into ``k`` nonempty sites at random."""
    labels = np.concatenate([np.arange(k), rng.integers(0, k, size=data.n - k)])
    rng.shuffle(labels)
    return [data.subset(np.flatnonzero(labels == j), site_id=f"site{j + 1}") for j in range(k)]


@pytest.fixture
def pair():
    """Two subjects: events at 1 and 2, covariate 0 then 1."""
    return SurvivalDataset([1.0, 2.0], [1, 1], [[0.0], [1.0]])


@pytest.fixture
def pair_censored():
    return SurvivalDataset([1.0, 2.0], [1, 0], [[1.0], [0.0]])


_ACCEPTANCE: list[str] = []


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line per acceptance criterion and assert it."""

    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
