import numpy as np
import pytest

from gbcalib.model import Group, GroupedDataset, HuberSpec, WorkingCov, whiten


def random_spd(rng, dim, jitter=1.0):
    b = rng.standard_normal((dim, dim))
    return b.T @ b + jitter * np.eye(dim)


def make_dataset(seed, g=12, n_i=5, p=2, beta=None, contam=0.1):
    rng = np.random.default_rng(seed)
    beta = np.linspace(1.0, -0.5, p) if beta is None else np.asarray(beta, dtype=float)
    groups = []
    for _ in range(g):
        x = rng.standard_normal((n_i, p))
        y = x @ beta + rng.normal(0, np.sqrt(2.0)) + rng.standard_normal(n_i)
        y = y + (rng.random(n_i) < contam) * rng.normal(0, 10, n_i)
        groups.append(Group(x=x, y=y))
    return GroupedDataset(tuple(groups))


def make_whitened(seed, **kw):
    return whiten(make_dataset(seed, **kw), WorkingCov(2.0, 1.0))


@pytest.fixture
def huber():
    return HuberSpec(1.0)


@pytest.fixture
def wd():
    return make_whitened(7)


_VERDICTS = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_VERDICTS] = []


@pytest.fixture
def verdict(request):
    """Record one acceptance line; the list is echoed in the terminal summary."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[_VERDICTS].append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
