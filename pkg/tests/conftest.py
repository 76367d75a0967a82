import numpy as np
import pytest

from softplan import meshes
from softplan.tetmesh import geodesic_table


def central_diff(f, arr, idx, h=1e-5):
    """Central difference of scalar f() w.r.t. arr.flat[idx] (arr edited in place)."""
    flat = arr.reshape(-1)
    old = flat[idx]
    flat[idx] = old + h
    up = f()
    flat[idx] = old - h
    down = f()
    flat[idx] = old
    return (up - down) / (2 * h)


def worst_rel_err(f, arr, grad, rng, n_entries=12, h=1e-5, floor=1e-6):
    """Largest |fd - analytic| / max(|fd|, |analytic|, floor) over sampled entries."""
    size = arr.size
    picks = np.arange(size) if size <= n_entries else rng.choice(size, n_entries, replace=False)
    worst = 0.0
    g = grad.reshape(-1)
    for i in picks:
        fd = central_diff(f, arr, int(i), h)
        an = g[i]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
    return worst


def max_norm_rel_err(f, arr, grad, rng, n_entries=12, h=1e-5):
    """max |fd - analytic| over sampled entries, divided by max |analytic| of the tensor."""
    size = arr.size
    picks = np.arange(size) if size <= n_entries else rng.choice(size, n_entries, replace=False)
    g = grad.reshape(-1)
    worst = max(abs(central_diff(f, arr, int(i), h) - g[i]) for i in picks)
    return worst / max(np.abs(g).max(), 1e-300)


@pytest.fixture(scope="session")
def box_mesh():
    return meshes.box()


@pytest.fixture(scope="session")
def chain_mesh():
    return meshes.snake()


@pytest.fixture(scope="session")
def chain_table(chain_mesh):
    return geodesic_table(chain_mesh)


def pytest_terminal_summary(terminalreporter):
    from .verdicts import LINES
    if LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(LINES):
            terminalreporter.write_line(line)
