import numpy as np
import pytest

from imlab.spectral_field import GridSpec, random_field


@pytest.fixture(scope="session")
def grid2():
    return GridSpec(2, 8)


@pytest.fixture(scope="session")
def grid3():
    return GridSpec(3, 6)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def lattice(dim, bound):
    """All nonzero integer vectors with max-norm <= bound, by explicit loops."""
    import itertools

    return [j for j in itertools.product(range(-bound, bound + 1), repeat=dim) if any(j)]


def field_pair(grid, seed, s0=2.0):
    return random_field(grid, seed, s0), random_field(grid, seed + 1000, s0)


def convolution_oracle(grid, a, b):
    """Leray-projected ``(a . grad) b`` by direct summation over mode pairs.

    Output is kept on modes with max-norm <= the dealiasing cut, matching the
    pseudo-spectral product. Vectorised over the second factor only.
    """
    from imlab.spectral_field import grid_tables

    t = grid_tables(grid)
    d, n, K = grid.dim, grid.n, grid.dealias_cut
    k = t.k.reshape(d, -1).T
    af, bf = a.reshape(d, -1).T, b.reshape(d, -1).T
    ia = np.flatnonzero(np.any(af != 0, axis=1))
    ib = np.flatnonzero(np.any(bf != 0, axis=1))
    kq, bq = k[ib], bf[ib]
    out = np.zeros((n**d, d), dtype=complex)
    strides = n ** np.arange(d - 1, -1, -1)
    for p in ia:
        s = k[p] + kq
        keep = np.any(s != 0, axis=1) & (np.abs(s).max(axis=1) <= K)
        terms = 1j * (kq[keep] @ af[p])[:, None] * bq[keep]
        np.add.at(out, (s[keep] % n) @ strides, terms)
    ks = k.astype(float)
    sq = np.where(np.sum(ks**2, axis=1) > 0, np.sum(ks**2, axis=1), 1.0)
    out -= ks * (np.sum(ks * out, axis=1) / sq)[:, None]
    return out.T.reshape(a.shape)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[key])
