"""Stokes eigenvalue levels on the torus, spectral gap searches and annulus certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.spatial import cKDTree


@dataclass(frozen=True)
class GapRecord:
    level: int
    multiplicity: int
    next_level: int
    gap: int
    mode_count: int
    dim: int
    enumeration_bound: int

    def as_row(self) -> dict:
        return {"lambda": self.level, "multiplicity": self.multiplicity,
                "gap": self.gap, "N": self.mode_count}


@dataclass(frozen=True)
class SearchExhausted:
    """Returned instead of a result when nothing qualifies below the bound."""

    bound: float
    best: object
    exhausted: bool = True

    def __bool__(self):
        return False


@dataclass(frozen=True)
class GapCheck:
    passed: bool
    lhs: float
    margin: float
    gap_bound: float
    asymptote: float

    def __bool__(self):
        return self.passed


@dataclass(frozen=True)
class AnnulusCertificate:
    center: float
    k: float
    b: float
    points: np.ndarray = field(repr=False)
    min_separation: float | None
    violating_pairs: tuple = ()
    enumeration_bound: int = 0
    exhausted: bool = False

    @property
    def vacuous(self) -> bool:
        return len(self.points) == 0

    def to_dict(self) -> dict:
        return {"lambda": self.center, "k": self.k, "b": self.b,
                "points": len(self.points), "min_separation": self.min_separation,
                "violating_pairs": list(self.violating_pairs), "vacuous": self.vacuous,
                "enumeration_bound": self.enumeration_bound}


@lru_cache(maxsize=16)
def _representation_counts(dim: int, bound: int) -> np.ndarray:
    """counts[m] = #{j in Z^dim : |j|^2 = m} for 0 <= m <= bound."""
    r = math.isqrt(bound)
    one = np.zeros(bound + 1, dtype=np.int64)
    np.add.at(one, np.arange(-r, r + 1) ** 2, 1)
    counts = one.copy()
    squares = np.arange(r + 1) ** 2
    for _ in range(dim - 1):
        nxt = np.zeros_like(counts)
        for x, sq in enumerate(squares):
            mult = 1 if x == 0 else 2
            nxt[sq:] += mult * counts[:bound + 1 - sq]
        counts = nxt
    counts.setflags(write=False)
    return counts


def _safe_bound(lam_max: int) -> int:
    # (isqrt(x) + 1)^2 is always a level, so this bound sees the successor of every level <= lam_max
    return int(lam_max) + 2 * math.isqrt(int(lam_max)) + 3


def enumerate_levels(dim: int, lam_max: int) -> list[GapRecord]:
    """All achieved values of ``|j|^2`` up to ``lam_max`` with multiplicities and gaps."""
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    lam_max = int(math.floor(lam_max))
    if lam_max < 1:
        raise ValueError("lam_max must be at least 1")
    bound = _safe_bound(lam_max)
    counts = _representation_counts(dim, bound)
    levels = np.flatnonzero(counts[1:]) + 1
    mult = counts[levels] * (dim - 1)
    cum = np.cumsum(mult)
    nxt = levels[1:]
    out = []
    for i in range(np.searchsorted(levels, lam_max, side="right")):
        out.append(GapRecord(int(levels[i]), int(mult[i]), int(nxt[i]), int(nxt[i] - levels[i]),
                             int(cum[i]), dim, lam_max))
    return out


def is_level(dim: int, lam) -> bool:
    if lam != int(lam) or lam < 1:
        return False
    return bool(_representation_counts(dim, _safe_bound(int(lam)))[int(lam)] > 0)


def level_info(dim: int, lam: int) -> GapRecord:
    if not is_level(dim, lam):
        raise ValueError(f"{lam} is not an eigenvalue level in d={dim}")
    return enumerate_levels(dim, int(lam))[-1]


def find_gap_2d(L: float, lam_max: int = 10**5) -> GapRecord | SearchExhausted:
    """Smallest level with ``next - level > 2L``."""
    if not L > 0:
        raise ValueError("L must be positive")
    records = enumerate_levels(2, lam_max)
    for rec in records:
        if rec.gap > 2 * L:
            return rec
    return SearchExhausted(lam_max, max(records, key=lambda r: r.gap))


def check_abstract_gap(lam_n: float, lam_next: float, alpha: float, L: float) -> GapCheck:
    """Evaluate the fractional gap ratio against ``L``.

    Also returns the largest gap ``lam_next - lam_n`` for which the ratio would
    still equal ``L`` to first order (``gap_bound``), and the large-level limit
    ``2L / (1 + alpha)`` of the ratio when the gap is exactly ``2L``.
    """
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    if not 0 < lam_n <= lam_next:
        raise ValueError("need 0 < lam_n <= lam_next")
    a, b = lam_n**alpha, lam_next**alpha
    lhs = (lam_next ** (1 + alpha) - lam_n ** (1 + alpha)) / (a + b)
    gap_bound = (a + b) * L / ((1 + alpha) * a)
    return GapCheck(bool(lhs > L), float(lhs), float(lhs - L), float(gap_bound),
                    2 * L / (1 + alpha))


def richards_growth(dim: int = 2, bounds=(10**2, 10**3, 10**4, 10**5)) -> dict:
    """Largest gap among levels up to each bound, with ``c = min gap / log bound``."""
    records = enumerate_levels(dim, max(bounds))
    levels = np.array([r.level for r in records])
    gaps = np.array([r.gap for r in records])
    out = []
    for bnd in sorted(bounds):
        sel = levels <= bnd
        # the successor of the last level may lie beyond bnd; only count gaps inside
        inside = sel & (levels + gaps <= bnd)
        out.append(int(gaps[inside].max()))
    logs = np.log(np.asarray(sorted(bounds), dtype=float))
    ratios = np.asarray(out) / logs
    return {"bounds": sorted(bounds), "max_gap": out, "c_fit": float(ratios.min()),
            "c_lsq": float(np.dot(out, logs) / np.dot(logs, logs))}


def shell_points(dim: int, lo: float, hi: float) -> np.ndarray:
    """Lattice points with ``lo <= |j|^2 <= hi``, j != 0."""
    r = math.isqrt(int(math.floor(hi)))
    ax = np.arange(-r, r + 1)
    grid = np.stack(np.meshgrid(*([ax] * dim), indexing="ij"), axis=-1).reshape(-1, dim)
    sq = np.sum(grid**2, axis=1)
    keep = (sq >= lo) & (sq <= hi) & (sq > 0)
    return grid[keep]


def _certify(points: np.ndarray, b: float):
    if len(points) < 2:
        return None, ()
    tree = cKDTree(points)
    # integer squared distances: |j - l| < b  <=>  |j - l|^2 <= ceil(b^2) - 1
    reach = math.sqrt(math.ceil(b * b - 1e-12) - 1) + 1e-9
    bad = tuple(sorted(tree.query_pairs(reach))) if reach >= 1 else ()
    dist, _ = tree.query(points, k=2)
    return float(dist[:, 1].min()), bad


def find_annulus(b: float, lam_start: int = 1, search_budget: int = 1000, *,
                 c_hat: float = 0.1, dim: int = 3,
                 require_nonempty: bool = True) -> AnnulusCertificate | SearchExhausted:
    """First ``lam >= lam_start`` whose shell ``[lam - k, lam + k]``, ``k = c_hat log lam``,
    has all distinct lattice points at distance ``>= b``."""
    if b < 1:
        raise ValueError("b must be at least 1")
    best = None
    for lam in range(max(int(lam_start), 1), int(lam_start) + int(search_budget)):
        k = c_hat * math.log(lam)
        pts = shell_points(dim, lam - k, lam + k)
        if len(pts) == 0 and require_nonempty:
            continue
        sep, bad = _certify(pts, b)
        if not bad:
            return AnnulusCertificate(float(lam), k, float(b), pts, sep, (),
                                      math.isqrt(int(math.floor(lam + k))))
        if best is None or (sep or 0) > best[1]:
            best = (lam, sep)
    return SearchExhausted(int(lam_start) + int(search_budget) - 1,
                           {"lambda": best[0], "separation": best[1]} if best else None)
