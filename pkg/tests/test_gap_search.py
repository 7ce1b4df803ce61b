import itertools
import math

import numpy as np
import pytest

from imlab.gap_search import (check_abstract_gap, enumerate_levels, find_annulus, find_gap_2d, is_level,
                              level_info, richards_growth, shell_points)


def _sum_of_two_squares(n):
    """No prime 3 mod 4 divides n to an odd power."""
    p = 2
    while p * p <= n:
        e = 0
        while n % p == 0:
            n //= p
            e += 1
        if p % 4 == 3 and e % 2:
            return False
        p += 1
    return n % 4 != 3


def _brute_levels(dim, lam_max):
    r = math.isqrt(lam_max)
    counts = {}
    for j in itertools.product(range(-r, r + 1), repeat=dim):
        s = sum(x * x for x in j)
        if 0 < s <= lam_max:
            counts[s] = counts.get(s, 0) + 1
    return counts


def test_first_levels_2d():
    assert [r.level for r in enumerate_levels(2, 25)] == [1, 2, 4, 5, 8, 9, 10, 13, 16, 17, 18, 20, 25]


@pytest.mark.parametrize("dim,lam_max", [(2, 400), (3, 150)])
def test_multiplicities_match_brute_force(dim, lam_max):
    recs = enumerate_levels(dim, lam_max)
    brute = _brute_levels(dim, lam_max)
    assert [r.level for r in recs] == sorted(brute)
    total = 0
    for r in recs:
        assert r.multiplicity == brute[r.level] * (dim - 1)
        total += r.multiplicity
        assert r.mode_count == total
        assert r.gap == r.next_level - r.level >= 1


def test_sum_of_two_squares_criterion_up_to_1e4():
    levels = {r.level for r in enumerate_levels(2, 10**4)}
    assert levels == {n for n in range(1, 10**4 + 1) if _sum_of_two_squares(n)}


@pytest.mark.parametrize("lam,gap", [(5, 3), (20, 5)])
def test_known_gaps(lam, gap):
    assert level_info(2, lam).gap == gap
    assert all(not is_level(2, x) for x in range(lam + 1, lam + gap))


def test_find_gap_examples():
    rec = find_gap_2d(1)
    assert (rec.level, rec.gap, rec.mode_count) == (5, 3, 20)
    rec = find_gap_2d(2)
    assert (rec.level, rec.gap) == (20, 5)
    rec = find_gap_2d(0.4)
    assert (rec.level, rec.gap) == (1, 1)


def test_find_gap_mode_count_matches_lattice():
    # 4 + 4 + 4 + 8 lattice vectors with |j|^2 <= 5, one direction each
    assert sum(1 for j in itertools.product(range(-3, 4), repeat=2) if 0 < j[0] ** 2 + j[1] ** 2 <= 5) == 20


def test_find_gap_exhausted_is_falsy():
    out = find_gap_2d(50, lam_max=100)
    assert not out and out.exhausted
    with pytest.raises(ValueError):
        find_gap_2d(0)


def test_abstract_gap_direct_arithmetic():
    chk = check_abstract_gap(4, 9, 0.25, 1)
    lhs = (9**1.25 - 4**1.25) / (9**0.25 + 4**0.25)
    assert chk.lhs == pytest.approx(lhs, rel=1e-15)
    assert chk.passed == (lhs > 1)
    assert chk.margin == pytest.approx(lhs - 1)
    flat = check_abstract_gap(7, 7, 0.5, 1e-9)
    assert flat.lhs == 0 and not flat


@pytest.mark.parametrize("alpha", [0.1, 0.25, 0.75])
def test_abstract_gap_large_level_limit(alpha):
    # with gap exactly 2L the ratio tends to (1 + alpha) L by a first-order expansion
    L = 1.5
    lam = 1e9
    chk = check_abstract_gap(lam, lam + 2 * L, alpha, L)
    assert chk.lhs == pytest.approx((1 + alpha) * L, rel=1e-2)
    assert chk.asymptote == pytest.approx(2 * L / (1 + alpha))


def test_richards_growth_monotone():
    out = richards_growth(2, (10**2, 10**3, 10**4))
    gaps = out["max_gap"]
    assert gaps == sorted(gaps)
    assert out["c_fit"] > 0


def _independent_separation(points, b):
    bad = []
    for i in range(len(points)):
        for j in range(i + 1, len(points)):
            if np.sum((points[i] - points[j]) ** 2) < b * b:
                bad.append((i, j))
    return bad


def test_annulus_b1_is_first_nonempty_shell():
    cert = find_annulus(1, lam_start=1, search_budget=10)
    assert cert and cert.center == 1 and len(cert.points) > 0


def test_annulus_b3_reverified():
    cert = find_annulus(3, lam_start=1, search_budget=1000)
    assert cert
    lo, hi = cert.center - cert.k, cert.center + cert.k
    pts = shell_points(3, lo, hi)
    brute = np.array([j for j in itertools.product(range(-5, 6), repeat=3)
                      if lo <= sum(x * x for x in j) <= hi and any(j)])
    assert {tuple(p) for p in pts} == {tuple(p) for p in brute}
    assert _independent_separation(pts, 3) == []
    assert cert.min_separation >= 3


def test_annulus_vacuous_when_allowed():
    cert = find_annulus(5, lam_start=7, search_budget=1, c_hat=0.1, require_nonempty=False)
    assert cert.vacuous and cert.violating_pairs == ()
