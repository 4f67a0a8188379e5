"""Rank-correlation implementations against pair-enumeration oracles."""

import math
from itertools import combinations, permutations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from popbias.metrics import kendall_tau, spearman_rho


def oracle_spearman(xs, ys):
    """Pearson correlation of mean ranks, computed from first principles."""

    def ranks(values):
        out = [0.0] * len(values)
        ordered = sorted(range(len(values)), key=lambda i: values[i])
        i = 0
        while i < len(values):
            j = i
            while j + 1 < len(values) and values[ordered[j + 1]] == values[ordered[i]]:
                j += 1
            mean_rank = (i + j) / 2 + 1
            for idx in ordered[i : j + 1]:
                out[idx] = mean_rank
            i = j + 1
        return out

    rx, ry = ranks(xs), ranks(ys)
    mx = sum(rx) / len(rx)
    my = sum(ry) / len(ry)
    num = sum((a - mx) * (b - my) for a, b in zip(rx, ry))
    den = math.sqrt(sum((a - mx) ** 2 for a in rx) * sum((b - my) ** 2 for b in ry))
    return num / den


def oracle_kendall(xs, ys):
    """tau-b from explicit pair enumeration."""
    concordant = discordant = ties_x = ties_y = 0
    for (i, j) in combinations(range(len(xs)), 2):
        dx = xs[i] - xs[j]
        dy = ys[i] - ys[j]
        if dx == 0:
            ties_x += 1
        if dy == 0:
            ties_y += 1
        prod = dx * dy
        if prod > 0:
            concordant += 1
        elif prod < 0:
            discordant += 1
    n0 = len(xs) * (len(xs) - 1) / 2
    return (concordant - discordant) / math.sqrt((n0 - ties_x) * (n0 - ties_y))


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_all_permutations_match_oracles(n):
    xs = list(range(1, n + 1))
    for perm in permutations(xs):
        ys = list(perm)
        assert spearman_rho(xs, ys) == pytest.approx(oracle_spearman(xs, ys), abs=1e-12)
        assert kendall_tau(xs, ys) == pytest.approx(oracle_kendall(xs, ys), abs=1e-12)


def test_identical_and_reversed():
    xs = [1.0, 2.0, 3.0, 4.0]
    assert spearman_rho(xs, xs) == pytest.approx(1.0)
    assert kendall_tau(xs, xs) == pytest.approx(1.0)
    assert spearman_rho(xs, xs[::-1]) == pytest.approx(-1.0)
    assert kendall_tau(xs, xs[::-1]) == pytest.approx(-1.0)


def test_hand_computed_examples():
    # d^2 enumeration: 1 - 6*2/(3*8) = 0.5
    assert spearman_rho([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5)
    # 2 concordant, 1 discordant of 3 pairs
    assert kendall_tau([1, 2, 3], [1, 3, 2]) == pytest.approx(1 / 3)


def test_errors():
    with pytest.raises(ValueError, match="undefined correlation"):
        spearman_rho([1.0], [1.0])
    with pytest.raises(ValueError, match="undefined correlation"):
        spearman_rho([2.0, 2.0], [1.0, 3.0])
    with pytest.raises(ValueError, match="undefined correlation"):
        kendall_tau([5.0, 5.0], [1.0, 2.0])
    with pytest.raises(ValueError, match="equal length"):
        kendall_tau([1.0, 2.0], [1.0])


@given(
    st.lists(st.integers(0, 5), min_size=3, max_size=12),
    st.lists(st.integers(0, 5), min_size=3, max_size=12),
)
def test_ties_match_oracles(xs, ys):
    n = min(len(xs), len(ys))
    xs, ys = xs[:n], ys[:n]
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return
    assert spearman_rho(xs, ys) == pytest.approx(oracle_spearman(xs, ys), abs=1e-12)
    assert kendall_tau(xs, ys) == pytest.approx(oracle_kendall(xs, ys), abs=1e-12)


@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=3, max_size=10, unique=True))
def test_sign_agreement_on_strictly_monotone_pairs(xs):
    ys = sorted(xs)
    xs_sorted = sorted(xs)
    rho = spearman_rho(xs_sorted, ys)
    tau = kendall_tau(xs_sorted, ys)
    assert rho == pytest.approx(1.0)
    assert tau == pytest.approx(1.0)
    rho_rev = spearman_rho(xs_sorted, ys[::-1])
    tau_rev = kendall_tau(xs_sorted, ys[::-1])
    assert rho_rev == pytest.approx(-1.0)
    assert tau_rev == pytest.approx(-1.0)
