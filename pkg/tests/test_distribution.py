"""Concentration and drop statistics against hand values and brute force."""
from __future__ import annotations

import random
from fractions import Fraction

import pytest

from conftest import addr, ev
from rugwatch.distribution import (
    BalanceMap,
    DropStats,
    hhi,
    is_inactive,
    last_activity_block,
    max_drop,
    recovery,
)
from rugwatch.errors import EmptyDistribution, LedgerUnderflow

ZERO = addr(0)
PAIR = addr(0xAA)


def oracle_drop(series) -> DropStats:
    """The definition, evaluated naively: first global peak by scan, then
    first minimum of the suffix by scan."""
    h = 0
    for i in range(len(series)):
        if series[i] > series[h]:
            h = i
    l = h
    for i in range(h, len(series)):
        if series[i] < series[l]:
            l = i
    if series[h] == 0:
        return DropStats(None, None, h, l)
    md = Fraction(series[h] - series[l]) / Fraction(series[h])
    if series[h] == series[l]:
        rc = Fraction(0)
    else:
        rc = Fraction(series[-1] - series[l]) / Fraction(series[h] - series[l])
        rc = min(max(rc, Fraction(0)), Fraction(1))
    return DropStats(md, rc, h, l)


# ---------------------------------------------------------------- hhi


def test_hhi_monopoly_is_one():
    assert hhi({addr(1): 77}) == 1


def test_hhi_equal_holders_is_one_over_n():
    for n in (2, 3, 10, 64):
        balances = {addr(i + 1): 5 for i in range(n)}
        assert hhi(balances) == Fraction(1, n)


def test_hhi_three_one_split():
    assert hhi({addr(1): 3, addr(2): 1}) == Fraction(10, 16)


def test_hhi_is_scale_invariant_exactly():
    rng = random.Random(0x44)
    for _ in range(200):
        balances = {addr(i + 1): rng.randrange(1, 10**9) for i in range(rng.randrange(1, 12))}
        scaled = {a: b * 999_983 for a, b in balances.items()}
        assert hhi(balances) == hhi(scaled)


def test_hhi_respects_exclusions():
    balances = {addr(1): 3, addr(2): 1, PAIR: 10**18, ZERO: 5}
    assert hhi(balances, exclusions={PAIR, ZERO}) == Fraction(10, 16)


def test_hhi_empty_after_exclusions_raises():
    with pytest.raises(EmptyDistribution):
        hhi({PAIR: 5}, exclusions={PAIR})
    with pytest.raises(EmptyDistribution):
        hhi({})
    with pytest.raises(EmptyDistribution):
        hhi({addr(1): 0})


def test_hhi_merging_two_holders_never_decreases_concentration():
    rng = random.Random(0x45)
    for _ in range(200):
        n = rng.randrange(2, 10)
        balances = {addr(i + 1): rng.randrange(1, 10**6) for i in range(n)}
        merged = dict(balances)
        a, b = addr(1), addr(2)
        merged[a] = merged[a] + merged.pop(b)
        assert hhi(merged) >= hhi(balances)


def test_balance_map_folds_mints_moves_and_burns():
    balances = BalanceMap()
    balances.apply_event(ev(1, 0, addr(0xBB), "Transfer", **{"from": ZERO, "to": addr(1), "amount": 10}))
    balances.apply_event(ev(2, 0, addr(0xBB), "Transfer", **{"from": addr(1), "to": addr(2), "amount": 4}))
    balances.apply_event(ev(3, 0, addr(0xBB), "Transfer", **{"from": addr(2), "to": ZERO, "amount": 1}))
    assert balances.balances == {addr(1): 6, addr(2): 3}
    with pytest.raises(LedgerUnderflow):
        balances.apply_transfer(addr(2), addr(1), 99)


# ----------------------------------------------------------- max_drop


def test_max_drop_frozen_example():
    stats = max_drop([1, 2, 4, 1, 2])
    assert stats.md == Fraction(3, 4)
    assert (stats.h_index, stats.l_index) == (2, 3)
    assert stats.rc == Fraction(2 - 1, 4 - 1)


def test_max_drop_monotone_series_is_zero():
    stats = max_drop([1, 2, 3, 4])
    assert stats.md == 0
    assert stats.rc == 0  # flat peak-to-valley stretch


def test_max_drop_terminal_collapse():
    stats = max_drop([5, 0, 0])
    assert stats.md == 1
    assert stats.rc == 0
    assert (stats.h_index, stats.l_index) == (0, 1)


def test_max_drop_all_zero_series_is_undefined():
    stats = max_drop([0, 0, 0])
    assert stats.md is None
    assert stats.rc is None


def test_max_drop_empty_series_rejected():
    with pytest.raises(ValueError):
        max_drop([])


def test_max_drop_first_occurrence_tie_breaks():
    stats = max_drop([4, 1, 4, 1])
    assert stats.h_index == 0
    assert stats.l_index == 1


def test_full_recovery_reaches_one():
    stats = max_drop([4, 1, 4])
    assert stats.md == Fraction(3, 4)
    assert stats.rc == 1


def test_recovery_is_capped_at_one():
    # l sits mid-series and the tail climbs past every intermediate value.
    assert recovery([10, 2, 10], 0, 1) == 1


def test_max_drop_and_recovery_match_oracle_on_random_series():
    rng = random.Random(0x77)
    for _ in range(300):
        n = rng.randrange(1, 60)
        if rng.random() < 0.5:
            series = [rng.randrange(0, 50) for _ in range(n)]
        else:
            series = [Fraction(rng.randrange(0, 400), rng.randrange(1, 40)) for _ in range(n)]
        expected = oracle_drop(series)
        got = max_drop(series)
        assert got == expected


def test_appending_a_new_minimum_never_decreases_md():
    rng = random.Random(0x78)
    for _ in range(200):
        series = [rng.randrange(1, 100) for _ in range(rng.randrange(2, 30))]
        before = max_drop(series)
        lower = min(series) - rng.randrange(0, min(series))
        after = max_drop(series + [lower])
        if before.md is not None:
            assert after.md >= before.md


# ---------------------------------------------------------- inactivity


def test_inactivity_thirty_one_days_of_silence():
    horizon = 1_000_000
    blocks_31_days = (31 * 86_400) // 13 + 1
    assert is_inactive(horizon - blocks_31_days, horizon) is True


def test_activity_one_day_before_horizon():
    horizon = 1_000_000
    blocks_1_day = 86_400 // 13
    assert is_inactive(horizon - blocks_1_day, horizon) is False


def test_inactivity_of_token_with_no_events_at_all():
    assert is_inactive(None, 500) is True


def test_inactivity_uses_real_timestamps_when_present():
    horizon = 1_000_000
    last = horizon - 10  # a 10-block gap, but timestamps say 40 days
    stamps = {last: 0, horizon: 40 * 86_400}
    assert is_inactive(last, horizon, timestamps=stamps) is True
    assert is_inactive(last, horizon) is False


def test_last_activity_block_respects_horizon():
    assert last_activity_block([5, 80, 40], horizon_block=50) == 40
    assert last_activity_block([60, 80], horizon_block=50) is None
    assert last_activity_block([], horizon_block=50) is None
