"""Balance concentration and drop/recovery statistics over series."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .config import INACTIVITY_DAYS, SECONDS_PER_BLOCK, SECONDS_PER_DAY, ZERO_ADDRESS
from .errors import EmptyDistribution, LedgerUnderflow
from .events import EventRecord


class BalanceMap:
    """Token holdings folded from Transfer events.

    The zero address acts as the mint/burn source and is never tracked
    as a holder; everyone else (the pool included) is.
    """

    def __init__(self):
        self.balances: dict[str, int] = {}

    def apply_transfer(self, sender: str, receiver: str, amount: int) -> None:
        if sender != ZERO_ADDRESS:
            held = self.balances.get(sender, 0)
            if held < amount:
                raise LedgerUnderflow(f"{sender} holds {held}, tried to move {amount}")
            if held == amount:
                self.balances.pop(sender)
            else:
                self.balances[sender] = held - amount
        if receiver != ZERO_ADDRESS:
            self.balances[receiver] = self.balances.get(receiver, 0) + amount

    def apply_event(self, ev: EventRecord) -> None:
        if ev.kind != "Transfer":
            raise ValueError(f"balance maps fold Transfers only, got {ev.kind}")
        self.apply_transfer(ev.args["from"], ev.args["to"], ev.args["amount"])


def hhi(balances: dict[str, int], exclusions: Iterable[str] = ()) -> Fraction:
    """Concentration of a balance map: sum of squared holding shares.

    1 for a monopoly, 1/n for n equal holders.  Exact rational so
    threshold and invariance checks are not float-sensitive.
    """
    excluded = set(exclusions)
    total = 0
    square_sum = 0
    for address, balance in balances.items():
        if address in excluded or balance == 0:
            continue
        total += balance
        square_sum += balance * balance
    if total == 0:
        raise EmptyDistribution("all balances are zero after exclusions")
    return Fraction(square_sum, total * total)


@dataclass(frozen=True)
class DropStats:
    """Largest peak-to-valley drop of a series and what came after.

    md is None when the series never leaves zero (no peak to drop from).
    """

    md: Fraction | None
    rc: Fraction | None
    h_index: int
    l_index: int


def max_drop(series: Sequence) -> DropStats:
    """Relative fall from the series' global peak to the low that follows it.

    The peak is the first occurrence of the global maximum; the valley
    is the first occurrence of the minimum at or after the peak.
    """
    if not series:
        raise ValueError("series must be non-empty")
    h = 0
    for i, value in enumerate(series):
        if value > series[h]:
            h = i
    l = h
    for i in range(h, len(series)):
        if series[i] < series[l]:
            l = i
    peak = series[h]
    if peak == 0:
        return DropStats(md=None, rc=None, h_index=h, l_index=l)
    md = Fraction(peak - series[l], peak)
    return DropStats(md=md, rc=recovery(series, h, l), h_index=h, l_index=l)


def recovery(series: Sequence, h_index: int, l_index: int) -> Fraction:
    """How far the series climbed back from the valley, clamped to [0, 1].

    0 for a flat peak-to-valley stretch (nothing was lost, nothing
    regained) and 1 when the final value is back at the peak.
    """
    peak, valley, last = series[h_index], series[l_index], series[-1]
    if peak == valley:
        return Fraction(0)
    rc = Fraction(last - valley) / Fraction(peak - valley)
    return min(max(rc, Fraction(0)), Fraction(1))


def last_activity_block(blocks: Iterable[int], horizon_block: int) -> int | None:
    """Latest block <= horizon among the given event blocks, if any."""
    last = None
    for block in blocks:
        if block <= horizon_block and (last is None or block > last):
            last = block
    return last


def is_inactive(
    last_block: int | None,
    horizon_block: int,
    window_days: int = INACTIVITY_DAYS,
    seconds_per_block: int = SECONDS_PER_BLOCK,
    timestamps: dict[int, int] | None = None,
) -> bool:
    """True when the trailing window before the horizon saw no activity.

    Converts the block gap to seconds at a fixed block time unless real
    timestamps cover both endpoints.
    """
    if last_block is None:
        return True
    if last_block > horizon_block:
        raise ValueError("last activity is beyond the horizon")
    if timestamps and last_block in timestamps and horizon_block in timestamps:
        gap_seconds = timestamps[horizon_block] - timestamps[last_block]
    else:
        gap_seconds = (horizon_block - last_block) * seconds_per_block
    return gap_seconds > window_days * SECONDS_PER_DAY
