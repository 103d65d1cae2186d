"""Constant-product pool reconstruction from a decoded event stream."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable

from .config import WETH_DECIMALS, ZERO_ADDRESS
from .errors import (
    EmptyHistory,
    InsufficientLiquidity,
    LedgerUnderflow,
    OrientationUnknown,
    RugwatchError,
)
from .events import EventRecord

SERIES_CSV_FIELDS = ["block", "price_num", "price_den", "liquidity_num", "liquidity_den"]


def _ceil_div(num: int, den: int) -> int:
    return -(-num // den)


def swap_in_for_exact_out(x: int, y: int, dy: int, fee: Fraction) -> int:
    """Smallest input amount that buys exactly dy out of a pool (x, y).

    x is the input-side reserve, y the output side.  Rounds up so the
    pool never loses value: (x + (1-fee)*dx) * (y - dy) >= x*y holds for
    the returned dx and fails for dx - 1.
    """
    fee = Fraction(fee)
    if x <= 0 or y <= 0:
        raise ValueError("reserves must be positive")
    if dy <= 0:
        raise ValueError("output amount must be positive")
    if dy >= y:
        raise InsufficientLiquidity(f"cannot withdraw {dy} from a reserve of {y}")
    if not 0 <= fee < 1:
        raise ValueError("fee must be in [0, 1)")
    keep = 1 - fee  # fraction of the input that reaches the reserves
    # dx >= x*dy / (keep * (y - dy)), taken at the smallest integer.
    num = x * dy * keep.denominator
    den = keep.numerator * (y - dy)
    return _ceil_div(num, den)


def swap_out_for_exact_in(dx: int, reserve_in: int, reserve_out: int, fee: Fraction) -> int:
    """Output granted for an exact input of dx; rounds down (pool-favoring)."""
    fee = Fraction(fee)
    if reserve_in <= 0 or reserve_out <= 0:
        raise ValueError("reserves must be positive")
    if dx <= 0:
        raise ValueError("input amount must be positive")
    if not 0 <= fee < 1:
        raise ValueError("fee must be in [0, 1)")
    keep = 1 - fee
    num = keep.numerator * dx * reserve_out
    den = keep.denominator * reserve_in + keep.numerator * dx
    return num // den


@dataclass(frozen=True)
class PoolId:
    """Identity of one token/WETH pair."""

    pair: str
    token: str
    numeraire: str
    token_is_token0: bool


@dataclass(frozen=True)
class ReservePoint:
    """Reserves after one Sync, with derived price and liquidity."""

    block: int
    log_index: int
    reserve_token: int
    reserve_weth: int
    price: Fraction | None  # WETH per whole token; None while token side is empty
    liquidity: Fraction  # both pool sides valued in WETH


class LpLedger:
    """Holder balances of a pool's LP token, folded from Transfers.

    The zero address and the pair itself are custody, not holders:
    transfers crossing the custody boundary change total supply, moves
    inside it are no-ops.
    """

    def __init__(self, pair: str):
        self._custody = {ZERO_ADDRESS, pair}
        self.balances: dict[str, int] = {}
        self.total_supply = 0

    def apply_transfer(self, sender: str, receiver: str, amount: int) -> None:
        from_custody = sender in self._custody
        to_custody = receiver in self._custody
        if from_custody and to_custody:
            return
        if not from_custody:
            held = self.balances.get(sender, 0)
            if held < amount:
                raise LedgerUnderflow(f"{sender} holds {held} LP, tried to move {amount}")
            if held == amount:
                self.balances.pop(sender)
            else:
                self.balances[sender] = held - amount
        else:
            self.total_supply += amount
        if not to_custody:
            self.balances[receiver] = self.balances.get(receiver, 0) + amount
        else:
            self.total_supply -= amount


@dataclass
class PoolHistory:
    """Append-only replay of one pool's event stream."""

    pool: PoolId
    decimals: int
    creation_block: int
    lockers: frozenset[str] = frozenset()
    points: list[ReservePoint] = field(default_factory=list)
    n_syncs: int = 0
    n_mints: int = 0
    n_burns: int = 0
    n_lp_transfers: int = 0
    first_lock_block: int | None = None
    first_lp_burn_block: int | None = None
    last_pool_event_block: int | None = None
    last_defined_price: Fraction | None = None

    def __post_init__(self):
        self.lp = LpLedger(self.pool.pair)

    @classmethod
    def from_pair_created(
        cls,
        ev: EventRecord,
        token: str,
        numeraire: str,
        decimals: int,
        lockers: Iterable[str] = (),
    ) -> "PoolHistory":
        if ev.kind != "PairCreated":
            raise OrientationUnknown(f"pool history must start at PairCreated, got {ev.kind}")
        token0, token1 = ev.args["token0"], ev.args["token1"]
        if {token0, token1} != {token, numeraire}:
            raise OrientationUnknown(f"pair {ev.args['pair']} is not a {token}/{numeraire} pool")
        pool = PoolId(ev.args["pair"], token, numeraire, token_is_token0=(token0 == token))
        return cls(pool, decimals, ev.block, lockers=frozenset(a.lower() for a in lockers))

    def apply(self, ev: EventRecord) -> None:
        """Fold one pool-emitted event into the reconstruction."""
        if ev.emitter != self.pool.pair:
            raise RugwatchError(f"event from {ev.emitter} does not belong to pool {self.pool.pair}")
        self.last_pool_event_block = ev.block
        if ev.kind == "Sync":
            if self.pool.token_is_token0:
                reserve_token, reserve_weth = ev.args["reserve0"], ev.args["reserve1"]
            else:
                reserve_token, reserve_weth = ev.args["reserve1"], ev.args["reserve0"]
            price = None
            if reserve_token > 0:
                price = Fraction(reserve_weth * 10**self.decimals, reserve_token * 10**WETH_DECIMALS)
                self.last_defined_price = price
            liquidity = Fraction(2 * reserve_weth, 10**WETH_DECIMALS)
            self.points.append(
                ReservePoint(ev.block, ev.log_index, reserve_token, reserve_weth, price, liquidity)
            )
            self.n_syncs += 1
        elif ev.kind == "Mint":
            self.n_mints += 1
        elif ev.kind == "Burn":
            self.n_burns += 1
        elif ev.kind == "Transfer":
            self.lp.apply_transfer(ev.args["from"], ev.args["to"], ev.args["amount"])
            self.n_lp_transfers += 1
            if ev.args["to"] in self.lockers and self.first_lock_block is None:
                self.first_lock_block = ev.block
            if ev.args["to"] == ZERO_ADDRESS and self.first_lp_burn_block is None:
                self.first_lp_burn_block = ev.block
        else:
            raise RugwatchError(f"unexpected pool event kind {ev.kind}")

    def series(self, kind: str) -> list[tuple[int, Fraction]]:
        """(block, value) per Sync; undefined prices carry the last defined one."""
        if not self.points:
            raise EmptyHistory(f"no Sync events for pool {self.pool.pair}")
        if kind == "liquidity":
            return [(p.block, p.liquidity) for p in self.points]
        if kind != "price":
            raise ValueError(f"unknown series kind {kind!r}")
        out: list[tuple[int, Fraction]] = []
        last: Fraction | None = None
        for p in self.points:
            value = p.price if p.price is not None else last
            if value is None:
                continue  # no defined price yet; omit the leading points
            out.append((p.block, value))
            last = value
        return out

    def write_series_csv(self, path) -> None:
        """Per-Sync price/liquidity as exact rationals, one row per Sync."""
        if not self.points:
            raise EmptyHistory(f"no Sync events for pool {self.pool.pair}")
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(SERIES_CSV_FIELDS)
            last: Fraction | None = None
            for p in self.points:
                price = p.price if p.price is not None else last
                last = price
                writer.writerow(
                    [
                        p.block,
                        "" if price is None else price.numerator,
                        "" if price is None else price.denominator,
                        p.liquidity.numerator,
                        p.liquidity.denominator,
                    ]
                )


def select_primary_pool(histories: Iterable[PoolHistory]) -> PoolHistory:
    """The pool carrying a token's activity: most Syncs, ties by address."""
    candidates = sorted(histories, key=lambda h: (-h.n_syncs, h.pool.pair))
    if not candidates:
        raise EmptyHistory("token has no pools")
    return candidates[0]
