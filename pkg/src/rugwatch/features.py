"""Leakage-free feature snapshots and dataset assembly."""
from __future__ import annotations

import csv
import logging
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from .config import (
    BLOCKS_PER_HOUR,
    DEFAULT_LOCKERS,
    PERIOD_BLOCKS,
    WETH_ADDRESS,
    WETH_DECIMALS,
    ZERO_ADDRESS,
)
from .corpus import Corpus, TokenMeta, write_manifest
from .distribution import BalanceMap, hhi, max_drop
from .errors import EmptyDistribution, InvalidParams, MissingMetadata, NoData, SpanTooShort
from .events import EventRecord
from .graphs import PeriodGraph, avg_clustering
from .labeling import MALICIOUS, NON_MALICIOUS, RULE_FAST_RUG_PULL, Thresholds
from .pool import PoolHistory, select_primary_pool

log = logging.getLogger(__name__)

# CSV column order; "yield" is a keyword, so the dataclass field differs.
FEATURE_COLUMNS = [
    "liq_curve", "tx_curve", "n_pool_syncs", "weth", "price", "liquidity",
    "lp_transfer", "mints", "burns", "n_transfers", "n_unique_addresses",
    "clus_coeff", "difference_token_pool", "lock", "yield", "burn",
    "label", "token", "eval_block",
]
ATTR_BY_COLUMN = {c: ("yield_flag" if c == "yield" else c) for c in FEATURE_COLUMNS}
TRAINABLE_FEATURES = FEATURE_COLUMNS[:-3]

EARLY_HOURS = 24
ACTIVITY_SAMPLES_NON_MALICIOUS = 5


@dataclass(frozen=True)
class FeatureVector:
    """Everything the model sees about one token at one eval block."""

    liq_curve: float | None
    tx_curve: float | None
    n_pool_syncs: int
    weth: float
    price: float | None
    liquidity: float
    lp_transfer: int
    mints: int
    burns: int
    n_transfers: int
    n_unique_addresses: int
    clus_coeff: float | None
    difference_token_pool: int
    lock: int
    yield_flag: int
    burn: int
    label: int  # 1 = non-malicious
    token: str
    eval_block: int


class TokenReplay:
    """Incremental fold of one token's event stream up to a moving cut.

    advance() may only move forward; every statistic a snapshot reports
    is a function of the events at or before the cut, so re-running on a
    truncated stream reproduces it exactly.
    """

    def __init__(
        self,
        token: str,
        events: list[EventRecord],
        meta: TokenMeta,
        numeraire: str = WETH_ADDRESS,
        lockers=DEFAULT_LOCKERS,
        period_blocks: int = PERIOD_BLOCKS,
    ):
        self.token = token.lower()
        self.meta = meta
        self.numeraire = numeraire.lower()
        self.lockers = tuple(a.lower() for a in lockers)
        self.period_blocks = period_blocks
        self._events = events
        self._pos = 0
        self._cut: int | None = None

        self.pools: dict[str, PoolHistory] = {}
        self.balances = BalanceMap()
        self.n_transfers = 0
        self.unique_addresses: set[str] = set()
        self.last_token_transfer_block: int | None = None
        self.timestamps: dict[int, int] = {}

        self._period_graphs: dict[int, PeriodGraph] = {}
        self._token_hhi_curve: dict[int, Fraction | None] = {}
        self._lp_hhi_curve: dict[str, dict[int, Fraction | None]] = {}
        self._acc_cache: dict[int, float] = {}
        self._first_period: int | None = None
        self._next_record_period: int | None = None

    # ------------------------------------------------------------ fold

    def advance(self, upto_block: int) -> None:
        """Consume events with block <= upto_block; forward-only."""
        if self._cut is not None and upto_block < self._cut:
            raise ValueError("replay cannot move backwards")
        while self._pos < len(self._events) and self._events[self._pos].block <= upto_block:
            ev = self._events[self._pos]
            self._record_completed_periods(before_block=ev.block)
            self._apply(ev)
            self._pos += 1
        self._record_completed_periods(before_block=upto_block + 1)
        self._cut = upto_block

    def _apply(self, ev: EventRecord) -> None:
        if ev.timestamp is not None:
            self.timestamps[ev.block] = ev.timestamp
        if self._next_record_period is None:
            self._first_period = ev.block // self.period_blocks
            self._next_record_period = self._first_period
        if ev.kind == "PairCreated":
            sides = {ev.args["token0"], ev.args["token1"]}
            if sides == {self.token, self.numeraire} and ev.args["pair"] not in self.pools:
                self.pools[ev.args["pair"]] = PoolHistory.from_pair_created(
                    ev, self.token, self.numeraire, self.meta.decimals, lockers=self.lockers
                )
            return
        if ev.emitter in self.pools:
            self.pools[ev.emitter].apply(ev)
            return
        if ev.emitter == self.token and ev.kind == "Transfer":
            sender, receiver = ev.args["from"], ev.args["to"]
            self.balances.apply_transfer(sender, receiver, ev.args["amount"])
            self.n_transfers += 1
            self.unique_addresses.add(sender)
            self.unique_addresses.add(receiver)
            self.last_token_transfer_block = ev.block
            period = ev.block // self.period_blocks
            graph = self._period_graphs.get(period)
            if graph is None:
                graph = self._period_graphs[period] = PeriodGraph(period)
            graph.add_transfer(sender, receiver, ev.args["amount"])

    def _period_end(self, period: int) -> int:
        return (period + 1) * self.period_blocks - 1

    def _record_completed_periods(self, before_block: int) -> None:
        if self._next_record_period is None:
            return
        while self._period_end(self._next_record_period) < before_block:
            period = self._next_record_period
            self._token_hhi_curve[period] = self._running_token_hhi()
            for pair, history in self.pools.items():
                self._lp_hhi_curve.setdefault(pair, {})[period] = _hhi_or_none(history.lp.balances)
            self._next_record_period = period + 1

    # ------------------------------------------------------- statistics

    def _running_token_hhi(self) -> Fraction | None:
        return _hhi_or_none(self.balances.balances, exclusions=set(self.pools))

    def primary_pool(self) -> PoolHistory | None:
        active = [h for h in self.pools.values()]
        if not active:
            return None
        return select_primary_pool(active)

    def last_activity_block(self) -> int | None:
        """Latest Transfer or Sync seen so far (both streams considered)."""
        last = self.last_token_transfer_block
        for history in self.pools.values():
            if history.points:
                sync_block = history.points[-1].block
                if last is None or sync_block > last:
                    last = sync_block
        return last

    def _completed_period(self, eval_block: int) -> int | None:
        period = (eval_block + 1) // self.period_blocks - 1
        if period < 0 or self._first_period is None or period < self._first_period:
            return None
        return period

    def _acc_of_period(self, period: int, completed: bool) -> float:
        if completed and period in self._acc_cache:
            return self._acc_cache[period]
        graph = self._period_graphs.get(period) or PeriodGraph(period)
        acc = avg_clustering(graph).acc
        if completed:
            self._acc_cache[period] = acc
        return acc

    def snapshot(self, eval_block: int, label: int) -> FeatureVector:
        """Features as of eval_block (inclusive).  Raises NoData before
        the first Sync."""
        self.advance(eval_block)
        primary = self.primary_pool()
        if primary is None or primary.n_syncs == 0:
            raise NoData(f"{self.token} has no pool activity at block {eval_block}")

        period = self._completed_period(eval_block)
        if period is not None:
            liq_curve = self._lp_hhi_curve.get(primary.pool.pair, {}).get(period)
            tx_curve = self._token_hhi_curve.get(period)
            clus = self._acc_of_period(period, completed=True)
        else:
            # The token has not finished a full period yet; fall back to
            # the running values at the cut.
            liq_curve = _hhi_or_none(primary.lp.balances)
            tx_curve = self._running_token_hhi()
            clus = self._acc_of_period(eval_block // self.period_blocks, completed=False)

        point = primary.points[-1]
        price = primary.last_defined_price
        return FeatureVector(
            liq_curve=None if liq_curve is None else float(liq_curve),
            tx_curve=None if tx_curve is None else float(tx_curve),
            n_pool_syncs=primary.n_syncs,
            weth=float(Fraction(point.reserve_weth, 10**WETH_DECIMALS)),
            price=None if price is None else float(price),
            liquidity=float(point.liquidity),
            lp_transfer=primary.n_lp_transfers,
            mints=primary.n_mints,
            burns=primary.n_burns,
            n_transfers=self.n_transfers,
            n_unique_addresses=len(self.unique_addresses),
            clus_coeff=clus,
            difference_token_pool=primary.creation_block - self.meta.creation_block,
            lock=int(primary.first_lock_block is not None or self.meta.locked),
            yield_flag=int(self.meta.yield_flag),
            burn=int(primary.first_lp_burn_block is not None),
            label=label,
            token=self.token,
            eval_block=eval_block,
        )


def _hhi_or_none(balances: dict[str, int], exclusions=()) -> Fraction | None:
    try:
        return hhi(balances, exclusions)
    except EmptyDistribution:
        return None


# --------------------------------------------------------------- plans


METHOD_ACTIVITY = "activity"
METHOD_EARLY24 = "early24"


@dataclass(frozen=True)
class EvalPlan:
    token: str
    label: int  # 1 = non-malicious
    eval_blocks: tuple[int, ...]
    method: str = METHOD_ACTIVITY


def _rng_for(seed: int, token: str, purpose: str) -> random.Random:
    return random.Random(f"{seed}:{purpose}:{token}")


def _label_fields(row) -> tuple[str, str, str]:
    """Accept label rows either as CSV dicts or as LabelRecord objects."""
    if isinstance(row, dict):
        return row["token"], row["label"], row["rule"]
    return row.token, row.label, row.rule


def _pre_drop_block(history: PoolHistory, rule: str, rng: random.Random) -> int:
    """Uniform block strictly after pool creation and strictly before the
    drop block of the series that triggered the label."""
    kind = "liquidity" if rule == RULE_FAST_RUG_PULL else "price"
    series = history.series(kind)
    stats = max_drop([value for _, value in series])
    drop_block = series[stats.h_index][0]
    low, high = history.creation_block + 1, drop_block - 1
    if high < low:
        raise SpanTooShort(f"no block strictly between creation {history.creation_block} and drop {drop_block}")
    return rng.randrange(low, high + 1)


def plan_activity(
    labels: list[dict],
    replays_at_horizon: dict[str, TokenReplay],
    seed: int,
    samples_non_malicious: int = ACTIVITY_SAMPLES_NON_MALICIOUS,
) -> list[EvalPlan]:
    """One pre-drop eval block per malicious token, several over each
    non-malicious token's activity span.  Tokens whose span cannot hold
    a sample are skipped with a warning."""
    plans = []
    for row in sorted(labels, key=lambda r: _label_fields(r)[0]):
        token, label, rule = _label_fields(row)
        if label not in (MALICIOUS, NON_MALICIOUS):
            continue
        replay = replays_at_horizon[token]
        primary = replay.primary_pool()
        if primary is None or primary.n_syncs == 0:
            log.warning("skipping %s: no pool activity", token)
            continue
        creation = primary.creation_block
        rng = _rng_for(seed, token, "activity")
        if label == MALICIOUS:
            try:
                block = _pre_drop_block(primary, rule, rng)
            except SpanTooShort as exc:
                log.warning("skipping %s: %s", token, exc)
                continue
            plans.append(EvalPlan(token, 0, (block,), METHOD_ACTIVITY))
        else:
            last = replay.last_activity_block()
            low, high = creation + 1, last if last is not None else creation
            if high < low:
                log.warning("skipping %s: no activity after pool creation", token)
                continue
            span = range(low, high + 1)
            count = min(samples_non_malicious, len(span))
            if count < samples_non_malicious:
                log.warning("%s: span of %d blocks holds only %d eval points", token, len(span), count)
            blocks = tuple(sorted(rng.sample(span, count)))
            plans.append(EvalPlan(token, 1, blocks, METHOD_ACTIVITY))
    return plans


def plan_early24(
    labels: list[dict],
    replays_at_horizon: dict[str, TokenReplay],
    blocks_per_hour: int = BLOCKS_PER_HOUR,
    hours: int = EARLY_HOURS,
) -> list[EvalPlan]:
    """Fixed eval grid: one block per hour after pool creation."""
    plans = []
    for row in sorted(labels, key=lambda r: _label_fields(r)[0]):
        token, label = _label_fields(row)[:2]
        if label not in (MALICIOUS, NON_MALICIOUS):
            continue
        replay = replays_at_horizon[token]
        primary = replay.primary_pool()
        if primary is None or primary.n_syncs == 0:
            log.warning("skipping %s: no pool activity", token)
            continue
        creation = primary.creation_block
        blocks = tuple(creation + k * blocks_per_hour for k in range(1, hours + 1))
        plans.append(EvalPlan(token, 0 if label == MALICIOUS else 1, blocks, METHOD_EARLY24))
    return plans


# --------------------------------------------------------------- build


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_feature_csv(rows: list[FeatureVector], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(FEATURE_COLUMNS)
        for row in sorted(rows, key=lambda r: (r.token, r.eval_block)):
            writer.writerow([_cell(getattr(row, ATTR_BY_COLUMN[col])) for col in FEATURE_COLUMNS])


def read_feature_csv(path) -> tuple[list[dict], list[str]]:
    """Rows as dicts keyed by CSV column, numerics parsed, '' -> None."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        columns = list(reader.fieldnames or [])
        rows = []
        for raw in reader:
            row: dict = {}
            for column in columns:
                value = raw[column]
                if column == "token":
                    row[column] = value
                elif column in ("label", "eval_block"):
                    row[column] = int(value)
                else:
                    row[column] = None if value == "" else float(value)
            rows.append(row)
    return rows, columns


def snapshot_token(
    token: str,
    events: list[EventRecord],
    meta: TokenMeta,
    plan: EvalPlan,
    numeraire: str = WETH_ADDRESS,
    lockers=DEFAULT_LOCKERS,
    period_blocks: int = PERIOD_BLOCKS,
) -> list[FeatureVector]:
    """Fresh replay of one token, snapshotted at the plan's eval blocks."""
    replay = TokenReplay(token, events, meta, numeraire, lockers, period_blocks)
    rows = []
    for eval_block in sorted(plan.eval_blocks):
        try:
            rows.append(replay.snapshot(eval_block, plan.label))
        except NoData:
            log.warning("%s: no data at eval block %d; row dropped", token, eval_block)
    return rows


def _snapshot_job(args) -> list[FeatureVector]:
    return snapshot_token(*args)


def build_dataset(
    method: str,
    plans: list[EvalPlan],
    corpus: Corpus,
    out_dir: str,
    seed: int,
    thresholds: Thresholds | None = None,
    numeraire: str = WETH_ADDRESS,
    lockers=DEFAULT_LOCKERS,
    period_blocks: int = PERIOD_BLOCKS,
    threads: int = 1,
    extra_manifest: dict | None = None,
) -> dict:
    """Snapshot every plan and emit the training CSVs plus a manifest.

    One `features.csv` for activity plans; `hour_01.csv` .. `hour_NN.csv`
    for hourly plans, each holding one row per token that had data by
    that hour.  Snapshots run per token, so `threads` never changes the
    emitted bytes.
    """
    if method not in (METHOD_ACTIVITY, METHOD_EARLY24):
        raise InvalidParams(f"unknown dataset method {method!r}")
    mismatched = sorted(plan.token for plan in plans if plan.method != method)
    if mismatched:
        raise InvalidParams(f"{len(mismatched)} plans were built for a different method")
    thresholds = thresholds if thresholds is not None else Thresholds()
    plans = sorted(plans, key=lambda plan: plan.token)
    jobs = []
    for plan in plans:
        meta = corpus.metas.get(plan.token)
        if meta is None:
            raise MissingMetadata(f"no metadata for planned token {plan.token}")
        jobs.append((plan.token, corpus.events(plan.token), meta, plan, numeraire, lockers, period_blocks))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_snapshot_job, jobs))
    else:
        results = [_snapshot_job(job) for job in jobs]
    all_rows = [row for rows in results for row in rows]

    os.makedirs(out_dir, exist_ok=True)
    if method == METHOD_ACTIVITY:
        write_feature_csv(all_rows, os.path.join(out_dir, "features.csv"))
    else:
        by_hour: dict[int, list[FeatureVector]] = {}
        for plan, rows in zip(plans, results):
            hour_of = {block: k for k, block in enumerate(sorted(plan.eval_blocks), start=1)}
            for row in rows:
                by_hour.setdefault(hour_of[row.eval_block], []).append(row)
        hours = max((len(plan.eval_blocks) for plan in plans), default=0)
        for k in range(1, hours + 1):
            write_feature_csv(by_hour.get(k, []), os.path.join(out_dir, f"hour_{k:02d}.csv"))

    manifest = {
        "seed": seed,
        "method": method,
        "thresholds": thresholds.as_dict(),
        "n_rows": len(all_rows),
        "n_malicious": sum(1 for row in all_rows if row.label == 0),
        "n_nonmalicious": sum(1 for row in all_rows if row.label == 1),
        "feature_names": list(TRAINABLE_FEATURES),
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    write_manifest(out_dir, "build-dataset", manifest)
    return manifest
