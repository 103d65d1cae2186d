"""Synthetic token life cycles with exact, replayable pool arithmetic."""
from __future__ import annotations

import hashlib
import logging
import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

from .config import DEFAULT_FEE, DEFAULT_LOCKERS, FACTORY_ADDRESS, WETH_ADDRESS, ZERO_ADDRESS
from .corpus import (
    ALLOWLIST_FILE,
    EVENTS_DIR,
    META_FILE,
    TRUTH_FILE,
    TokenMeta,
    write_allowlist,
    write_manifest,
    write_meta_jsonl,
    write_truth_csv,
)
from .errors import InvalidParams
from .events import EventRecord, make_event, write_fixture
from .labeling import (
    MALICIOUS,
    NON_MALICIOUS,
    RULE_ALLOWLIST,
    RULE_FAST_RUG_PULL,
    RULE_NO_BURN_PRICE_COLLAPSE,
    UNLABELED,
)
from .pool import swap_in_for_exact_out, swap_out_for_exact_in

log = logging.getLogger(__name__)

SCENARIOS = ("simple_rug_pull", "sell_rug_pull", "mint_trapdoor", "healthy", "inactive_benign")

LP_HOLD = "Hold"
LP_LOCK = "Lock"
LP_BURN = "Burn"

# Investor buys stop once the WETH reserve reaches this multiple of the
# seed amount; with the constant-product floor this bounds any benign
# price drop strictly below the collapse threshold.
BUY_CAP = 3


@dataclass(frozen=True)
class ChainConfig:
    """Block-level frame shared by every token in a batch."""

    horizon_block: int = 1_000_000
    creation_low: int = 100_000
    creation_high: int = 300_000
    fee: Fraction = DEFAULT_FEE
    locker: str = DEFAULT_LOCKERS[0]


def synth_address(namespace: str, index: int) -> str:
    digest = hashlib.sha256(f"rugwatch:{namespace}:{index}".encode()).digest()
    return "0x" + digest[:20].hex()


class TokenScript:
    """Emits one token's event stream while tracking exact pool state.

    Every Sync it writes is derived from the swap formulas, so replaying
    the Transfers against the reserves reproduces each Sync verbatim.
    """

    def __init__(self, index: int, decimals: int, fee: Fraction, locker: str):
        self.token = synth_address("token", index)
        self.pair = synth_address("pair", index)
        self.dev = synth_address("dev", index)
        self.locker = locker
        self.decimals = decimals
        self.fee = fee
        self.token_is_token0 = self.token < WETH_ADDRESS
        self.events: list[EventRecord] = []
        self.block = 0
        self._log_index = 0
        self.x = 0  # WETH reserve
        self.y = 0  # token reserve
        self.lp_supply = 0
        self.lp_holdings: dict[str, int] = {}
        self.token_balances: dict[str, int] = {}
        self.n_syncs = 0
        self.initial_weth = 0

    def investor(self, index: int, who: int) -> str:
        return synth_address(f"investor:{index}", who)

    def at(self, block: int) -> None:
        if block < self.block:
            raise InvalidParams("script blocks must not move backwards")
        if block != self.block:
            self.block = block
            self._log_index = 0

    def emit(self, emitter: str, kind: str, **args) -> None:
        self.events.append(make_event(self.block, self._log_index, emitter, kind, args))
        self._log_index += 1

    def _oriented(self, token_amount: int, weth_amount: int) -> tuple[int, int]:
        if self.token_is_token0:
            return token_amount, weth_amount
        return weth_amount, token_amount

    def _transfer_token(self, sender: str, receiver: str, amount: int) -> None:
        if sender != ZERO_ADDRESS:
            self.token_balances[sender] -= amount
        self.token_balances[receiver] = self.token_balances.get(receiver, 0) + amount
        self.emit(self.token, "Transfer", **{"from": sender, "to": receiver, "amount": amount})

    def _transfer_lp(self, sender: str, receiver: str, amount: int) -> None:
        if sender not in (ZERO_ADDRESS, self.pair):
            self.lp_holdings[sender] -= amount
        if receiver not in (ZERO_ADDRESS, self.pair):
            self.lp_holdings[receiver] = self.lp_holdings.get(receiver, 0) + amount
        self.emit(self.pair, "Transfer", **{"from": sender, "to": receiver, "amount": amount})

    def _sync(self) -> None:
        amount0, amount1 = self._oriented(self.y, self.x)
        self.emit(self.pair, "Sync", reserve0=amount0, reserve1=amount1)
        self.n_syncs += 1

    # ------------------------------------------------------- life cycle

    def genesis(self, supply: int) -> None:
        self._transfer_token(ZERO_ADDRESS, self.dev, supply)

    def create_pool(self) -> None:
        token0, token1 = sorted([self.token, WETH_ADDRESS])
        self.emit(FACTORY_ADDRESS, "PairCreated", token0=token0, token1=token1, pair=self.pair)

    def add_liquidity(self, provider: str, weth_amount: int, token_amount: int) -> None:
        self._transfer_token(provider, self.pair, token_amount)
        if self.lp_supply == 0:
            minted = math.isqrt(weth_amount * token_amount)
            self.initial_weth = weth_amount
        else:
            minted = min(
                weth_amount * self.lp_supply // self.x,
                token_amount * self.lp_supply // self.y,
            )
        self.x += weth_amount
        self.y += token_amount
        self._sync()
        amount0, amount1 = self._oriented(token_amount, weth_amount)
        self.emit(self.pair, "Mint", sender=provider, amount0=amount0, amount1=amount1)
        self.lp_supply += minted
        self._transfer_lp(ZERO_ADDRESS, provider, minted)

    def buy(self, investor: str, token_amount: int) -> bool:
        """Exact-out purchase; refused when it would blow the buy cap."""
        if token_amount < 1 or token_amount >= self.y:
            return False
        weth_in = swap_in_for_exact_out(self.x, self.y, token_amount, self.fee)
        if self.x + weth_in > BUY_CAP * self.initial_weth:
            return False
        self._transfer_token(self.pair, investor, token_amount)
        self.x += weth_in
        self.y -= token_amount
        self._sync()
        return True

    def sell(self, investor: str, token_amount: int) -> bool:
        if token_amount < 1 or self.token_balances.get(investor, 0) < token_amount:
            return False
        weth_out = swap_out_for_exact_in(token_amount, self.y, self.x, self.fee)
        if weth_out < 1:
            return False
        self._transfer_token(investor, self.pair, token_amount)
        self.x -= weth_out
        self.y += token_amount
        self._sync()
        return True

    def transfer(self, sender: str, receiver: str, amount: int) -> bool:
        if amount < 1 or self.token_balances.get(sender, 0) < amount:
            return False
        self._transfer_token(sender, receiver, amount)
        return True

    def lock_lp(self) -> None:
        amount = self.lp_holdings[self.dev]
        self._transfer_lp(self.dev, self.locker, amount)

    def burn_lp(self) -> None:
        amount = self.lp_holdings[self.dev]
        self._transfer_lp(self.dev, ZERO_ADDRESS, amount)

    def remove_all_liquidity(self) -> None:
        """Developer redeems the entire LP supply; reserves go to zero."""
        amount = self.lp_holdings[self.dev]
        if amount != self.lp_supply:
            raise InvalidParams("full removal requires the developer to hold all LP")
        self._transfer_lp(self.dev, self.pair, amount)
        self._transfer_lp(self.pair, ZERO_ADDRESS, amount)
        weth_out, token_out = self.x, self.y
        self._transfer_token(self.pair, self.dev, token_out)
        self.x = 0
        self.y = 0
        self.lp_supply = 0
        self._sync()
        amount0, amount1 = self._oriented(token_out, weth_out)
        self.emit(self.pair, "Burn", sender=self.dev, amount0=amount0, amount1=amount1, to=self.dev)

    def mint_tokens(self, amount: int) -> None:
        self._transfer_token(ZERO_ADDRESS, self.dev, amount)


@dataclass(frozen=True)
class GeneratedToken:
    token: str
    scenario: str
    events: list
    meta: TokenMeta
    expected_label: str
    expected_rule: str
    drop_block: int | None
    allowlisted: bool


def _weth_amount(rng: random.Random, low: float, high: float) -> int:
    scale = math.exp(rng.uniform(math.log(low), math.log(high)))
    return int(scale * 10**18)


def _gap(rng: random.Random, mean: float) -> int:
    return 1 + int(rng.expovariate(1.0 / mean))


def _trading_phase(script: TokenScript, rng: random.Random, index: int, n_trades: int, gap_mean: float) -> None:
    """Pre-maneuver retail flow: mostly buys, the odd partial sell."""
    investors = [script.investor(index, i) for i in range(rng.randint(3, 8))]
    for _ in range(n_trades):
        script.at(script.block + _gap(rng, gap_mean))
        who = rng.choice(investors)
        if rng.random() < 0.25 and script.token_balances.get(who, 0) > 1:
            script.sell(who, script.token_balances[who] // 2)
        else:
            script.buy(who, max(1, int(script.y * rng.uniform(0.01, 0.08))))


def _richest(script: TokenScript, investors: list[str]) -> tuple[int, str]:
    return max((script.token_balances.get(who, 0), who) for who in investors)


def _ensure_min_syncs(script: TokenScript, rng: random.Random, index: int, minimum: int) -> None:
    investors = [script.investor(index, i) for i in range(10)]
    attempts = 0
    while script.n_syncs < minimum:
        attempts += 1
        if attempts > 200:
            raise InvalidParams("could not reach the minimum sync count")
        script.at(script.block + rng.randint(20, 80))
        if script.buy(investors[attempts % len(investors)], max(1, script.y // 200)):
            continue
        balance, richest = _richest(script, investors)
        if balance > 1:
            script.sell(richest, balance // 2)


def generate_token(kind: str, index: int, seed: int, chain: ChainConfig) -> GeneratedToken:
    """Deterministically script one token's full event history."""
    if kind not in SCENARIOS:
        raise InvalidParams(f"unknown scenario {kind!r}")
    rng = random.Random(f"{seed}:token:{index}:{kind}")
    decimals = rng.choice([18] * 8 + [8, 6])
    script = TokenScript(index, decimals, chain.fee, chain.locker)
    supply = 1_000_000 * 10**decimals
    creation = rng.randint(chain.creation_low, chain.creation_high)
    malicious = kind in ("simple_rug_pull", "sell_rug_pull", "mint_trapdoor")
    token_pool_gap = rng.randint(0, 2_000) if malicious else rng.randint(2_000, 80_000)

    script.at(creation - token_pool_gap if creation > token_pool_gap else 0)
    genesis_block = script.block
    script.genesis(supply)
    script.at(creation)
    script.create_pool()

    expected_rule = ""
    drop_block: int | None = None
    allowlisted = False
    lp_action = LP_HOLD
    mintable = rng.random() < 0.1

    if kind == "simple_rug_pull":
        weth0 = _weth_amount(rng, 1, 20)
        script.add_liquidity(script.dev, weth0, supply)
        _trading_phase(script, rng, index, rng.randint(6, 14), gap_mean=rng.uniform(120, 600))
        _ensure_min_syncs(script, rng, index, 7)
        script.at(script.block + _gap(rng, 300))
        drop_block = script.block
        script.remove_all_liquidity()
        expected_label, expected_rule = MALICIOUS, RULE_FAST_RUG_PULL

    elif kind == "sell_rug_pull":
        retained_fraction = Fraction(rng.randint(700, 900), 1000)
        if retained_fraction <= 0:
            raise InvalidParams("sell rug pull requires retained supply")
        weth0 = _weth_amount(rng, 1, 20)
        pooled = int(supply * (1 - retained_fraction))
        script.add_liquidity(script.dev, weth0, pooled)
        lp_action = rng.choice([LP_LOCK, LP_BURN, LP_HOLD])
        if lp_action == LP_LOCK:
            script.at(script.block + rng.randint(1, 30))
            script.lock_lp()
        elif lp_action == LP_BURN:
            script.at(script.block + rng.randint(1, 30))
            script.burn_lp()
        _trading_phase(script, rng, index, rng.randint(6, 14), gap_mean=rng.uniform(120, 600))
        _ensure_min_syncs(script, rng, index, 7)
        script.at(script.block + _gap(rng, 300))
        drop_block = script.block
        script.sell(script.dev, script.token_balances[script.dev])
        expected_label, expected_rule = MALICIOUS, RULE_NO_BURN_PRICE_COLLAPSE

    elif kind == "mint_trapdoor":
        mintable = True
        weth0 = _weth_amount(rng, 1, 20)
        script.add_liquidity(script.dev, weth0, supply)
        lp_action = rng.choice([LP_LOCK, LP_HOLD])
        if lp_action == LP_LOCK:
            script.at(script.block + rng.randint(1, 30))
            script.lock_lp()
        _trading_phase(script, rng, index, rng.randint(6, 14), gap_mean=rng.uniform(120, 600))
        _ensure_min_syncs(script, rng, index, 7)
        script.at(script.block + _gap(rng, 300))
        minted = int(script.y * rng.uniform(3.0, 6.0))
        script.mint_tokens(minted)
        drop_block = script.block
        script.sell(script.dev, minted)
        expected_label, expected_rule = MALICIOUS, RULE_NO_BURN_PRICE_COLLAPSE

    elif kind == "healthy":
        weth0 = _weth_amount(rng, 3, 80)
        pooled = int(supply * rng.uniform(0.3, 0.8))
        script.add_liquidity(script.dev, weth0, pooled)
        _retail_flow(script, rng, index, until_block=chain.horizon_block - rng.randint(2_000, 6_000))
        _ensure_min_syncs(script, rng, index, 7)
        expected_label = NON_MALICIOUS
        expected_rule = RULE_ALLOWLIST
        allowlisted = True

    else:  # inactive_benign
        weth0 = _weth_amount(rng, 1, 40)
        pooled = int(supply * rng.uniform(0.3, 0.8))
        script.add_liquidity(script.dev, weth0, pooled)
        _retail_flow(script, rng, index, until_block=creation + rng.randint(20_000, 60_000))
        _ensure_min_syncs(script, rng, index, 7)
        expected_label = UNLABELED

    meta = TokenMeta(
        token=script.token,
        decimals=decimals,
        symbol=f"TK{index:04d}",
        creation_block=genesis_block,
        mintable=mintable,
        pausable=rng.random() < 0.1,
        locked=False,
        yield_flag=rng.random() < 0.05,
        lp_burned=(lp_action == LP_BURN),
    )
    return GeneratedToken(
        token=script.token,
        scenario=kind,
        events=script.events,
        meta=meta,
        expected_label=expected_label,
        expected_rule=expected_rule,
        drop_block=drop_block,
        allowlisted=allowlisted,
    )


def _retail_flow(script: TokenScript, rng: random.Random, index: int, until_block: int) -> None:
    """Organic mixed traffic: pool trades, gifts, occasional triangles,
    sometimes a second liquidity provider."""
    investors = [script.investor(index, i) for i in range(rng.randint(5, 10))]
    second_lp_pending = rng.random() < 0.6
    while script.block < until_block:
        script.at(min(script.block + _gap(rng, 2_500), until_block))
        action = rng.random()
        who = rng.choice(investors)
        if second_lp_pending and script.block > script.events[0].block + 10_000:
            second_lp_pending = False
            weth_extra = script.x // rng.randint(5, 10)
            token_extra = -(-weth_extra * script.y // script.x)  # proportional, rounded up
            if script.transfer(script.dev, who, token_extra):
                script.add_liquidity(who, weth_extra, token_extra)
                continue
        if action < 0.45:
            script.buy(who, max(1, int(script.y * rng.uniform(0.005, 0.05))))
        elif action < 0.75:
            held = script.token_balances.get(who, 0)
            if held > 1:
                script.sell(who, max(1, int(held * rng.uniform(0.3, 1.0))))
        elif action < 0.9:
            other = rng.choice([i for i in investors if i != who])
            held = script.token_balances.get(who, 0)
            if held > 2:
                script.transfer(who, other, max(1, held // 3))
        else:
            ring = rng.sample(investors, 3)
            amounts = [script.token_balances.get(a, 0) // 4 for a in ring]
            if all(a > 0 for a in amounts):
                for (sender, receiver), amount in zip(zip(ring, ring[1:] + ring[:1]), amounts):
                    script.transfer(sender, receiver, amount)
    # Keep the token visibly alive at the end of its window.
    script.at(until_block)
    if script.buy(investors[0], max(1, script.y // 500)):
        return
    balance, richest = _richest(script, investors)
    if balance > 1 and script.sell(richest, balance // 2):
        return
    script.transfer(script.dev, investors[0], 1)


def _truth_row(item: GeneratedToken) -> dict:
    return {
        "token": item.token,
        "scenario": item.scenario,
        "expected_label": item.expected_label,
        "expected_rule": item.expected_rule,
        "drop_block": "" if item.drop_block is None else item.drop_block,
    }


def _generate_one(args: tuple) -> GeneratedToken:
    kind, index, seed, chain = args
    return generate_token(kind, index, seed, chain)


def generate_batch(
    counts: dict[str, int],
    seed: int,
    out_dir: str,
    chain: ChainConfig | None = None,
    threads: int = 1,
) -> list[GeneratedToken]:
    """Write a corpus directory: per-token fixtures plus sidecar files."""
    chain = chain or ChainConfig()
    for kind, count in counts.items():
        if kind not in SCENARIOS:
            raise InvalidParams(f"unknown scenario {kind!r}")
        if count < 0:
            raise InvalidParams("scenario counts must be non-negative")
    jobs = []
    index = 0
    for kind in sorted(counts):
        for _ in range(counts[kind]):
            jobs.append((kind, index, seed, chain))
            index += 1
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            generated = list(pool.map(_generate_one, jobs))
    else:
        generated = [_generate_one(job) for job in jobs]

    os.makedirs(os.path.join(out_dir, EVENTS_DIR), exist_ok=True)
    for item in generated:
        write_fixture(os.path.join(out_dir, EVENTS_DIR, f"{item.token}.jsonl"), item.events)
    write_meta_jsonl([item.meta for item in generated], os.path.join(out_dir, META_FILE))
    write_allowlist([item.token for item in generated if item.allowlisted], os.path.join(out_dir, ALLOWLIST_FILE))
    write_truth_csv([_truth_row(item) for item in generated], os.path.join(out_dir, TRUTH_FILE))
    write_manifest(
        out_dir,
        "simulate",
        {
            "seed": seed,
            "counts": dict(sorted(counts.items())),
            "n_tokens": len(generated),
            "horizon_block": chain.horizon_block,
            "fee": str(chain.fee),
            "locker": chain.locker,
        },
    )
    log.info("generated %d tokens into %s", len(generated), out_dir)
    return generated
