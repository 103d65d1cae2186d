"""Rule-based malicious/non-malicious labels for reconstructed tokens."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from fractions import Fraction

from .config import THETA_LIQUIDITY, THETA_PRICE, THETA_RECOVERY
from .distribution import DropStats, is_inactive, max_drop
from .pool import PoolHistory

log = logging.getLogger(__name__)

MALICIOUS = "Malicious"
NON_MALICIOUS = "NonMalicious"
UNLABELED = "Unlabeled"

RULE_FAST_RUG_PULL = "FastRugPull"
RULE_NO_BURN_PRICE_COLLAPSE = "NoBurnPriceCollapse"
RULE_ALLOWLIST = "Allowlist"

# A pool this quiet never traded; nothing below the cutoff is labeled.
MIN_SYNCS = 5

LABELS_CSV_FIELDS = [
    "token", "label", "rule",
    "liq_md", "liq_rc", "price_md", "price_rc",
    "inactive", "n_syncs", "burns",
]


@dataclass(frozen=True)
class Thresholds:
    """Cutoffs for the two malicious rules, as exact rationals."""

    liquidity_md: Fraction = THETA_LIQUIDITY
    price_md: Fraction = THETA_PRICE
    recovery: Fraction = THETA_RECOVERY

    def as_dict(self) -> dict:
        return {
            "liquidity_md": str(self.liquidity_md),
            "price_md": str(self.price_md),
            "recovery": str(self.recovery),
        }


@dataclass(frozen=True)
class LabelRecord:
    """One token's label plus the evidence the rules looked at."""

    token: str
    label: str
    rule: str
    liq_md: Fraction | None
    liq_rc: Fraction | None
    price_md: Fraction | None
    price_rc: Fraction | None
    inactive: bool
    n_syncs: int
    burns: int


def is_eligible(history: PoolHistory | None, decimals: int | None) -> bool:
    """Tokens must have known decimals, a numeraire pool, and real trading."""
    return history is not None and decimals is not None and history.n_syncs > MIN_SYNCS


def _series_stats(history: PoolHistory, kind: str) -> DropStats:
    series = history.series(kind)
    if not series:
        return DropStats(md=None, rc=None, h_index=0, l_index=0)
    return max_drop([value for _, value in series])


def label_token(
    token: str,
    history: PoolHistory,
    last_activity: int | None,
    horizon_block: int,
    thresholds: Thresholds = Thresholds(),
    allowlisted: bool = False,
    timestamps: dict[int, int] | None = None,
) -> LabelRecord:
    """Apply the labeling rules to one eligible token.

    The history must have been replayed from events at or before
    horizon_block only; nothing after the horizon may leak in.
    """
    liq = _series_stats(history, "liquidity")
    price = _series_stats(history, "price")
    inactive = is_inactive(last_activity, horizon_block, timestamps=timestamps)

    fast_rug = (
        inactive
        and liq.md is not None
        and liq.md >= thresholds.liquidity_md
        and liq.rc <= thresholds.recovery
    )
    no_burn_collapse = (
        inactive
        and history.n_burns == 0
        and price.md is not None
        and price.md >= thresholds.price_md
        and price.rc <= thresholds.recovery
    )

    if allowlisted:
        if fast_rug or no_burn_collapse:
            rule = RULE_FAST_RUG_PULL if fast_rug else RULE_NO_BURN_PRICE_COLLAPSE
            log.warning("token %s is allowlisted but matches %s; allowlist wins", token, rule)
        label, rule = NON_MALICIOUS, RULE_ALLOWLIST
    elif fast_rug:
        label, rule = MALICIOUS, RULE_FAST_RUG_PULL
    elif no_burn_collapse:
        label, rule = MALICIOUS, RULE_NO_BURN_PRICE_COLLAPSE
    else:
        label, rule = UNLABELED, ""

    return LabelRecord(
        token=token,
        label=label,
        rule=rule,
        liq_md=liq.md,
        liq_rc=liq.rc,
        price_md=price.md,
        price_rc=price.rc,
        inactive=inactive,
        n_syncs=history.n_syncs,
        burns=history.n_burns,
    )


def _record_fields(record) -> tuple:
    """Label evidence from either a LabelRecord or a parsed CSV row."""
    if isinstance(record, dict):
        return record["label"], record["rule"], record["liq_rc"], record["price_rc"]
    return record.label, record.rule, record.liq_rc, record.price_rc


def summarize(records: list) -> dict:
    """Label and rule counts plus recovery buckets for the malicious set."""
    by_label: dict[str, int] = {}
    by_rule: dict[str, int] = {}
    buckets = {"rc_zero": 0, "rc_below_threshold": 0, "rc_above_threshold": 0}
    threshold = Fraction(1, 100)
    for record in records:
        label, rule, liq_rc, price_rc = _record_fields(record)
        by_label[label] = by_label.get(label, 0) + 1
        if rule:
            by_rule[rule] = by_rule.get(rule, 0) + 1
        if label == MALICIOUS:
            rc = liq_rc if rule == RULE_FAST_RUG_PULL else price_rc
            if rc == 0:
                buckets["rc_zero"] += 1
            elif rc is not None and rc < threshold:
                buckets["rc_below_threshold"] += 1
            else:
                buckets["rc_above_threshold"] += 1
    total = len(records)
    malicious = by_label.get(MALICIOUS, 0)
    return {
        "n_tokens": total,
        "by_label": dict(sorted(by_label.items())),
        "by_rule": dict(sorted(by_rule.items())),
        "fraction_malicious": (malicious / total) if total else 0.0,
        "malicious_recovery_buckets": buckets,
    }


def _fraction_cell(value: Fraction | None) -> str:
    return "" if value is None else repr(float(value))


def write_labels_csv(records: list[LabelRecord], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=LABELS_CSV_FIELDS)
        writer.writeheader()
        for r in sorted(records, key=lambda rec: rec.token):
            writer.writerow(
                {
                    "token": r.token,
                    "label": r.label,
                    "rule": r.rule,
                    "liq_md": _fraction_cell(r.liq_md),
                    "liq_rc": _fraction_cell(r.liq_rc),
                    "price_md": _fraction_cell(r.price_md),
                    "price_rc": _fraction_cell(r.price_rc),
                    "inactive": int(r.inactive),
                    "n_syncs": r.n_syncs,
                    "burns": r.burns,
                }
            )


def read_labels_csv(path) -> list[dict]:
    """Labels as plain dicts; numeric evidence parsed to float or None."""
    rows = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        for row in csv.DictReader(handle):
            for key in ("liq_md", "liq_rc", "price_md", "price_rc"):
                row[key] = float(row[key]) if row[key] else None
            row["inactive"] = bool(int(row["inactive"]))
            row["n_syncs"] = int(row["n_syncs"])
            row["burns"] = int(row["burns"])
            rows.append(row)
    return rows
