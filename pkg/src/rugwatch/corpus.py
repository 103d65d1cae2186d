"""On-disk corpus layout: per-token fixtures, metadata sidecar, truth."""
from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass

from .errors import MissingMetadata, SchemaViolation
from .events import EventRecord, read_fixture

EVENTS_DIR = "events"
META_FILE = "token_meta.jsonl"
ALLOWLIST_FILE = "allowlist.txt"
TRUTH_FILE = "truth.csv"
TRUTH_CSV_FIELDS = ["token", "scenario", "expected_label", "expected_rule", "drop_block"]


@dataclass(frozen=True)
class TokenMeta:
    """Static facts about a token that events alone cannot provide."""

    token: str
    decimals: int
    symbol: str
    creation_block: int
    mintable: bool = False
    pausable: bool = False
    locked: bool = False
    yield_flag: bool = False
    lp_burned: bool = False

    def __post_init__(self):
        if not isinstance(self.decimals, int) or not 0 <= self.decimals <= 36:
            raise SchemaViolation(f"decimals out of range for {self.token}: {self.decimals!r}")
        if not isinstance(self.creation_block, int) or self.creation_block < 0:
            raise SchemaViolation(f"bad creation_block for {self.token}: {self.creation_block!r}")


def write_meta_jsonl(metas: list[TokenMeta], path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for meta in sorted(metas, key=lambda m: m.token):
            handle.write(json.dumps(asdict(meta), sort_keys=True, separators=(",", ":")) + "\n")


def read_meta_jsonl(path) -> dict[str, TokenMeta]:
    metas: dict[str, TokenMeta] = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                meta = TokenMeta(**{k: obj[k] for k in TokenMeta.__dataclass_fields__ if k in obj})
            except (json.JSONDecodeError, TypeError, KeyError) as exc:
                raise SchemaViolation(f"{path}:{lineno}: bad token metadata ({exc})") from None
            metas[meta.token.lower()] = meta
    return metas


def read_allowlist(path) -> frozenset[str]:
    if path is None or not os.path.exists(path):
        return frozenset()
    with open(path, "r", encoding="utf-8") as handle:
        return frozenset(line.strip().lower() for line in handle if line.strip())


def write_allowlist(tokens, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        for token in sorted(set(tokens)):
            handle.write(token + "\n")


def write_truth_csv(rows: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=TRUTH_CSV_FIELDS)
        writer.writeheader()
        for row in sorted(rows, key=lambda r: r["token"]):
            writer.writerow(row)


def read_truth_csv(path) -> list[dict]:
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(csv.DictReader(handle))
    for row in rows:
        row["drop_block"] = int(row["drop_block"]) if row["drop_block"] else None
    return rows


class Corpus:
    """A directory of per-token fixtures plus shared sidecar files."""

    def __init__(self, root: str):
        self.root = root
        meta_path = os.path.join(root, META_FILE)
        if not os.path.exists(meta_path):
            raise MissingMetadata(f"{meta_path} not found")
        self.metas = read_meta_jsonl(meta_path)
        self.allowlist = read_allowlist(os.path.join(root, ALLOWLIST_FILE))

    def tokens(self) -> list[str]:
        return sorted(self.metas)

    def events_path(self, token: str) -> str:
        return os.path.join(self.root, EVENTS_DIR, f"{token}.jsonl")

    def events(self, token: str) -> list[EventRecord]:
        return read_fixture(self.events_path(token))

    def truth(self) -> list[dict]:
        return read_truth_csv(os.path.join(self.root, TRUTH_FILE))


def write_manifest(out_dir: str, stage: str, payload: dict) -> None:
    """Record what a stage consumed and produced; every stage writes one."""
    body = {"stage": stage}
    body.update(payload)
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as handle:
        json.dump(body, handle, indent=2, sort_keys=True)
        handle.write("\n")
