"""Decoding of pair/token logs into a canonical ordered event stream."""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable

from .config import MAX_UINT256
from .errors import (
    MalformedData,
    OrderingViolation,
    SchemaViolation,
    UnknownSignature,
)

# keccak-256 of the event signatures, as they appear in topics[0].
TOPIC_PAIR_CREATED = "0x0d3648bd0f6ba80134a33ba9275ac585d9d315f0ad8355cddefde31afa28d0e9"
TOPIC_SYNC = "0x1c411e9a96e071241c2f21f7726b17ae89e3cab4c78be50e062b03a9fffbbad1"
TOPIC_MINT = "0x4c209b5fc8ad50758f13e2e1088ba56a560dff690a1c6fef26394f4c03821c4f"
TOPIC_BURN = "0xdccd412f0b1252819cb1fd330b93224ca42612892bb3f4f789976e6d81936496"
TOPIC_TRANSFER = "0xddf252ad1be2c89b69c2b068fc378daa952ba7f163c4a11628f55a4df523b3ef"

KIND_BY_TOPIC = {
    TOPIC_PAIR_CREATED: "PairCreated",
    TOPIC_SYNC: "Sync",
    TOPIC_MINT: "Mint",
    TOPIC_BURN: "Burn",
    TOPIC_TRANSFER: "Transfer",
}

# args layout per kind: (field name, "address" | "amount").
ARG_SPECS = {
    "PairCreated": (("token0", "address"), ("token1", "address"), ("pair", "address")),
    "Sync": (("reserve0", "amount"), ("reserve1", "amount")),
    "Mint": (("sender", "address"), ("amount0", "amount"), ("amount1", "amount")),
    "Burn": (("sender", "address"), ("amount0", "amount"), ("amount1", "amount"), ("to", "address")),
    "Transfer": (("from", "address"), ("to", "address"), ("amount", "amount")),
}


@dataclass(frozen=True)
class EventRecord:
    """One decoded log: what happened, where, and in which slot."""

    block: int
    log_index: int
    emitter: str
    kind: str
    args: dict
    timestamp: int | None = None  # block time, when the source carries it

    def sort_key(self) -> tuple[int, int, str]:
        return (self.block, self.log_index, self.emitter)


def parse_address(value: str) -> str:
    """Validate a 0x-prefixed 40-hex-digit address and lowercase it."""
    if not isinstance(value, str) or len(value) != 42 or not value.startswith("0x"):
        raise SchemaViolation(f"not an address: {value!r}")
    try:
        int(value[2:], 16)
    except ValueError:
        raise SchemaViolation(f"not an address: {value!r}") from None
    return value.lower()


def parse_amount(value) -> int:
    """Parse a decimal-string (or int) token amount into a checked uint256."""
    if isinstance(value, bool) or not isinstance(value, (str, int)):
        raise SchemaViolation(f"not an amount: {value!r}")
    try:
        amount = int(value)
    except ValueError:
        raise SchemaViolation(f"not an amount: {value!r}") from None
    if not 0 <= amount <= MAX_UINT256:
        raise SchemaViolation(f"amount out of uint256 range: {value!r}")
    return amount


def make_event(
    block: int,
    log_index: int,
    emitter: str,
    kind: str,
    args: dict,
    timestamp: int | None = None,
) -> EventRecord:
    """Build a validated EventRecord from already-split fields."""
    if isinstance(block, bool) or not isinstance(block, int) or block < 0:
        raise SchemaViolation(f"bad block number: {block!r}")
    if isinstance(log_index, bool) or not isinstance(log_index, int) or log_index < 0:
        raise SchemaViolation(f"bad log index: {log_index!r}")
    if timestamp is not None and (isinstance(timestamp, bool) or not isinstance(timestamp, int) or timestamp < 0):
        raise SchemaViolation(f"bad timestamp: {timestamp!r}")
    spec = ARG_SPECS.get(kind)
    if spec is None:
        raise SchemaViolation(f"unknown event kind: {kind!r}")
    if not isinstance(args, dict) or set(args) != {name for name, _ in spec}:
        raise SchemaViolation(f"{kind} args must be exactly {[n for n, _ in spec]}")
    clean = {}
    for name, typ in spec:
        raw = args[name]
        clean[name] = parse_address(raw) if typ == "address" else parse_amount(raw)
    return EventRecord(block, log_index, parse_address(emitter), kind, clean, timestamp)


def _hex_to_int(value) -> int:
    if isinstance(value, int):
        return value
    if isinstance(value, str):
        return int(value, 16)
    raise MalformedData(f"expected hex quantity, got {value!r}")


def _topic_address(topic: str) -> str:
    word = topic[2:] if topic.startswith("0x") else topic
    if len(word) != 64:
        raise MalformedData(f"topic is not a 32-byte word: {topic!r}")
    return parse_address("0x" + word[-40:])


def _data_words(data: str, expected: int) -> list[int]:
    body = data[2:] if data.startswith("0x") else data
    if len(body) != 64 * expected:
        raise MalformedData(f"expected {expected} data words, got {len(body) // 2} bytes")
    try:
        return [int(body[i * 64:(i + 1) * 64], 16) for i in range(expected)]
    except ValueError:
        raise MalformedData(f"non-hex data: {data!r}") from None


def decode_log(raw: dict) -> EventRecord:
    """Decode one raw JSON-RPC log into an EventRecord.

    Raises UnknownSignature for topics outside the five kinds handled
    here (callers skip those), MalformedData for logs that match a
    signature but carry the wrong shape.
    """
    topics = raw.get("topics") or []
    if not topics:
        raise UnknownSignature("log has no topics")
    kind = KIND_BY_TOPIC.get(str(topics[0]).lower())
    if kind is None:
        raise UnknownSignature(f"unrecognized topic0: {topics[0]}")
    emitter = raw.get("address")
    block = _hex_to_int(raw.get("blockNumber"))
    log_index = _hex_to_int(raw.get("logIndex"))
    data = raw.get("data", "0x")

    if kind == "PairCreated":
        if len(topics) != 3:
            raise MalformedData("PairCreated needs 2 indexed topics")
        words = _data_words(data, 2)  # pair address, running pair count
        args = {
            "token0": _topic_address(topics[1]),
            "token1": _topic_address(topics[2]),
            "pair": "0x" + format(words[0], "064x")[-40:],
        }
    elif kind == "Sync":
        if len(topics) != 1:
            raise MalformedData("Sync has no indexed topics")
        words = _data_words(data, 2)
        args = {"reserve0": words[0], "reserve1": words[1]}
    elif kind == "Mint":
        if len(topics) != 2:
            raise MalformedData("Mint needs 1 indexed topic")
        words = _data_words(data, 2)
        args = {"sender": _topic_address(topics[1]), "amount0": words[0], "amount1": words[1]}
    elif kind == "Burn":
        if len(topics) != 3:
            raise MalformedData("Burn needs 2 indexed topics")
        words = _data_words(data, 2)
        args = {
            "sender": _topic_address(topics[1]),
            "amount0": words[0],
            "amount1": words[1],
            "to": _topic_address(topics[2]),
        }
    else:  # Transfer
        if len(topics) != 3:
            raise MalformedData("Transfer needs 2 indexed topics")
        words = _data_words(data, 1)
        args = {"from": _topic_address(topics[1]), "to": _topic_address(topics[2]), "amount": words[0]}

    try:
        return make_event(block, log_index, emitter, kind, args)
    except SchemaViolation as exc:
        raise MalformedData(str(exc)) from None


def encode_log(event: EventRecord) -> dict:
    """Inverse of decode_log; used by tests and the stub RPC server."""
    def word(value: int) -> str:
        return format(value, "064x")

    def addr_topic(address: str) -> str:
        return "0x" + word(int(address, 16))

    args = event.args
    if event.kind == "PairCreated":
        topics = [TOPIC_PAIR_CREATED, addr_topic(args["token0"]), addr_topic(args["token1"])]
        data = "0x" + word(int(args["pair"], 16)) + word(1)
    elif event.kind == "Sync":
        topics = [TOPIC_SYNC]
        data = "0x" + word(args["reserve0"]) + word(args["reserve1"])
    elif event.kind == "Mint":
        topics = [TOPIC_MINT, addr_topic(args["sender"])]
        data = "0x" + word(args["amount0"]) + word(args["amount1"])
    elif event.kind == "Burn":
        topics = [TOPIC_BURN, addr_topic(args["sender"]), addr_topic(args["to"])]
        data = "0x" + word(args["amount0"]) + word(args["amount1"])
    elif event.kind == "Transfer":
        topics = [TOPIC_TRANSFER, addr_topic(args["from"]), addr_topic(args["to"])]
        data = "0x" + word(args["amount"])
    else:
        raise SchemaViolation(f"unknown event kind: {event.kind!r}")
    return {
        "address": event.emitter,
        "topics": topics,
        "data": data,
        "blockNumber": hex(event.block),
        "logIndex": hex(event.log_index),
    }


def event_to_json_obj(event: EventRecord) -> dict:
    """EventRecord as a plain JSON object with amounts as decimal strings."""
    spec = ARG_SPECS[event.kind]
    args = {
        name: (event.args[name] if typ == "address" else str(event.args[name]))
        for name, typ in spec
    }
    obj = {
        "block": event.block,
        "log_index": event.log_index,
        "emitter": event.emitter,
        "kind": event.kind,
        "args": args,
    }
    if event.timestamp is not None:
        obj["timestamp"] = event.timestamp
    return obj


def event_from_json_obj(obj: dict) -> EventRecord:
    if not isinstance(obj, dict):
        raise SchemaViolation("event line must be a JSON object")
    extra = set(obj) - {"block", "log_index", "emitter", "kind", "args", "timestamp"}
    if extra:
        raise SchemaViolation(f"unexpected keys: {sorted(extra)}")
    missing = {"block", "log_index", "emitter", "kind", "args"} - set(obj)
    if missing:
        raise SchemaViolation(f"missing keys: {sorted(missing)}")
    return make_event(
        obj["block"], obj["log_index"], obj["emitter"], obj["kind"], obj["args"],
        timestamp=obj.get("timestamp"),
    )


def dumps_event(event: EventRecord) -> str:
    """Canonical one-line JSON for an event (sorted keys, compact)."""
    return json.dumps(event_to_json_obj(event), sort_keys=True, separators=(",", ":"))


def sort_events(events: Iterable[EventRecord]) -> list[EventRecord]:
    """Sort a stream by (block, log_index) and reject duplicate slots."""
    ordered = sorted(events, key=EventRecord.sort_key)
    seen = set()
    for ev in ordered:
        key = ev.sort_key()
        if key in seen:
            raise OrderingViolation(f"duplicate event slot {key}")
        seen.add(key)
    return ordered


def read_fixture(path) -> list[EventRecord]:
    """Read a JSONL fixture into a sorted, deduplicated event stream."""
    records = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                records.append(event_from_json_obj(obj))
            except SchemaViolation as exc:
                raise SchemaViolation(f"{path}:{lineno}: {exc}") from None
    return sort_events(records)


def write_fixture(path, events: Iterable[EventRecord]) -> None:
    """Write an event stream as canonical JSONL (sorted, validated)."""
    ordered = sort_events(events)
    with open(path, "w", encoding="utf-8") as handle:
        for ev in ordered:
            handle.write(dumps_event(ev) + "\n")
