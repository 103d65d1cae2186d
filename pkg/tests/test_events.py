"""Decoder and fixture round-trip behaviour."""
from __future__ import annotations

import json
import random

import pytest

from conftest import addr, ev
from rugwatch.errors import MalformedData, OrderingViolation, SchemaViolation, UnknownSignature
from rugwatch.events import (
    TOPIC_SYNC,
    decode_log,
    dumps_event,
    encode_log,
    event_from_json_obj,
    make_event,
    read_fixture,
    sort_events,
    write_fixture,
)

PAIR = addr(0xAA)
TOKEN = addr(0xBB)
USER = addr(0xCC)
ZERO = addr(0)


def word(value: int) -> str:
    return format(value, "064x")


def test_decode_sync_reads_both_reserves():
    raw = {
        "address": PAIR,
        "topics": [TOPIC_SYNC],
        "data": "0x" + word(1000) + word(2000),
        "blockNumber": "0x10",
        "logIndex": "0x2",
    }
    record = decode_log(raw)
    assert record.kind == "Sync"
    assert record.block == 16
    assert record.log_index == 2
    assert record.args == {"reserve0": 1000, "reserve1": 2000}


def test_decode_transfer_from_zero_is_a_mint_shaped_transfer():
    event = ev(5, 0, TOKEN, "Transfer", **{"from": ZERO, "to": USER, "amount": 5000})
    raw = encode_log(event)
    decoded = decode_log(raw)
    assert decoded == event
    assert decoded.args["from"] == ZERO
    assert decoded.args["amount"] == 5000


def test_decode_unknown_topic_raises_unknown_signature():
    raw = {"address": PAIR, "topics": ["0x" + "12" * 32], "data": "0x", "blockNumber": "0x1", "logIndex": "0x0"}
    with pytest.raises(UnknownSignature):
        decode_log(raw)


def test_decode_truncated_data_raises_malformed_data():
    raw = {
        "address": PAIR,
        "topics": [TOPIC_SYNC],
        "data": "0x" + word(1000),  # one word short
        "blockNumber": "0x1",
        "logIndex": "0x0",
    }
    with pytest.raises(MalformedData):
        decode_log(raw)


def test_encode_decode_round_trip_over_random_records():
    rng = random.Random(0xE0)
    kinds = ["PairCreated", "Sync", "Mint", "Burn", "Transfer"]
    for i in range(200):
        kind = rng.choice(kinds)
        a = lambda: addr(rng.randrange(1, 2**160))
        amt = lambda: rng.randrange(0, 2**112)
        if kind == "PairCreated":
            args = {"token0": a(), "token1": a(), "pair": a()}
        elif kind == "Sync":
            args = {"reserve0": amt(), "reserve1": amt()}
        elif kind == "Mint":
            args = {"sender": a(), "amount0": amt(), "amount1": amt()}
        elif kind == "Burn":
            args = {"sender": a(), "amount0": amt(), "amount1": amt(), "to": a()}
        else:
            args = {"from": a(), "to": a(), "amount": rng.randrange(0, 2**256)}
        event = make_event(rng.randrange(10**7), rng.randrange(500), a(), kind, args)
        assert decode_log(encode_log(event)) == event


def test_make_event_rejects_mixed_case_by_lowercasing():
    event = make_event(1, 0, TOKEN.upper().replace("0X", "0x"), "Transfer",
                       {"from": ZERO, "to": USER.upper().replace("0X", "0x"), "amount": "7"})
    assert event.emitter == TOKEN
    assert event.args["to"] == USER
    assert event.args["amount"] == 7


def test_make_event_rejects_bad_amounts_and_addresses():
    with pytest.raises(SchemaViolation):
        make_event(1, 0, TOKEN, "Transfer", {"from": ZERO, "to": USER, "amount": "-1"})
    with pytest.raises(SchemaViolation):
        make_event(1, 0, TOKEN, "Transfer", {"from": ZERO, "to": USER, "amount": str(2**256)})
    with pytest.raises(SchemaViolation):
        make_event(1, 0, "0x123", "Transfer", {"from": ZERO, "to": USER, "amount": "1"})
    with pytest.raises(SchemaViolation):
        make_event(1, 0, TOKEN, "Transfer", {"from": ZERO, "amount": "1"})
    with pytest.raises(SchemaViolation):
        make_event(1, 0, TOKEN, "Swap", {})


def test_read_fixture_empty_file_gives_empty_stream(tmp_path):
    path = tmp_path / "empty.jsonl"
    path.write_text("")
    assert read_fixture(path) == []


def test_read_fixture_sorts_out_of_order_lines(tmp_path):
    events = [
        ev(7, 0, TOKEN, "Transfer", **{"from": ZERO, "to": USER, "amount": 1}),
        ev(3, 1, TOKEN, "Transfer", **{"from": ZERO, "to": USER, "amount": 2}),
        ev(3, 0, TOKEN, "Transfer", **{"from": ZERO, "to": USER, "amount": 3}),
    ]
    path = tmp_path / "f.jsonl"
    path.write_text("".join(dumps_event(e) + "\n" for e in events))
    stream = read_fixture(path)
    assert [(e.block, e.log_index) for e in stream] == [(3, 0), (3, 1), (7, 0)]


def test_read_fixture_reports_line_number_on_schema_violation(tmp_path):
    good = dumps_event(ev(1, 0, TOKEN, "Transfer", **{"from": ZERO, "to": USER, "amount": 1}))
    bad = good.replace('"amount":"1"', '"amount":"-5"')
    path = tmp_path / "f.jsonl"
    path.write_text(good + "\n" + bad + "\n")
    with pytest.raises(SchemaViolation, match=":2:"):
        read_fixture(path)


def test_duplicate_slot_raises_ordering_violation():
    a = ev(1, 0, TOKEN, "Transfer", **{"from": ZERO, "to": USER, "amount": 1})
    b = ev(1, 0, TOKEN, "Transfer", **{"from": ZERO, "to": USER, "amount": 2})
    with pytest.raises(OrderingViolation):
        sort_events([a, b])


def test_write_fixture_canonicalizes_to_byte_identical_form(tmp_path):
    # Messy input: unsorted records, unsorted keys, uppercase addresses,
    # integer amounts.  One canonicalization pass must be a fixpoint.
    lines = [
        json.dumps(
            {
                "kind": "Transfer",
                "emitter": TOKEN.upper().replace("0X", "0x"),
                "block": 9,
                "log_index": 1,
                "args": {"to": USER, "from": ZERO, "amount": 44},
            }
        ),
        json.dumps(
            {
                "block": 2,
                "log_index": 0,
                "emitter": PAIR,
                "kind": "Sync",
                "args": {"reserve0": "10", "reserve1": "20"},
            }
        ),
    ]
    messy = tmp_path / "messy.jsonl"
    messy.write_text("\n".join(lines) + "\n")
    once = tmp_path / "once.jsonl"
    write_fixture(once, read_fixture(messy))
    twice = tmp_path / "twice.jsonl"
    write_fixture(twice, read_fixture(once))
    assert once.read_bytes() == twice.read_bytes()
    first = json.loads(once.read_text().splitlines()[0])
    assert first["kind"] == "Sync"  # sorted by (block, log_index)
    assert json.loads(once.read_text().splitlines()[1])["emitter"] == TOKEN


def test_event_from_json_obj_rejects_extra_keys():
    obj = json.loads(dumps_event(ev(1, 0, TOKEN, "Transfer", **{"from": ZERO, "to": USER, "amount": 1})))
    obj["note"] = "hello"
    with pytest.raises(SchemaViolation):
        event_from_json_obj(obj)


def test_optional_timestamp_survives_the_round_trip():
    event = make_event(9, 0, TOKEN, "Transfer", {"from": ZERO, "to": USER, "amount": 3}, timestamp=1_600_000_000)
    line = dumps_event(event)
    assert '"timestamp":1600000000' in line
    assert event_from_json_obj(json.loads(line)) == event
