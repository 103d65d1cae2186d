"""Windowed log retrieval over JSON-RPC."""
from __future__ import annotations

import logging
import time

import requests

from .errors import RpcUnavailable, UnknownSignature
from .events import EventRecord, decode_log, sort_events

log = logging.getLogger(__name__)

DEFAULT_WINDOW = 2_000
MAX_ATTEMPTS = 4
BACKOFF_SECONDS = 0.5

# Providers cap eth_getLogs result sizes and signal it in various ways;
# these are treated as "shrink the window and retry", not as failures.
_TOO_MANY_CODES = {-32005}
_TOO_MANY_MARKERS = ("too many", "more than", "response size", "query returned")


class _NodeError(Exception):
    def __init__(self, code: int | None, message: str):
        super().__init__(f"node error {code}: {message}")
        self.code = code
        self.message = message

    def is_too_many_results(self) -> bool:
        if self.code in _TOO_MANY_CODES:
            return True
        return any(marker in self.message.lower() for marker in _TOO_MANY_MARKERS)


def _rpc_call(session: requests.Session, url: str, method: str, params: list, request_id: int):
    payload = {"jsonrpc": "2.0", "id": request_id, "method": method, "params": params}
    response = session.post(url, json=payload, timeout=30)
    response.raise_for_status()
    body = response.json()
    if "error" in body and body["error"]:
        error = body["error"]
        raise _NodeError(error.get("code"), str(error.get("message", "")))
    return body.get("result")


def _get_logs(
    session: requests.Session,
    url: str,
    addresses: list[str],
    from_block: int,
    to_block: int,
    request_id: int,
    sleep,
) -> list:
    """One windowed eth_getLogs call with bounded retry on transient
    failures.  Result-size complaints propagate so the caller can split
    the window instead."""
    params = [
        {
            "address": addresses if len(addresses) > 1 else addresses[0],
            "fromBlock": hex(from_block),
            "toBlock": hex(to_block),
        }
    ]
    last_error: Exception | None = None
    for attempt in range(MAX_ATTEMPTS):
        try:
            return _rpc_call(session, url, "eth_getLogs", params, request_id)
        except _NodeError as error:
            if error.is_too_many_results():
                raise
            last_error = error
        except (requests.RequestException, ValueError) as error:
            last_error = error
        if attempt + 1 < MAX_ATTEMPTS:
            delay = BACKOFF_SECONDS * 2**attempt
            log.warning("eth_getLogs failed (%s); retrying in %.1fs", last_error, delay)
            sleep(delay)
    raise RpcUnavailable(f"eth_getLogs failed after {MAX_ATTEMPTS} attempts: {last_error}")


def fetch_range(
    url: str,
    addresses,
    from_block: int,
    to_block: int,
    window: int = DEFAULT_WINDOW,
    session: requests.Session | None = None,
    sleep=time.sleep,
) -> list[EventRecord]:
    """Pull every recognized log for the given contracts over a block
    range, paginating in fixed windows and halving the window whenever
    the node refuses a result as too large.

    Returns the same sorted, duplicate-free stream a stored fixture
    yields, so downstream code cannot tell the two sources apart.
    """
    if isinstance(addresses, str):
        addresses = [addresses]
    addresses = [a.lower() for a in addresses]
    if not addresses:
        raise ValueError("at least one contract address is required")
    if from_block < 0 or to_block < from_block:
        raise ValueError(f"bad block range [{from_block}, {to_block}]")
    if window < 1:
        raise ValueError("window must be at least one block")

    session = session or requests.Session()
    events: list[EventRecord] = []
    skipped = 0
    request_id = 0
    start = from_block
    while start <= to_block:
        end = min(start + window - 1, to_block)
        request_id += 1
        try:
            raw_logs = _get_logs(session, url, addresses, start, end, request_id, sleep)
        except _NodeError as error:
            if window == 1:
                raise RpcUnavailable(f"single-block window still too large: {error}")
            window = max(1, window // 2)
            log.info("window too large at block %d; shrinking to %d blocks", start, window)
            continue
        for raw in raw_logs or []:
            if raw.get("removed"):
                continue
            try:
                events.append(decode_log(raw))
            except UnknownSignature:
                skipped += 1
        start = end + 1
    if skipped:
        log.debug("skipped %d logs with unrecognized signatures", skipped)
    return sort_events(events)
