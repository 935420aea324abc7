"""Etherscan-compatible verified-source client with disk cache and rate limit."""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import requests

from .io import atomic_write_text

__all__ = [
    "API_KEY_ENV",
    "FetchConfig",
    "SourceRecord",
    "FetchError",
    "AddressError",
    "UnverifiedContractError",
    "RateLimiter",
    "EtherscanClient",
    "validate_address",
    "fetch_source",
    "fetch_batch",
    "records_to_jsonl",
]

logger = logging.getLogger(__name__)

API_KEY_ENV = "SCMINE_API_KEY"
_ADDRESS = re.compile(r"^0x[0-9a-fA-F]{40}$")
_APIKEY_PARAM = re.compile(r"(apikey=)[^&\s\"']*", re.IGNORECASE)


class _RedactApiKey(logging.Filter):
    """urllib3 logs request URLs at DEBUG; strip the key from them."""

    def filter(self, record: logging.LogRecord) -> bool:
        message = record.getMessage()
        if "apikey=" in message.lower():
            record.msg = _APIKEY_PARAM.sub(r"\1***", message)
            record.args = None
        return True


logging.getLogger("urllib3.connectionpool").addFilter(_RedactApiKey())


class FetchError(RuntimeError):
    pass


class AddressError(FetchError, ValueError):
    pass


class UnverifiedContractError(FetchError):
    pass


class _Transient(FetchError):
    """Network failure, 5xx/429 status or rate-limit reply: worth retrying."""


def validate_address(s: str) -> str:
    """Return the lowercase form of a ``0x`` + 40-hex address."""
    if not isinstance(s, str) or not _ADDRESS.match(s.strip()):
        raise AddressError(f"invalid address {s!r}")
    return s.strip().lower()


@dataclass(frozen=True)
class FetchConfig:
    base_url: str = "https://api.etherscan.io/api"
    api_key: str = field(default="", repr=False)
    rate_limit: float = 5.0
    timeout: float = 30.0
    cache_dir: Optional[str] = None
    max_retries: int = 3
    backoff_base: float = 1.0

    def __post_init__(self):
        if not self.rate_limit > 0:
            raise ValueError("rate_limit must be positive")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    @classmethod
    def from_env(cls, **kwargs) -> "FetchConfig":
        kwargs.setdefault("api_key", os.environ.get(API_KEY_ENV, ""))
        return cls(**kwargs)


@dataclass(frozen=True)
class SourceRecord:
    address: str
    source: str
    contract_name: str
    compiler_version: str
    fetched_at: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), ensure_ascii=False, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SourceRecord":
        data = json.loads(text)
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


class RateLimiter:
    """Spaces calls at least ``1 / rate`` seconds apart.

    That keeps any one-second window at or under ``rate`` calls. The
    limiter is the single serialization point shared by all threads.
    """

    def __init__(self, rate: float, clock: Callable[[], float] = time.monotonic,
                 sleep: Callable[[float], None] = time.sleep):
        self.interval = 1.0 / rate
        self.clock = clock
        self.sleep = sleep
        self._next = None
        self._lock = threading.Lock()

    def acquire(self) -> float:
        with self._lock:
            now = self.clock()
            if self._next is not None and now < self._next:
                self.sleep(self._next - now)
                now = self._next
            self._next = now + self.interval
            return now


def _utc_now() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat().replace("+00:00", "Z")


class EtherscanClient:
    """Cache-first ``getsourcecode`` client.

    The API key is sent as a query parameter and never logged or stored;
    error messages name the address only.
    """

    def __init__(self, config: FetchConfig, session: Optional[requests.Session] = None,
                 limiter: Optional[RateLimiter] = None, sleep: Callable[[float], None] = time.sleep,
                 now: Callable[[], str] = _utc_now):
        self.config = config
        self.session = session or requests.Session()
        self.limiter = limiter or RateLimiter(config.rate_limit)
        self.sleep = sleep
        self.now = now
        self.requests_made = 0
        self._count_lock = threading.Lock()

    def _cache_path(self, address: str) -> Optional[Path]:
        if not self.config.cache_dir:
            return None
        return Path(self.config.cache_dir) / f"{address}.json"

    def _request(self, address: str) -> dict:
        params = {
            "module": "contract",
            "action": "getsourcecode",
            "address": address,
            "apikey": self.config.api_key,
        }
        self.limiter.acquire()
        with self._count_lock:
            self.requests_made += 1
        try:
            resp = self.session.get(self.config.base_url, params=params, timeout=self.config.timeout)
        except requests.RequestException as exc:
            raise _Transient(f"{address}: {type(exc).__name__}") from None
        if resp.status_code == 429 or resp.status_code >= 500:
            raise _Transient(f"{address}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise FetchError(f"{address}: HTTP {resp.status_code}")
        try:
            payload = resp.json()
        except ValueError:
            raise _Transient(f"{address}: response is not JSON") from None
        result = payload.get("result")
        if str(payload.get("status")) != "1":
            if isinstance(result, str) and "rate limit" in result.lower():
                raise _Transient(f"{address}: rate limited")
            detail = result if isinstance(result, str) else payload.get("message", "")
            raise FetchError(f"{address}: API error {detail!r}")
        if not isinstance(result, list) or not result or not isinstance(result[0], dict):
            raise FetchError(f"{address}: unexpected response envelope")
        return result[0]

    def _request_with_retries(self, address: str) -> dict:
        """Retry transient failures after 1s, 2s, 4s, ... (``backoff_base * 2**attempt``)."""
        for attempt in range(self.config.max_retries + 1):
            try:
                return self._request(address)
            except _Transient as exc:
                if attempt == self.config.max_retries:
                    raise FetchError(f"{exc} (gave up after {attempt} retries)") from None
                delay = self.config.backoff_base * 2 ** attempt
                logger.info("retrying %s in %.1fs", address, delay)
                self.sleep(delay)
        raise AssertionError("unreachable")

    def fetch_source(self, address: str) -> SourceRecord:
        address = validate_address(address)
        cache = self._cache_path(address)
        if cache is not None and cache.exists():
            return SourceRecord.from_json(cache.read_text(encoding="utf-8"))
        entry = self._request_with_retries(address)
        source = entry.get("SourceCode") or ""
        if not source:
            raise UnverifiedContractError(f"{address}: contract source is not verified")
        record = SourceRecord(
            address=address,
            source=source,
            contract_name=str(entry.get("ContractName") or ""),
            compiler_version=str(entry.get("CompilerVersion") or ""),
            fetched_at=self.now(),
        )
        if cache is not None:
            atomic_write_text(cache, record.to_json())
        return record

    def fetch_batch(self, addresses: Sequence[str], max_workers: int = 1
                    ) -> Tuple[List[SourceRecord], Dict[str, FetchError]]:
        """Fetch every address; failures are collected, never raised.

        Records come back in input order.
        """
        def attempt(addr):
            try:
                return self.fetch_source(addr), None
            except FetchError as exc:
                return None, exc

        if max_workers > 1:
            with ThreadPoolExecutor(max_workers=max_workers) as pool:
                outcomes = list(pool.map(attempt, addresses))
        else:
            outcomes = [attempt(a) for a in addresses]
        records, errors = [], {}
        for addr, (record, error) in zip(addresses, outcomes):
            if record is not None:
                records.append(record)
            else:
                errors[addr] = error
        return records, errors


def fetch_source(address: str, config: FetchConfig, **kwargs) -> SourceRecord:
    return EtherscanClient(config, **kwargs).fetch_source(address)


def fetch_batch(addresses: Sequence[str], config: FetchConfig, **kwargs):
    return EtherscanClient(config, **kwargs).fetch_batch(addresses)


def records_to_jsonl(records: Sequence[SourceRecord]) -> str:
    """Corpus JSONL: address and source, plus the contract name as an extra field."""
    return "".join(
        json.dumps({"address": r.address, "source": r.source, "contract_name": r.contract_name},
                   ensure_ascii=False, sort_keys=True) + "\n"
        for r in records
    )
