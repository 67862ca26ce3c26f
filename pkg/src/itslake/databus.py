"""In-process publish/subscribe bus with MQTT-style topic filters.

Topics are ``/``-separated labels. A filter segment may be ``+`` (exactly one
level) or, as the last segment only, ``#`` (zero or more trailing levels).
Delivery is exactly-once per matching subscription, in publication order.
"""

from __future__ import annotations

import csv
import io
import threading
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable

SEPARATOR = "/"
SINGLE_LEVEL = "+"
MULTI_LEVEL = "#"


class BusClosedError(RuntimeError):
    """Raised when publishing or subscribing on a bus that was shut down."""


@dataclass(frozen=True)
class Topic:
    segments: tuple[str, ...]

    def __post_init__(self):
        if not self.segments:
            raise ValueError("topic needs at least one segment")
        for seg in self.segments:
            if not seg or SEPARATOR in seg:
                raise ValueError(f"invalid topic segment {seg!r}")
            if seg in (SINGLE_LEVEL, MULTI_LEVEL):
                raise ValueError("wildcards are not allowed in a published topic")

    @classmethod
    def parse(cls, text: str) -> "Topic":
        return cls(tuple(text.split(SEPARATOR)))

    def __str__(self):
        return SEPARATOR.join(self.segments)


@dataclass(frozen=True)
class SubscriptionFilter:
    pattern: tuple[str, ...]

    def __post_init__(self):
        if not self.pattern:
            raise ValueError("filter needs at least one segment")
        for i, seg in enumerate(self.pattern):
            if not seg or SEPARATOR in seg:
                raise ValueError(f"invalid filter segment {seg!r}")
            if seg == MULTI_LEVEL and i != len(self.pattern) - 1:
                raise ValueError("'#' is only allowed as the final segment")
            if (MULTI_LEVEL in seg and seg != MULTI_LEVEL) or (SINGLE_LEVEL in seg and seg != SINGLE_LEVEL):
                raise ValueError(f"wildcard must occupy a whole segment: {seg!r}")

    @classmethod
    def parse(cls, text: str) -> "SubscriptionFilter":
        return cls(tuple(text.split(SEPARATOR)))

    def __str__(self):
        return SEPARATOR.join(self.pattern)


def _as_topic(topic: Topic | str) -> Topic:
    return topic if isinstance(topic, Topic) else Topic.parse(topic)


def _as_filter(flt: SubscriptionFilter | str) -> SubscriptionFilter:
    return flt if isinstance(flt, SubscriptionFilter) else SubscriptionFilter.parse(flt)


def match_topic(flt: SubscriptionFilter | str, topic: Topic | str) -> bool:
    """Return True if ``topic`` matches the subscription filter ``flt``."""
    pattern = _as_filter(flt).pattern
    segments = _as_topic(topic).segments
    for i, pat in enumerate(pattern):
        if pat == MULTI_LEVEL:
            return True
        if i >= len(segments):
            return False
        if pat != SINGLE_LEVEL and pat != segments[i]:
            return False
    return len(pattern) == len(segments)


@dataclass(frozen=True)
class Message:
    id: int
    topic: Topic
    payload: bytes
    timestamp: float


@dataclass(frozen=True)
class Subscription:
    handle: int
    filter: SubscriptionFilter
    subscriber: Hashable


@dataclass
class Delivery:
    handle: int
    message: Message


@dataclass
class _Subscriber:
    inbox: list[Delivery] = field(default_factory=list)
    callback: Callable[[Message], None] | None = None


class DataBus:
    """Linearizable in-process message bus.

    A single lock serializes ``publish``/``subscribe``/``unsubscribe`` so the
    per-subscriber delivery order is the publication order. Callbacks run
    inside the lock; a callback must not publish on the same bus.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._subscribers: dict[Hashable, _Subscriber] = {}
        self._subscriptions: dict[int, Subscription] = {}
        self._by_pair: dict[tuple[SubscriptionFilter, Hashable], int] = {}
        self._next_handle = 1
        self._next_id = 1
        self._last_timestamp = 0.0
        self._closed = False
        self.log: list[Message] = []

    def register(self, subscriber: Hashable, callback: Callable[[Message], None] | None = None):
        with self._lock:
            self._check_open()
            sub = self._subscribers.setdefault(subscriber, _Subscriber())
            if callback is not None:
                sub.callback = callback

    def subscribe(self, flt: SubscriptionFilter | str, subscriber: Hashable) -> int:
        flt = _as_filter(flt)
        with self._lock:
            self._check_open()
            if subscriber not in self._subscribers:
                raise KeyError(f"subscriber {subscriber!r} is not registered")
            existing = self._by_pair.get((flt, subscriber))
            if existing is not None:
                return existing
            handle = self._next_handle
            self._next_handle += 1
            self._subscriptions[handle] = Subscription(handle, flt, subscriber)
            self._by_pair[(flt, subscriber)] = handle
            return handle

    def unsubscribe(self, handle: int):
        with self._lock:
            sub = self._subscriptions.pop(handle, None)
            if sub is not None:
                del self._by_pair[(sub.filter, sub.subscriber)]

    def publish(self, topic: Topic | str, payload: bytes, timestamp: float | None = None) -> int:
        """Publish ``payload`` on ``topic``; return the number of matching subscriptions."""
        topic = _as_topic(topic)
        payload = bytes(payload)
        with self._lock:
            self._check_open()
            if timestamp is None:
                timestamp = self._last_timestamp
            if timestamp < 0:
                raise ValueError("timestamp must be non-negative")
            if timestamp < self._last_timestamp:
                raise ValueError(
                    f"timestamp {timestamp} precedes last publish at {self._last_timestamp}"
                )
            msg = Message(self._next_id, topic, payload, float(timestamp))
            self._next_id += 1
            self._last_timestamp = msg.timestamp
            self.log.append(msg)
            count = 0
            for handle in sorted(self._subscriptions):
                sub = self._subscriptions[handle]
                if match_topic(sub.filter, topic):
                    target = self._subscribers[sub.subscriber]
                    target.inbox.append(Delivery(handle, msg))
                    if target.callback is not None:
                        target.callback(msg)
                    count += 1
            return count

    def inbox(self, subscriber: Hashable) -> list[Delivery]:
        with self._lock:
            return list(self._subscribers[subscriber].inbox)

    def drain(self, subscriber: Hashable) -> list[Delivery]:
        with self._lock:
            sub = self._subscribers[subscriber]
            out, sub.inbox = sub.inbox, []
            return out

    def subscriptions(self) -> list[Subscription]:
        with self._lock:
            return [self._subscriptions[h] for h in sorted(self._subscriptions)]

    def close(self):
        with self._lock:
            self._closed = True

    @property
    def closed(self) -> bool:
        return self._closed

    def _check_open(self):
        if self._closed:
            raise BusClosedError("bus is closed")


TRACE_HEADER = ("id", "timestamp", "topic", "payload_size")


def trace_rows(messages: Iterable[Message]):
    for m in messages:
        yield (m.id, repr(m.timestamp), str(m.topic), len(m.payload))


def write_trace(messages: Iterable[Message], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(TRACE_HEADER)
    writer.writerows(trace_rows(messages))


def trace_csv(bus: DataBus) -> str:
    buf = io.StringIO()
    write_trace(bus.log, buf)
    return buf.getvalue()
