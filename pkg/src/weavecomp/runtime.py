"""Deterministic event loop that executes an assembly.

Events sit in a single FIFO queue and are dispatched breadth-first.  Every
step (injection, delivery, emission, property change, reconfiguration) is
appended to the container's :class:`DispatchTrace`, whose sequence numbers are
also the sequence numbers handed back by :meth:`Container.enqueue_event`.
"""

from __future__ import annotations

import itertools
import threading
from collections import deque
from contextlib import contextmanager
from dataclasses import dataclass
from types import MappingProxyType
from typing import Any, Callable, Iterator

from . import errors
from .behaviors import BUILTIN_BEHAVIORS, Behavior, Delivery
from .model import Assembly, Endpoint, TypeRegistry, render_value

DEFAULT_HOP_LIMIT = 1000
DEFAULT_EVENT_BUDGET = 100_000

INJECTED = "Injected"
DELIVERED = "Delivered"
EMITTED = "Emitted"
PROPERTY_SET = "PropertySet"
RECONFIGURED = "Reconfigured"


@dataclass(frozen=True)
class Event:
    seq: int
    tick: int
    endpoint: Endpoint
    direction: str  # "source" fans out through bindings, "sink" is delivered directly
    payload: Any
    hop: int


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    tick: int
    kind: str
    endpoint: str
    payload: Any
    hop: int = 0
    raw: bool = False  # payload is already text (Reconfigured records)

    def line(self) -> str:
        payload = self.payload if self.raw else render_value(self.payload)
        return f"{self.seq}\t{self.tick}\t{self.kind}\t{self.endpoint}\t{payload}\t{self.hop}"


class DispatchTrace:
    def __init__(self, records: list[TraceRecord] | None = None):
        self.records: list[TraceRecord] = records if records is not None else []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __getitem__(self, index):
        return self.records[index]

    def of_kind(self, kind: str) -> list[TraceRecord]:
        return [r for r in self.records if r.kind == kind]

    def delivered(self, endpoint: str) -> list[Any]:
        return [r.payload for r in self.records if r.kind == DELIVERED and r.endpoint == endpoint]

    def serialize(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)


@dataclass(frozen=True)
class BehaviorKind:
    name: str
    fn: Behavior


def new_registry() -> TypeRegistry:
    registry = TypeRegistry()
    for name, fn in BUILTIN_BEHAVIORS.items():
        registry.add_behavior(name, fn)
    return registry


class Container:
    """Owns an assembly and dispatches events through it."""

    def __init__(
        self,
        registry: TypeRegistry | None = None,
        *,
        hop_limit: int = DEFAULT_HOP_LIMIT,
        event_budget: int = DEFAULT_EVENT_BUDGET,
    ):
        from .weaver import Weaver

        self.registry = registry if registry is not None else new_registry()
        self.assembly = Assembly(self.registry)
        self.hop_limit = hop_limit
        self.event_budget = event_budget
        self.trace = DispatchTrace()
        self.clock = 0
        self.weaver = Weaver(self)
        self.engine = None  # set by RulesEngine
        self.proxy_manager = None  # set by discovery
        self.service_proxies = None  # set by services
        self.bus = None
        self.config_dir = None
        self.reactions: list[Callable[[Event], None]] = []
        self._queue: deque[Event] = deque()
        self._seq = itertools.count()
        self._lock = threading.RLock()

    @contextmanager
    def turn(self):
        """Run a block on the dispatch turn, never interleaved with a delivery."""
        with self._lock:
            yield self

    @property
    def pending(self) -> int:
        return len(self._queue)

    def _record(self, tick: int, kind: str, endpoint: str, payload: Any, hop: int = 0, raw: bool = False) -> int:
        seq = next(self._seq)
        self.trace.records.append(TraceRecord(seq, tick, kind, endpoint, payload, hop, raw))
        return seq

    def record_reconfigured(self, what: str, detail: str = "") -> None:
        with self._lock:
            self._record(self.clock, RECONFIGURED, what, detail, raw=True)

    def register_behavior(self, name: str, fn: Behavior) -> BehaviorKind:
        with self._lock:
            self.registry.add_behavior(name, fn)
        return BehaviorKind(name, fn)

    # event entry points

    def _endpoint(self, endpoint: Endpoint | str, direction: str) -> Endpoint:
        if isinstance(endpoint, str):
            return self.assembly.resolve(endpoint, direction)
        self.assembly.port_type(endpoint, direction)
        return endpoint

    def _enqueue(self, endpoint, direction: str, payload: Any, tick: int | None, hop: int) -> int:
        with self._lock:
            ep = self._endpoint(endpoint, direction)
            ptype = self.assembly.port_type(ep, direction)
            if not ptype.accepts(payload):
                raise errors.PayloadTypeMismatch(
                    f"{self.assembly.label(ep)} expects {ptype.value}, got {payload!r}"
                )
            label = self.assembly.label(ep)
            if hop >= self.hop_limit:
                self._queue.clear()
                raise errors.HopLimitExceeded(label, hop, self.hop_limit)
            tick = self.clock if tick is None else tick
            seq = self._record(tick, INJECTED, label, payload, hop)
            self._queue.append(Event(seq, tick, ep, direction, payload, hop))
            return seq

    def enqueue_event(self, endpoint: Endpoint | str, payload: Any, tick: int | None = None, hop: int = 0) -> int:
        """Queue ``payload`` as if emitted on a source endpoint."""
        return self._enqueue(endpoint, "source", payload, tick, hop)

    def invoke_sink(self, endpoint: Endpoint | str, payload: Any, tick: int | None = None, hop: int = 0) -> int:
        """Queue ``payload`` for direct delivery to a sink endpoint."""
        return self._enqueue(endpoint, "sink", payload, tick, hop)

    def set_property(self, instance: str, name: str, value: Any) -> Any:
        with self._lock:
            inst = self._instance(instance)
            old = self.assembly.set_property(inst.id, name, value)
            self._record(self.clock, PROPERTY_SET, f"{inst.name}.{name}", value)
            return old

    def _instance(self, ref: str):
        if ref in self.assembly.instances:
            return self.assembly.instances[ref]
        return self.assembly.by_name(ref)

    # dispatch

    def run_until_quiescent(self, max_events: int | None = None) -> DispatchTrace:
        budget = self.event_budget if max_events is None else max_events
        if budget <= 0:
            raise ValueError("max_events must be positive")
        start = len(self.trace)
        processed = 0
        while True:
            with self._lock:
                if not self._queue:
                    break
                if processed >= budget:
                    raise errors.EventBudgetExhausted(budget, len(self._queue))
                event = self._queue.popleft()
                processed += 1
                self._dispatch(event)
        return DispatchTrace(self.trace.records[start:])

    def _dispatch(self, event: Event) -> None:
        if event.endpoint.instance not in self.assembly.instances:
            return  # target destroyed while the event was queued
        if event.direction == "sink":
            self._deliver(event.endpoint, event)
        else:
            for binding in self.assembly.bindings_from(event.endpoint):
                self._deliver(binding.sink, event)
        for reaction in list(self.reactions):
            reaction(event)

    def _deliver(self, sink: Endpoint, event: Event) -> None:
        inst = self.assembly.instances[sink.instance]
        self._record(event.tick, DELIVERED, f"{inst.name}.{sink.port}", event.payload, event.hop)
        fn = self.registry.behavior(inst.type.behavior)
        delivery = Delivery(
            sink.port, event.payload, event.tick, inst.name, tuple(p.name for p in inst.type.sources)
        )
        try:
            state, emissions = fn(inst.state, MappingProxyType(inst.properties), delivery)
        except errors.WeaveCompError:
            raise
        except Exception as exc:
            raise errors.BehaviorError(f"{inst.name}: {exc}") from exc
        inst.state = state
        for port_name, value in emissions:
            port = inst.type.source(port_name)
            if port is None or not port.type.accepts(value):
                raise errors.BehaviorError(f"{inst.name} cannot emit {value!r} on {port_name!r}")
            hop = event.hop + 1
            label = f"{inst.name}.{port_name}"
            if hop >= self.hop_limit:
                self._queue.clear()
                raise errors.HopLimitExceeded(label, hop, self.hop_limit)
            seq = self._record(event.tick, EMITTED, label, value, hop)
            self._queue.append(Event(seq, event.tick, Endpoint(inst.id, port_name), "source", value, hop))


def enqueue_event(container: Container, endpoint, payload, tick: int | None = None) -> int:
    return container.enqueue_event(endpoint, payload, tick)


def run_until_quiescent(container: Container, max_events: int | None = None) -> DispatchTrace:
    return container.run_until_quiescent(max_events)
