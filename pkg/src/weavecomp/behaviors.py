"""The closed set of built-in component behaviors.

A behavior is a function ``(state, properties, delivery) -> (state, emissions)``
where ``emissions`` is a list of ``(source name, payload)`` pairs.  Built-ins
are pure; the container never hands them anything mutable they could keep.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Mapping

Emission = tuple[str, Any]
Behavior = Callable[[Any, Mapping[str, Any], "Delivery"], tuple[Any, list[Emission]]]


@dataclass(frozen=True)
class Delivery:
    sink: str
    payload: Any
    tick: int
    instance: str
    sources: tuple[str, ...]


def _out_port(delivery: Delivery, preferred: str) -> str:
    # types whose only source is not called "output" still relay through it
    if preferred in delivery.sources or len(delivery.sources) != 1:
        return preferred
    return delivery.sources[0]


def relay(state, props, delivery):
    return state, [(_out_port(delivery, "output"), delivery.payload)]


def gate(state, props, delivery):
    port = "pass" if delivery.payload == props.get("expected") else "fail"
    return state, [(port, delivery.payload)]


def latch(state, props, delivery):
    if delivery.sink == "read":
        if state is None:
            return state, []
        return state, [("value", state[0])]
    return (delivery.payload,), []


def transform(state, props, delivery):
    op = props.get("op", "Upper")
    value = delivery.payload
    if op == "Upper":
        value = value.upper()
    elif op == "Lower":
        value = value.lower()
    elif op == "Concat":
        value = value + props.get("suffix", "")
    else:
        raise ValueError(f"unknown Transform op {op!r}")
    return state, [(_out_port(delivery, "output"), value)]


def counter(state, props, delivery):
    count = (state or 0) + 1
    return count, [("count", count)]


def record_only(state, props, delivery):
    return state, []


BUILTIN_BEHAVIORS: dict[str, Behavior] = {
    "Relay": relay,
    "Gate": gate,
    "Latch": latch,
    "Transform": transform,
    "Counter": counter,
    "Logger": record_only,
    "Probe": record_only,
    "Sink": record_only,
}
