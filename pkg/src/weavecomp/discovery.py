"""UPnP-lite discovery bus and automatic device proxies.

Devices announce themselves with ``NOTIFY ALIVE`` and leave with
``NOTIFY BYEBYE``.  A :class:`ProxyManager` listening on the bus turns each
live device into a component (origin ``device:<uuid>``) whose sinks are the
device actions and whose sources are its evented variables, and destroys that
component again when the device leaves.
"""

from __future__ import annotations

import json
import logging
import re
import socket
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Mapping

from . import errors
from .glob import glob_match
from .model import ComponentType, PayloadType, Port, PropertyDecl, Origin

if TYPE_CHECKING:
    from .runtime import Container

log = logging.getLogger(__name__)

ALIVE = "ALIVE"
BYEBYE = "BYEBYE"
SEARCH = "SEARCH"
RESPONSE = "RESPONSE"

PROXY_BEHAVIOR = "DeviceProxy"


@dataclass(frozen=True)
class Action:
    name: str
    input: PayloadType
    output: PayloadType | None = None


@dataclass(frozen=True)
class Variable:
    name: str
    type: PayloadType


@dataclass(frozen=True)
class DeviceService:
    id: str
    actions: tuple[Action, ...] = ()
    variables: tuple[Variable, ...] = ()


@dataclass(frozen=True)
class DeviceDescription:
    uuid: str
    device_type: str
    friendly_name: str
    services: tuple[DeviceService, ...] = ()

    def __post_init__(self) -> None:
        for svc in self.services:
            for label, group in (("action", svc.actions), ("variable", svc.variables)):
                names = [x.name for x in group]
                if len(names) != len(set(names)):
                    raise errors.DuplicatePortName(f"{self.uuid}/{svc.id}: duplicate {label} name")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "DeviceDescription":
        services = []
        for s in data.get("services", ()):
            actions = tuple(
                Action(
                    a["name"],
                    PayloadType.parse(a.get("in", "Unit")),
                    PayloadType.parse(a["out"]) if a.get("out") else None,
                )
                for a in s.get("actions", ())
            )
            variables = tuple(Variable(v["name"], PayloadType.parse(v["type"])) for v in s.get("variables", ()))
            services.append(DeviceService(s["id"], actions, variables))
        return cls(data["uuid"], data["type"], data.get("name", data["uuid"]), tuple(services))

    def to_dict(self) -> dict[str, Any]:
        return {
            "uuid": self.uuid,
            "type": self.device_type,
            "name": self.friendly_name,
            "services": [
                {
                    "id": s.id,
                    "actions": [
                        {"name": a.name, "in": a.input.value, **({"out": a.output.value} if a.output else {})}
                        for a in s.actions
                    ],
                    "variables": [{"name": v.name, "type": v.type.value} for v in s.variables],
                }
                for s in self.services
            ],
        }

    @classmethod
    def load(cls, path: str | Path) -> "DeviceDescription":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class DiscoveryMessage:
    verb: str
    uuid: str | None = None
    device_type: str | None = None
    name: str | None = None
    location: str | None = None
    pattern: str | None = None  # SEARCH only
    tick: int = 0

    def encode(self) -> str:
        if self.verb == SEARCH:
            lines = [f"SEARCH {self.pattern}"]
        elif self.verb == RESPONSE:
            lines = ["RESPONSE"]
        else:
            lines = [f"NOTIFY {self.verb}"]
        if self.uuid is not None:
            lines.append(f"UUID: {self.uuid}")
        if self.verb in (ALIVE, RESPONSE):
            lines += [f"TYPE: {self.device_type}", f"NAME: {self.name}", f"LOCATION: {self.location}"]
        lines.append(f"TICK: {self.tick}")
        return "\n".join(lines) + "\n\n"

    @classmethod
    def decode(cls, text: str) -> "DiscoveryMessage":
        lines = [ln for ln in text.replace("\r\n", "\n").split("\n")]
        while lines and not lines[-1]:
            lines.pop()
        if not lines:
            raise errors.ParseError("empty discovery message", 1, 1)
        start = lines[0]
        headers: dict[str, str] = {}
        for n, line in enumerate(lines[1:], start=2):
            key, sep, value = line.partition(":")
            if not sep:
                raise errors.ParseError(f"malformed header {line!r}", n, 1)
            headers[key.strip().upper()] = value.strip()
        tick = int(headers.get("TICK", "0"))
        if start.startswith("SEARCH "):
            return cls(SEARCH, pattern=start[len("SEARCH "):], tick=tick)
        if start in ("NOTIFY ALIVE", "RESPONSE"):
            verb = ALIVE if start == "NOTIFY ALIVE" else RESPONSE
            try:
                return cls(verb, headers["UUID"], headers["TYPE"], headers["NAME"], headers["LOCATION"], tick=tick)
            except KeyError as exc:
                raise errors.ParseError(f"{start} without {exc.args[0]} header", 1, 1) from None
        if start == "NOTIFY BYEBYE":
            if "UUID" not in headers:
                raise errors.ParseError("NOTIFY BYEBYE without UUID header", 1, 1)
            return cls(BYEBYE, headers["UUID"], tick=tick)
        raise errors.ParseError(f"unknown start line {start!r}", 1, 1)


Listener = Callable[[DiscoveryMessage], None]
DeviceStub = Callable[[str, Any], Mapping[str, Any] | None]


class DiscoveryBus:
    """In-process, tick-driven discovery bus.

    Listeners are called synchronously in registration order, so every
    listener observes the same message order.
    """

    def __init__(self) -> None:
        self._alive: dict[str, DeviceDescription] = {}
        self._locations: dict[str, DeviceDescription] = {}
        self._listeners: list[Listener] = []
        self._stubs: dict[str, DeviceStub] = {}
        self._lock = threading.RLock()
        self.log: list[DiscoveryMessage] = []

    def subscribe(self, listener: Listener) -> None:
        with self._lock:
            self._listeners.append(listener)

    def unsubscribe(self, listener: Listener) -> None:
        with self._lock:
            self._listeners.remove(listener)

    @property
    def alive(self) -> dict[str, DeviceDescription]:
        return dict(self._alive)

    def _publish(self, message: DiscoveryMessage) -> None:
        self.log.append(message)
        for listener in list(self._listeners):
            listener(message)

    @staticmethod
    def location_for(device: DeviceDescription) -> str:
        return f"desc/{device.uuid}.json"

    def announce(self, device: DeviceDescription, tick: int = 0, location: str | None = None) -> DiscoveryMessage:
        with self._lock:
            if device.uuid in self._alive:
                raise errors.DuplicateUuid(device.uuid)
            location = location or self.location_for(device)
            self._alive[device.uuid] = device
            self._locations[location] = device
            msg = DiscoveryMessage(ALIVE, device.uuid, device.device_type, device.friendly_name, location, tick=tick)
            self._publish(msg)
            return msg

    def withdraw(self, uuid: str, tick: int = 0) -> DiscoveryMessage:
        with self._lock:
            if uuid not in self._alive:
                raise errors.UnknownUuid(uuid)
            del self._alive[uuid]
            msg = DiscoveryMessage(BYEBYE, uuid, tick=tick)
            self._publish(msg)
            return msg

    def search(self, pattern: str, tick: int = 0) -> list[DiscoveryMessage]:
        with self._lock:
            hits = [d for d in self._alive.values() if glob_match(pattern, d.device_type)]
            return [
                DiscoveryMessage(RESPONSE, d.uuid, d.device_type, d.friendly_name, self._location_of(d), tick=tick)
                for d in sorted(hits, key=lambda d: d.uuid)
            ]

    def _location_of(self, device: DeviceDescription) -> str:
        for loc, d in self._locations.items():
            if d is device:
                return loc
        return self.location_for(device)

    def describe(self, location: str) -> DeviceDescription:
        try:
            return self._locations[location]
        except KeyError:
            raise errors.UnresolvableLocation(location) from None

    # device side

    def register_stub(self, uuid: str, stub: DeviceStub) -> None:
        self._stubs[uuid] = stub

    def invoke(self, uuid: str, action: str, payload: Any) -> dict[str, Any]:
        """Forward an action to the device stub; returns evented-variable changes."""
        stub = self._stubs.get(uuid)
        if stub is None or uuid not in self._alive:
            return {}
        return dict(stub(action, payload) or {})


def scripted_device_stub(script: Mapping[str, Mapping[str, Any]]) -> DeviceStub:
    """Stub answering each action with fixed variable changes; ``"$in"`` echoes the payload."""

    def stub(action: str, payload: Any):
        changes = script.get(action, {})
        return {k: (payload if v == "$in" else v) for k, v in changes.items()}

    return stub


def _port_names(device: DeviceDescription) -> tuple[list[Port], list[Port]]:
    actions = [(s.id, a) for s in device.services for a in s.actions]
    variables = [(s.id, v) for s in device.services for v in s.variables]
    clash_a = len({a.name for _, a in actions}) != len(actions)
    clash_v = len({v.name for _, v in variables}) != len(variables)
    sinks = [Port(f"{sid}.{a.name}" if clash_a else a.name, a.input) for sid, a in actions]
    sources = [Port(f"{sid}.{v.name}" if clash_v else v.name, v.type) for sid, v in variables]
    return sinks, sources


def proxy_type(device: DeviceDescription) -> ComponentType:
    sinks, sources = _port_names(device)
    return ComponentType(
        name=re.sub(r"[^\w.:\-]", "_", device.device_type) or "device",
        behavior=PROXY_BEHAVIOR,
        properties=(PropertyDecl("uuid", PayloadType.String, device.uuid),),
        sinks=tuple(sinks),
        sources=tuple(sources),
    )


_UNSAFE = re.compile(r"[^\w.\-]")
MAX_NAME_SUFFIX = 999


@dataclass
class ProxyManager:
    """Listens on a bus and keeps one proxy component per live device."""

    container: "Container"
    bus: DiscoveryBus
    fire_rules: bool = False
    proxies: dict[str, str] = field(default_factory=dict)  # uuid -> instance id

    def __post_init__(self) -> None:
        registry = self.container.registry
        if not registry.has_behavior(PROXY_BEHAVIOR):
            self.container.register_behavior(PROXY_BEHAVIOR, self._behavior)
        self.container.proxy_manager = self
        self.bus.subscribe(self.on_message)

    def _behavior(self, state, props, delivery):
        # sinks named "<service>.<action>" only appear on clashes; the action is the last part
        action = delivery.sink.rpartition(".")[2]
        changes = self.bus.invoke(props["uuid"], action, delivery.payload)
        emissions = []
        for var, value in sorted(changes.items()):
            port = var if var in delivery.sources else next(
                (s for s in delivery.sources if s.rpartition(".")[2] == var), None
            )
            if port is not None:
                emissions.append((port, value))
        return state, emissions

    def on_message(self, message: DiscoveryMessage) -> None:
        if message.verb == ALIVE:
            device = self.bus.describe(message.location)
            self.container.clock = max(self.container.clock, message.tick)
            self.build(device)
        elif message.verb == BYEBYE and message.uuid in self.proxies:
            self.container.clock = max(self.container.clock, message.tick)
            self.remove(message.uuid)

    def _unique_name(self, friendly: str) -> str:
        base = _UNSAFE.sub("_", friendly) or "device"
        asm = self.container.assembly
        if not asm.has_name(base):
            return base
        for n in range(2, MAX_NAME_SUFFIX + 1):
            candidate = f"{base}-{n}"
            if not asm.has_name(candidate):
                return candidate
        raise errors.NameClashUnresolvable(friendly)

    def fact_key(self, device_name: str) -> str:
        return f"device.{device_name}"

    def build(self, device: DeviceDescription) -> str:
        """Create the proxy component for ``device``; returns its instance id."""
        with self.container.turn():
            if device.uuid in self.proxies:
                raise errors.DuplicateProxy(device.uuid)
            name = self._unique_name(device.friendly_name)
            inst_id = self.container.assembly.instantiate(
                proxy_type(device), name, {"uuid": device.uuid}, Origin.device(device.uuid)
            )
            self.proxies[device.uuid] = inst_id
            self.container.record_reconfigured(f"proxy+:{name}", f"device:{device.uuid}")
            self._notify_engine(name, True)
            return inst_id

    def remove(self, uuid: str) -> list[str]:
        """Destroy the proxy for ``uuid``; returns the labels of detached bindings."""
        with self.container.turn():
            inst_id = self.proxies.pop(uuid)
            asm = self.container.assembly
            inst = asm.instances[inst_id]
            name = inst.name
            labels = {b.id: f"{asm.label(b.source)} -> {asm.label(b.sink)}" for b in asm.bindings_touching(inst_id)}
            detached = asm.destroy(inst_id)
            for b in detached:
                self.container.weaver.forget_binding(b)
            out = sorted(labels[b.id] for b in detached)
            self.container.record_reconfigured(f"proxy-:{name}", "; ".join(out))
            self._notify_engine(name, False)
            return out

    def _notify_engine(self, name: str, present: bool) -> None:
        engine = self.container.engine
        if engine is None:
            return
        key = self.fact_key(name)
        if present:
            engine.assert_fact(key, True, self.container.clock, "discovery")
        else:
            engine.retract_fact(key)
        if self.fire_rules:
            engine.fire_rules()

    def publish_variable(self, uuid: str, variable: str, value: Any, tick: int | None = None) -> int:
        """A device-side evented variable changed; emit it from the proxy."""
        inst = self.container.assembly.instances[self.proxies[uuid]]
        return self.container.enqueue_event(f"{inst.name}.{variable}", value, tick)


def build_device_proxy(container: "Container", device: DeviceDescription, bus: DiscoveryBus | None = None) -> str:
    manager = container.proxy_manager
    if manager is None:
        manager = ProxyManager(container, bus or DiscoveryBus())
        container.proxy_manager = manager
    return manager.build(device)


class UdpTransport:
    """Loopback UDP carrier for discovery messages, in the same line format.

    Demo-only: the in-process bus stays the source of truth; this relays its
    messages to a socket and feeds received datagrams to a callback.
    """

    def __init__(self, host: str = "127.0.0.1", port: int = 0):
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self.sock.bind((host, port))
        self.sock.settimeout(0.2)
        self.address = self.sock.getsockname()
        self._thread: threading.Thread | None = None
        self._stop = threading.Event()

    def send(self, message: DiscoveryMessage, address: tuple[str, int]) -> None:
        self.sock.sendto(message.encode().encode("utf-8"), address)

    def listen(self, callback: Listener) -> None:
        def loop():
            while not self._stop.is_set():
                try:
                    data, _ = self.sock.recvfrom(65536)
                except (socket.timeout, OSError):
                    continue
                try:
                    callback(DiscoveryMessage.decode(data.decode("utf-8")))
                except errors.ParseError as exc:
                    log.warning("dropping malformed datagram: %s", exc)

        self._thread = threading.Thread(target=loop, name="weavecomp-udp", daemon=True)
        self._thread.start()

    def close(self) -> None:
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=1)
        self.sock.close()
