"""Component types, instances, bindings and the assembly graph.

An :class:`Assembly` is a plain data structure: it knows nothing about event
dispatch.  The :class:`~weavecomp.runtime.Container` owns one and is the only
writer while it is running.
"""

from __future__ import annotations

import enum
import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Iterator, Mapping

from . import errors

SNAPSHOT_HEADER = "# weavecomp assembly v1"


class PayloadType(enum.Enum):
    String = "String"
    Integer = "Integer"
    Boolean = "Boolean"
    Unit = "Unit"

    @classmethod
    def parse(cls, name: str) -> "PayloadType":
        try:
            return cls(name)
        except ValueError:
            raise errors.PayloadTypeMismatch(f"unknown payload type {name!r}") from None

    def accepts(self, value: Any) -> bool:
        if self is PayloadType.String:
            return isinstance(value, str)
        if self is PayloadType.Integer:
            return isinstance(value, int) and not isinstance(value, bool)
        if self is PayloadType.Boolean:
            return isinstance(value, bool)
        return value is None

    def default(self) -> Any:
        return {"String": "", "Integer": 0, "Boolean": False, "Unit": None}[self.value]

    def coerce_text(self, text: str) -> Any:
        """Parse a literal written as text (XML attributes, CLI args)."""
        if self is PayloadType.String:
            return text
        if self is PayloadType.Integer:
            try:
                return int(text.strip())
            except ValueError:
                raise errors.PayloadTypeMismatch(f"{text!r} is not an Integer") from None
        if self is PayloadType.Boolean:
            lowered = text.strip().lower()
            if lowered in ("true", "false"):
                return lowered == "true"
            raise errors.PayloadTypeMismatch(f"{text!r} is not a Boolean")
        if text.strip() not in ("", "()", "unit"):
            raise errors.PayloadTypeMismatch(f"{text!r} is not Unit")
        return None


def type_of(value: Any) -> PayloadType:
    for ptype in PayloadType:
        if ptype.accepts(value):
            return ptype
    raise errors.PayloadTypeMismatch(f"{value!r} is not a payload value")


def render_value(value: Any) -> str:
    """Single-line, unambiguous text form of a payload value."""
    if value is None:
        return "()"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    return json.dumps(value, ensure_ascii=False)


@dataclass(frozen=True)
class Origin:
    """Who created an instance or binding; lets each creator revert its own work."""

    kind: str = "manual"
    detail: str = ""

    @classmethod
    def manual(cls) -> "Origin":
        return cls()

    @classmethod
    def aspect(cls, name: str) -> "Origin":
        return cls("aspect", name)

    @classmethod
    def device(cls, uuid: str) -> "Origin":
        return cls("device", uuid)

    @classmethod
    def service(cls, endpoint: str) -> "Origin":
        return cls("service", endpoint)

    def __str__(self) -> str:
        return self.kind if self.kind == "manual" else f"{self.kind}:{self.detail}"


@dataclass(frozen=True)
class Port:
    name: str
    type: PayloadType


@dataclass(frozen=True)
class PropertyDecl:
    name: str
    type: PayloadType
    default: Any


@dataclass(frozen=True)
class ComponentType:
    name: str
    behavior: str
    properties: tuple[PropertyDecl, ...] = ()
    sinks: tuple[Port, ...] = ()
    sources: tuple[Port, ...] = ()

    def __post_init__(self) -> None:
        for label, group in (("sink", self.sinks), ("source", self.sources), ("property", self.properties)):
            seen: set[str] = set()
            for item in group:
                if item.name in seen:
                    raise errors.DuplicatePortName(f"{self.name}: duplicate {label} {item.name!r}")
                seen.add(item.name)
        for prop in self.properties:
            if not prop.type.accepts(prop.default):
                raise errors.PropertyTypeMismatch(
                    f"{self.name}.{prop.name}: default {prop.default!r} is not {prop.type.value}"
                )

    def sink(self, name: str) -> Port | None:
        return next((p for p in self.sinks if p.name == name), None)

    def source(self, name: str) -> Port | None:
        return next((p for p in self.sources if p.name == name), None)

    def property(self, name: str) -> PropertyDecl | None:
        return next((p for p in self.properties if p.name == name), None)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "ComponentType":
        def ports(key: str) -> tuple[Port, ...]:
            return tuple(Port(p["name"], PayloadType.parse(p["type"])) for p in data.get(key, ()))

        props = []
        for p in data.get("properties", ()):
            ptype = PayloadType.parse(p["type"])
            props.append(PropertyDecl(p["name"], ptype, p.get("default", ptype.default())))
        return cls(
            name=data["name"],
            behavior=data.get("behavior", "Sink"),
            properties=tuple(props),
            sinks=ports("sinks"),
            sources=ports("sources"),
        )


class TypeRegistry:
    """Append-only registry of behavior kinds and component types."""

    def __init__(self) -> None:
        self._types: dict[str, ComponentType] = {}
        self._behaviors: dict[str, Callable] = {}

    # behaviors are registered by the runtime; the registry only checks names
    def add_behavior(self, name: str, fn: Callable) -> None:
        if name in self._behaviors:
            raise errors.DuplicateBehaviorKind(name)
        self._behaviors[name] = fn

    def behavior(self, name: str) -> Callable:
        try:
            return self._behaviors[name]
        except KeyError:
            raise errors.UnknownBehaviorKind(name) from None

    def has_behavior(self, name: str) -> bool:
        return name in self._behaviors

    def define(self, spec: ComponentType) -> str:
        if spec.name in self._types:
            raise errors.DuplicateTypeName(spec.name)
        if spec.behavior not in self._behaviors:
            raise errors.UnknownBehaviorKind(f"{spec.name}: behavior {spec.behavior!r}")
        self._types[spec.name] = spec
        return spec.name

    def get(self, name: str) -> ComponentType:
        try:
            return self._types[name]
        except KeyError:
            raise errors.UnknownType(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._types

    def __iter__(self) -> Iterator[ComponentType]:
        return iter(self._types.values())


def define_component_type(registry: TypeRegistry, spec: ComponentType | Mapping[str, Any]) -> str:
    if not isinstance(spec, ComponentType):
        spec = ComponentType.from_dict(spec)
    return registry.define(spec)


@dataclass
class ComponentInstance:
    id: str
    name: str
    type: ComponentType
    properties: dict[str, Any]
    origin: Origin = Origin()
    state: Any = None


@dataclass(frozen=True)
class Endpoint:
    instance: str  # instance id
    port: str


@dataclass(frozen=True)
class Binding:
    id: str
    source: Endpoint
    sink: Endpoint
    origin: Origin = Origin()


@dataclass
class Assembly:
    """The live graph of component instances and event bindings."""

    registry: TypeRegistry
    instances: dict[str, ComponentInstance] = field(default_factory=dict)
    bindings: dict[str, Binding] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self._ids = itertools.count(1)
        self._by_name: dict[str, str] = {i.name: i.id for i in self.instances.values()}

    def _next_id(self, prefix: str) -> str:
        return f"{prefix}{next(self._ids)}"

    # lookups

    def instance(self, instance_id: str) -> ComponentInstance:
        try:
            return self.instances[instance_id]
        except KeyError:
            raise errors.UnknownInstance(instance_id) from None

    def by_name(self, name: str) -> ComponentInstance:
        try:
            return self.instances[self._by_name[name]]
        except KeyError:
            raise errors.UnknownInstance(name) from None

    def has_name(self, name: str) -> bool:
        return name in self._by_name

    def resolve(self, text: str, kind: str) -> Endpoint:
        """Resolve ``"instance.port"`` where both halves may contain dots.

        ``kind`` is ``"source"``, ``"sink"`` or ``"any"``.
        """
        found = []
        for i, ch in enumerate(text):
            if ch != ".":
                continue
            name, port = text[:i], text[i + 1:]
            inst_id = self._by_name.get(name)
            if inst_id is None:
                continue
            ctype = self.instances[inst_id].type
            if (kind in ("source", "any") and ctype.source(port)) or (
                kind in ("sink", "any") and ctype.sink(port)
            ):
                found.append(Endpoint(inst_id, port))
        if len(found) != 1:
            detail = "ambiguous" if found else "unknown"
            raise errors.UnknownEndpoint(f"{detail} {kind} endpoint {text!r}")
        return found[0]

    def port_type(self, endpoint: Endpoint, kind: str) -> PayloadType:
        inst = self.instances.get(endpoint.instance)
        port = None
        if inst is not None:
            port = inst.type.source(endpoint.port) if kind == "source" else inst.type.sink(endpoint.port)
        if port is None:
            raise errors.UnknownEndpoint(f"no {kind} {self.label(endpoint)}")
        return port.type

    def label(self, endpoint: Endpoint) -> str:
        inst = self.instances.get(endpoint.instance)
        name = inst.name if inst else endpoint.instance
        return f"{name}.{endpoint.port}"

    def bindings_from(self, endpoint: Endpoint) -> list[Binding]:
        found = [b for b in self.bindings.values() if b.source == endpoint]
        return sorted(found, key=lambda b: (self.label(b.sink), b.id))

    def bindings_touching(self, instance_id: str) -> list[Binding]:
        return [
            b for b in self.bindings.values()
            if b.source.instance == instance_id or b.sink.instance == instance_id
        ]

    def find_binding(self, source: Endpoint, sink: Endpoint) -> Binding | None:
        return next((b for b in self.bindings.values() if b.source == source and b.sink == sink), None)

    # structural editing

    def instantiate(
        self,
        type_name: str | ComponentType,
        name: str,
        overrides: Mapping[str, Any] | None = None,
        origin: Origin = Origin(),
    ) -> str:
        if isinstance(type_name, ComponentType):
            ctype = type_name
            self.registry.behavior(ctype.behavior)
        else:
            ctype = self.registry.get(type_name)
        if not name or any(ch.isspace() for ch in name):
            raise errors.DuplicateInstanceName(f"invalid instance name {name!r}")
        if name in self._by_name:
            raise errors.DuplicateInstanceName(name)
        props = {p.name: p.default for p in ctype.properties}
        for key, value in (overrides or {}).items():
            decl = ctype.property(key)
            if decl is None:
                raise errors.UnknownProperty(f"{ctype.name}.{key}")
            if not decl.type.accepts(value):
                raise errors.PropertyTypeMismatch(f"{name}.{key}: {value!r} is not {decl.type.value}")
            props[key] = value
        inst = ComponentInstance(self._next_id("i"), name, ctype, props, origin)
        self.instances[inst.id] = inst
        self._by_name[name] = inst.id
        return inst.id

    def destroy(self, instance_id: str) -> list[Binding]:
        """Remove an instance and every binding touching it; returns the removed bindings."""
        inst = self.instance(instance_id)
        detached = sorted(self.bindings_touching(instance_id), key=lambda b: b.id)
        for b in detached:
            del self.bindings[b.id]
        del self.instances[instance_id]
        del self._by_name[inst.name]
        return detached

    def connect(self, source: Endpoint, sink: Endpoint, origin: Origin = Origin()) -> str:
        src_type = self.port_type(source, "source")
        sink_type = self.port_type(sink, "sink")
        if src_type is not sink_type:
            raise errors.PayloadTypeMismatch(
                f"{self.label(source)} ({src_type.value}) -> {self.label(sink)} ({sink_type.value})"
            )
        if self.find_binding(source, sink) is not None:
            raise errors.DuplicateBinding(f"{self.label(source)} -> {self.label(sink)}")
        binding = Binding(self._next_id("b"), source, sink, origin)
        self.bindings[binding.id] = binding
        return binding.id

    def disconnect(self, binding_id: str) -> Binding:
        try:
            return self.bindings.pop(binding_id)
        except KeyError:
            raise errors.UnknownBinding(binding_id) from None

    def set_property(self, instance_id: str, name: str, value: Any) -> Any:
        inst = self.instance(instance_id)
        decl = inst.type.property(name)
        if decl is None:
            raise errors.UnknownProperty(f"{inst.name}.{name}")
        if not decl.type.accepts(value):
            raise errors.PropertyTypeMismatch(f"{inst.name}.{name}: {value!r} is not {decl.type.value}")
        old = inst.properties[name]
        inst.properties[name] = value
        return old

    # observation

    def check_integrity(self) -> None:
        """Raise AssertionError if any binding dangles or names collide."""
        names = [i.name for i in self.instances.values()]
        assert len(names) == len(set(names)), "duplicate instance names"
        assert self._by_name == {i.name: i.id for i in self.instances.values()}
        for b in self.bindings.values():
            self.port_type(b.source, "source")
            self.port_type(b.sink, "sink")

    def snapshot(self) -> str:
        inst_lines = []
        for inst in self.instances.values():
            props = " ".join(f"{k}={render_value(inst.properties[k])}" for k in sorted(inst.properties))
            line = f"I {inst.name} {inst.type.name} {inst.origin}"
            inst_lines.append(f"{line} {props}" if props else line)
        bind_lines = [
            f"B {self.label(b.source)} -> {self.label(b.sink)} {b.origin}" for b in self.bindings.values()
        ]
        return "\n".join([SNAPSHOT_HEADER, *sorted(inst_lines), *sorted(bind_lines)]) + "\n"


def snapshot(assembly: Assembly) -> str:
    return assembly.snapshot()


def load_assembly(assembly: Assembly, data: Mapping[str, Any]) -> None:
    """Populate an assembly from the JSON assembly-definition document."""
    for tdef in data.get("types", ()):
        define_component_type(assembly.registry, tdef)
    for idef in data.get("instances", ()):
        assembly.instantiate(idef["type"], idef["name"], idef.get("properties") or {})
    for bdef in data.get("bindings", ()):
        assembly.connect(assembly.resolve(bdef["from"], "source"), assembly.resolve(bdef["to"], "sink"))
