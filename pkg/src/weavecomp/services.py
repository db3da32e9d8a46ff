"""Remote service descriptors, XML envelopes, stub servers and service proxies.

The wire protocol is a small HTTP-POST-with-XML-envelope subset.  In simulated
mode a :class:`SimNetwork` answers envelopes in-process, so scenarios stay
deterministic; the bytes exchanged are identical to the HTTP path.
"""

from __future__ import annotations

import base64
import re
import threading
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import TYPE_CHECKING, Any, Callable, Mapping, Sequence
from urllib.parse import urlparse

import httpx

from . import errors
from .model import ComponentType, Origin, PayloadType, Port, PropertyDecl, render_value, type_of

if TYPE_CHECKING:
    from .runtime import Container

FAULT_CODES = ("Transport", "Timeout", "BadEnvelope", "UnknownOperation", "Application")
UNIT_SEPARATOR = "\x1f"
TICKS_PER_SECOND = 1000
DEFAULT_TIMEOUT_TICKS = 2000
PROXY_BEHAVIOR = "ServiceProxy"


@dataclass(frozen=True)
class Param:
    name: str
    type: PayloadType


@dataclass(frozen=True)
class Operation:
    name: str
    params: tuple[Param, ...]
    out: PayloadType

    @property
    def call_type(self) -> PayloadType:
        if not self.params:
            return PayloadType.Unit
        if len(self.params) == 1:
            return self.params[0].type
        return PayloadType.String


@dataclass(frozen=True)
class ServiceDescriptor:
    name: str
    endpoint: str
    operations: tuple[Operation, ...]

    def operation(self, name: str) -> Operation | None:
        return next((op for op in self.operations if op.name == name), None)


@dataclass(frozen=True)
class Fault:
    code: str
    message: str = ""

    def __str__(self) -> str:
        return f"{self.code}: {self.message}" if self.message else self.code


def _strip(tag: str) -> str:
    return tag.rpartition("}")[2]


def _parse_xml(text: str | bytes, source: str) -> ET.Element:
    try:
        return ET.fromstring(text)
    except ET.ParseError as exc:
        line, col = exc.position
        raise errors.ParseError(str(exc), line, col + 1, source) from None


def parse_service_descriptor(text: str, *, source: str = "<descriptor>") -> ServiceDescriptor:
    root = _parse_xml(text, source)
    if _strip(root.tag) != "Service":
        raise errors.ParseError(f"root element must be <Service>, found <{_strip(root.tag)}>", 1, 1, source)
    name = root.get("name")
    endpoint = root.get("endpoint")
    if not name or not endpoint:
        raise errors.ParseError("<Service> needs name and endpoint attributes", 1, 1, source)
    ops: list[Operation] = []
    for op_el in root:
        if _strip(op_el.tag) != "Operation":
            continue
        op_name = op_el.get("name")
        if not op_name:
            raise errors.ParseError("<Operation> without a name", 0, 0, source)
        if any(o.name == op_name for o in ops):
            raise errors.DuplicateOperation(f"{name}.{op_name}")
        params = []
        out = PayloadType.Unit
        for child in op_el:
            tag = _strip(child.tag)
            if tag == "In":
                params.append(Param(child.get("name", f"arg{len(params)}"), PayloadType.parse(child.get("type", "String"))))
            elif tag == "Out":
                out = PayloadType.parse(child.get("type", "Unit"))
        if len({p.name for p in params}) != len(params):
            raise errors.DuplicatePortName(f"{name}.{op_name}: duplicate parameter")
        ops.append(Operation(op_name, tuple(params), out))
    if not ops:
        raise errors.EmptyService(name)
    return ServiceDescriptor(name, endpoint, tuple(ops))


# envelopes

_XML_UNSAFE = re.compile("[^\t\n\x20-\ud7ff\ue000-\ufffd\U00010000-\U0010ffff]")


def _put_value(el: ET.Element, ptype: PayloadType, value: Any) -> None:
    el.set("type", ptype.value)
    if ptype is PayloadType.String:
        if _XML_UNSAFE.search(value):
            el.set("encoding", "base64")
            el.text = base64.b64encode(value.encode("utf-8", "surrogatepass")).decode("ascii")
        else:
            el.text = value
    elif ptype is PayloadType.Integer:
        el.text = str(value)
    elif ptype is PayloadType.Boolean:
        el.text = "true" if value else "false"


def _get_value(el: ET.Element) -> tuple[PayloadType, Any]:
    ptype = PayloadType.parse(el.get("type", "String"))
    text = el.text or ""
    if ptype is PayloadType.String:
        if el.get("encoding") == "base64":
            return ptype, base64.b64decode(text).decode("utf-8", "surrogatepass")
        return ptype, text
    return ptype, ptype.coerce_text(text)


def encode_request(operation: str, params: Sequence[tuple[str, PayloadType, Any]]) -> bytes:
    env = ET.Element("Envelope")
    op = ET.SubElement(env, "Operation", name=operation)
    for name, ptype, value in params:
        el = ET.SubElement(op, "Param", name=name)
        _put_value(el, ptype, value)
    return ET.tostring(env, encoding="utf-8", xml_declaration=False)


def decode_request(body: bytes | str) -> tuple[str, list[tuple[str, PayloadType, Any]]]:
    env = _parse_xml(body, "<request>")
    op = env.find("Operation")
    if _strip(env.tag) != "Envelope" or op is None or op.get("name") is None:
        raise errors.ParseError("request envelope needs <Envelope><Operation name=...>", 1, 1)
    params = []
    for el in op.findall("Param"):
        ptype, value = _get_value(el)
        params.append((el.get("name", ""), ptype, value))
    return op.get("name"), params


def encode_response(result: Any, result_type: PayloadType | None = None) -> bytes:
    env = ET.Element("Envelope")
    if isinstance(result, Fault):
        el = ET.SubElement(env, "Fault", code=result.code)
        el.text = _XML_UNSAFE.sub("\ufffd", result.message)
    else:
        el = ET.SubElement(env, "Result")
        _put_value(el, result_type or type_of(result), result)
    return ET.tostring(env, encoding="utf-8", xml_declaration=False)


def decode_response(body: bytes | str) -> tuple[PayloadType, Any] | Fault:
    env = _parse_xml(body, "<response>")
    if _strip(env.tag) != "Envelope":
        raise errors.ParseError("response root must be <Envelope>", 1, 1)
    fault = env.find("Fault")
    if fault is not None:
        return Fault(fault.get("code", "Application"), fault.text or "")
    result = env.find("Result")
    if result is None:
        raise errors.ParseError("response has neither <Result> nor <Fault>", 1, 1)
    return _get_value(result)


# stub server

StubBehavior = Callable[[list[Any]], Any]


def canned(value: Any) -> StubBehavior:
    return lambda args: value


def echo() -> StubBehavior:
    return lambda args: args[0] if args else None


def fault(code: str, message: str = "") -> StubBehavior:
    return lambda args: Fault(code, message)


def scripted(table: Mapping[Any, Any], default: Any = Fault("Application", "no matching entry")) -> StubBehavior:
    """Answer by looking up the first argument (all arguments joined when several)."""

    def behave(args):
        key = args[0] if len(args) == 1 else UNIT_SEPARATOR.join(str(a) for a in args)
        return table.get(key, default)

    return behave


def behavior_from_config(data: Mapping[str, Any]) -> StubBehavior:
    kind = data.get("kind")
    if kind == "canned":
        return canned(data["value"])
    if kind == "echo":
        return echo()
    if kind == "fault":
        return fault(data.get("code", "Application"), data.get("message", ""))
    if kind == "scripted":
        default = data.get("default")
        if default is None or isinstance(default, Mapping):
            spec = default or {"code": "Application", "message": "no matching entry"}
            default = Fault(spec.get("code", "Application"), spec.get("message", ""))
        return scripted(dict(data.get("table", {})), default)
    raise errors.ConfigError(f"unknown stub behavior {kind!r}")


@dataclass(frozen=True)
class StubHandle:
    stub: "StubServer"
    operation: str


class StubServer:
    """Test double for a remote service; records every request envelope."""

    def __init__(self, name: str = "stub"):
        self.name = name
        self._ops: dict[str, StubBehavior] = {}
        self.received: list[bytes] = []
        self._lock = threading.Lock()

    def register(self, operation: str, behavior: StubBehavior) -> StubHandle:
        with self._lock:
            if operation in self._ops:
                raise errors.DuplicateStub(operation)
            self._ops[operation] = behavior
        return StubHandle(self, operation)

    def handle(self, body: bytes) -> bytes:
        with self._lock:
            self.received.append(bytes(body))
            behavior = None
            try:
                operation, params = decode_request(body)
                behavior = self._ops.get(operation)
            except errors.ParseError as exc:
                return encode_response(Fault("BadEnvelope", str(exc)))
        if behavior is None:
            return encode_response(Fault("UnknownOperation", operation))
        try:
            result = behavior([value for _, _, value in params])
        except Exception as exc:
            return encode_response(Fault("Application", str(exc)))
        return encode_response(result)

    def serve_http(self, host: str = "127.0.0.1", port: int = 0) -> "HttpStub":
        return HttpStub(self, host, port)


def stub_register(stub: StubServer, operation: str, behavior: StubBehavior) -> StubHandle:
    return stub.register(operation, behavior)


class HttpStub:
    """A :class:`StubServer` listening for POSTs on a loopback port."""

    def __init__(self, stub: StubServer, host: str, port: int):
        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):  # noqa: N802
                length = int(self.headers.get("Content-Length", 0))
                reply = stub.handle(self.rfile.read(length))
                self.send_response(200)
                self.send_header("Content-Type", "application/xml")
                self.send_header("Content-Length", str(len(reply)))
                self.end_headers()
                self.wfile.write(reply)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer((host, port), Handler)
        self.server.daemon_threads = True
        self.host, self.port = self.server.server_address[:2]
        self._thread = threading.Thread(target=self.server.serve_forever, name="weavecomp-stub", daemon=True)
        self._thread.start()

    def url(self, path: str = "/") -> str:
        return f"http://{self.host}:{self.port}{path}"

    def close(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        self._thread.join(timeout=2)

    def __enter__(self) -> "HttpStub":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


# invocation

class SimNetwork:
    """Endpoint-to-stub table answered in-process (simulated mode)."""

    def __init__(self) -> None:
        self.endpoints: dict[str, StubServer] = {}

    def attach(self, endpoint: str, stub: StubServer) -> None:
        self.endpoints[endpoint] = stub

    def stub_for(self, endpoint: str) -> StubServer:
        return self.endpoints.setdefault(endpoint, StubServer(endpoint))


def check_endpoint(endpoint: str) -> None:
    parsed = urlparse(endpoint)
    if parsed.scheme not in ("http", "https", "sim") or not parsed.netloc:
        raise errors.MalformedEndpoint(endpoint)


def invoke_remote(
    endpoint: str,
    operation: Operation,
    args: Sequence[Any],
    *,
    network: SimNetwork | None = None,
    timeout_ticks: int = DEFAULT_TIMEOUT_TICKS,
) -> Any:
    """Call ``operation`` at ``endpoint``; returns the result value or a :class:`Fault`."""
    if len(args) != len(operation.params):
        return Fault("BadEnvelope", f"{operation.name} takes {len(operation.params)} argument(s), got {len(args)}")
    for param, value in zip(operation.params, args):
        if not param.type.accepts(value):
            return Fault("BadEnvelope", f"{param.name}: {value!r} is not {param.type.value}")
    body = encode_request(operation.name, [(p.name, p.type, v) for p, v in zip(operation.params, args)])
    if network is not None and endpoint in network.endpoints:
        reply = network.endpoints[endpoint].handle(body)
    else:
        reply = _post(endpoint, body, timeout_ticks / TICKS_PER_SECOND)
        if isinstance(reply, Fault):
            return reply
    try:
        decoded = decode_response(reply)
    except errors.WeaveCompError as exc:
        return Fault("BadEnvelope", str(exc))
    if isinstance(decoded, Fault):
        if decoded.code not in FAULT_CODES:
            return Fault("Application", str(decoded))
        return decoded
    ptype, value = decoded
    if ptype is not operation.out:
        return Fault("BadEnvelope", f"result is {ptype.value}, {operation.out.value} declared")
    return value


def _post(endpoint: str, body: bytes, timeout: float) -> bytes | Fault:
    if urlparse(endpoint).scheme not in ("http", "https"):
        return Fault("Transport", f"no route to {endpoint}")
    try:
        resp = httpx.post(endpoint, content=body, headers={"Content-Type": "application/xml"}, timeout=timeout)
    except httpx.TimeoutException as exc:
        return Fault("Timeout", str(exc) or "deadline exceeded")
    except httpx.HTTPError as exc:
        return Fault("Transport", str(exc) or type(exc).__name__)
    if resp.status_code != 200:
        return Fault("Transport", f"HTTP {resp.status_code}")
    return resp.content


# proxies

@dataclass
class ServiceProxies:
    """Builds service proxy components for one container."""

    container: "Container"
    network: SimNetwork = field(default_factory=SimNetwork)
    timeout_ticks: int = DEFAULT_TIMEOUT_TICKS
    descriptors: dict[tuple[str, str], ServiceDescriptor] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.container.registry.has_behavior(PROXY_BEHAVIOR):
            self.container.register_behavior(PROXY_BEHAVIOR, self._behavior)
        self.container.service_proxies = self

    def _behavior(self, state, props, delivery):
        descriptor = self.descriptors[(props["endpoint"], props["service"])]
        op_name = delivery.sink[: -len(".call")]
        op = descriptor.operation(op_name)
        args = split_args(op, delivery.payload)
        if isinstance(args, Fault):
            outcome = args
        else:
            outcome = invoke_remote(
                descriptor.endpoint, op, args, network=self.network, timeout_ticks=self.timeout_ticks
            )
        if isinstance(outcome, Fault):
            return state, [(f"{op.name}.fault", str(outcome))]
        return state, [(f"{op.name}.result", outcome)]

    def build(self, descriptor: ServiceDescriptor, name: str | None = None) -> str:
        check_endpoint(descriptor.endpoint)
        key = (descriptor.endpoint, descriptor.name)
        with self.container.turn():
            if key in self.descriptors:
                raise errors.DuplicateProxy(f"{descriptor.name} at {descriptor.endpoint}")
            ctype = proxy_type(descriptor)
            inst_id = self.container.assembly.instantiate(
                ctype,
                name or descriptor.name,
                {"endpoint": descriptor.endpoint, "service": descriptor.name},
                Origin.service(descriptor.endpoint),
            )
            self.descriptors[key] = descriptor
            self.container.record_reconfigured(f"proxy+:{name or descriptor.name}", f"service:{descriptor.endpoint}")
            return inst_id


def proxy_type(descriptor: ServiceDescriptor) -> ComponentType:
    sinks = tuple(Port(f"{op.name}.call", op.call_type) for op in descriptor.operations)
    sources = []
    for op in descriptor.operations:
        sources += [Port(f"{op.name}.result", op.out), Port(f"{op.name}.fault", PayloadType.String)]
    return ComponentType(
        name=descriptor.name,
        behavior=PROXY_BEHAVIOR,
        properties=(
            PropertyDecl("endpoint", PayloadType.String, descriptor.endpoint),
            PropertyDecl("service", PayloadType.String, descriptor.name),
        ),
        sinks=sinks,
        sources=tuple(sources),
    )


def split_args(op: Operation, payload: Any) -> list[Any] | Fault:
    if not op.params:
        return []
    if len(op.params) == 1:
        return [payload]
    parts = payload.split(UNIT_SEPARATOR)
    if len(parts) != len(op.params):
        return Fault("BadEnvelope", f"{op.name} expects {len(op.params)} fields, got {len(parts)}")
    try:
        return [p.type.coerce_text(text) for p, text in zip(op.params, parts)]
    except errors.PayloadTypeMismatch as exc:
        return Fault("BadEnvelope", str(exc))


def join_args(values: Sequence[Any]) -> str:
    """Flatten several arguments into one String payload for a multi-parameter call sink."""
    return UNIT_SEPARATOR.join(v if isinstance(v, str) else render_value(v) for v in values)


def build_service_proxy(container: "Container", descriptor: ServiceDescriptor) -> str:
    proxies = container.service_proxies or ServiceProxies(container)
    return proxies.build(descriptor)
