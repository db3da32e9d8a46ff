"""Parser for the aspect-assembly language.

Grammar (``#`` starts a comment)::

    aspect    := "aspect" NAME ["priority" INT] pointcut* "graft" stmt* "end"
    pointcut  := "pointcut" NAME ":" "instance" PATTERN ["type" PATTERN]
                 [("source" | "sink") PATTERN]
    stmt      := "add" "component" NAME "type" NAME ["{" prop ("," prop)* "}"]
               | "bind" ref "->" ref
               | "unbind" PATTERN "->" PATTERN
    prop      := NAME "=" literal
    literal   := STRING | INT | "true" | "false" | "()"
    ref       := NAME | NAME "." PORT | STRING

A bare ``ref`` names a source/sink pointcut; ``pc.port`` picks a port on the
instances an instance pointcut matched; ``decl.port`` addresses a component
added by the same graft; anything else is a literal ``instance.port``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any

from . import errors
from .model import TypeRegistry

KEYWORDS = {"aspect", "priority", "pointcut", "instance", "source", "sink", "graft", "add", "bind", "unbind", "end"}


@dataclass(frozen=True)
class Pointcut:
    name: str
    target: str  # "instance" | "source" | "sink"
    instance_pattern: str
    port_pattern: str | None = None
    type_pattern: str | None = None


@dataclass(frozen=True)
class AddComponent:
    name: str
    type_name: str
    properties: tuple[tuple[str, Any], ...] = ()


@dataclass(frozen=True)
class Ref:
    kind: str  # "pointcut" | "added" | "literal"
    name: str
    port: str | None = None

    def __str__(self) -> str:
        return self.name if self.port is None else f"{self.name}.{self.port}"


@dataclass(frozen=True)
class Bind:
    source: Ref
    sink: Ref


@dataclass(frozen=True)
class Unbind:
    source_pattern: str
    sink_pattern: str


@dataclass(frozen=True)
class Graft:
    components: tuple[AddComponent, ...] = ()
    binds: tuple[Bind, ...] = ()
    unbinds: tuple[Unbind, ...] = ()


@dataclass(frozen=True)
class AspectAssembly:
    name: str
    priority: int = 0
    pointcuts: tuple[Pointcut, ...] = ()
    graft: Graft = field(default_factory=Graft)

    def pointcut(self, name: str) -> Pointcut | None:
        return next((p for p in self.pointcuts if p.name == name), None)

    def instance_name(self, declared: str) -> str:
        return f"{self.name}.{declared}"


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<arrow>->)
  | (?P<unit>\(\))
  | (?P<int>-?\d+(?![\w.]))
  | (?P<name>[A-Za-z_][\w.\-]*)
  | (?P<punct>[:{}=,])
    """,
    re.VERBOSE,
)

_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", '"': '"', "\\": "\\"}


@dataclass(frozen=True)
class _Tok:
    kind: str
    text: str
    value: Any
    line: int
    col: int


def _tokenize(text: str, source: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            raise errors.ParseError(f"unexpected character {text[pos]!r}", line, col, source)
        kind = m.lastgroup
        raw = m.group()
        if kind == "nl":
            line, line_start = line + 1, m.end()
        elif kind == "string":
            body = re.sub(r"\\(.)", lambda e: _ESCAPES.get(e.group(1), e.group(1)), raw[1:-1])
            toks.append(_Tok("string", raw, body, line, col))
        elif kind == "int":
            toks.append(_Tok("int", raw, int(raw), line, col))
        elif kind == "name":
            toks.append(_Tok("keyword" if raw in KEYWORDS else "name", raw, raw, line, col))
        elif kind in ("arrow", "punct", "unit"):
            toks.append(_Tok("punct", raw, raw, line, col))
        pos = m.end()
    toks.append(_Tok("eof", "", None, line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str, source: str, registry: TypeRegistry | None):
        self.toks = _tokenize(text, source)
        self.i = 0
        self.source = source
        self.registry = registry

    def peek(self) -> _Tok:
        return self.toks[self.i]

    def error(self, message: str, tok: _Tok | None = None) -> errors.ParseError:
        tok = tok or self.peek()
        return errors.ParseError(message, tok.line, tok.col, self.source)

    def take(self, kind: str, text: str | None = None) -> _Tok:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            got = tok.text or "end of input"
            raise self.error(f"expected {want}, found {got!r}")
        self.i += 1
        return tok

    def accept(self, kind: str, text: str | None = None) -> _Tok | None:
        tok = self.peek()
        if tok.kind == kind and (text is None or tok.text == text):
            self.i += 1
            return tok
        return None

    def pattern(self) -> str:
        tok = self.peek()
        if tok.kind in ("string", "name"):
            self.i += 1
            return tok.value
        raise self.error(f"expected a pattern, found {tok.text!r}")

    def literal(self) -> Any:
        tok = self.peek()
        self.i += 1
        if tok.kind in ("string", "int"):
            return tok.value
        if tok.kind == "name" and tok.text in ("true", "false"):
            return tok.text == "true"
        if tok.kind == "punct" and tok.text == "()":
            return None
        self.i -= 1
        raise self.error(f"expected a literal, found {tok.text!r}")

    def aspects(self) -> list[AspectAssembly]:
        found = []
        while self.peek().kind != "eof":
            found.append(self.aspect())
        return found

    def aspect(self) -> AspectAssembly:
        self.take("keyword", "aspect")
        name_tok = self.take("name")
        if "." in name_tok.text:
            raise self.error("aspect names may not contain '.'", name_tok)
        priority = self.take("int").value if self.accept("keyword", "priority") else 0
        pointcuts: list[Pointcut] = []
        while self.accept("keyword", "pointcut"):
            pc = self.pointcut()
            if any(p.name == pc.name for p in pointcuts):
                raise self.error(f"pointcut {pc.name!r} declared twice")
            pointcuts.append(pc)
        self.take("keyword", "graft")
        graft = self.graft({p.name: p for p in pointcuts})
        self.take("keyword", "end")
        return AspectAssembly(name_tok.text, priority, tuple(pointcuts), graft)

    def pointcut(self) -> Pointcut:
        name_tok = self.take("name")
        if "." in name_tok.text:
            raise self.error("pointcut names may not contain '.'", name_tok)
        self.take("punct", ":")
        self.take("keyword", "instance")
        inst = self.pattern()
        type_pattern = None
        if self.peek().kind == "name" and self.peek().text == "type":
            self.i += 1
            type_pattern = self.pattern()
        for target in ("source", "sink"):
            if self.accept("keyword", target):
                return Pointcut(name_tok.text, target, inst, self.pattern(), type_pattern)
        return Pointcut(name_tok.text, "instance", inst, None, type_pattern)

    def graft(self, pointcuts: dict[str, Pointcut]) -> Graft:
        components: list[AddComponent] = []
        binds: list[Bind] = []
        unbinds: list[Unbind] = []
        while True:
            if self.accept("keyword", "add"):
                comp = self.add_component()
                if any(c.name == comp.name for c in components):
                    raise self.error(f"component {comp.name!r} added twice")
                components.append(comp)
            elif self.accept("keyword", "bind"):
                added = {c.name for c in components}
                src = self.ref(pointcuts, added, "source")
                self.take("punct", "->")
                binds.append(Bind(src, self.ref(pointcuts, added, "sink")))
            elif self.accept("keyword", "unbind"):
                src = self.pattern()
                self.take("punct", "->")
                unbinds.append(Unbind(src, self.pattern()))
            else:
                return Graft(tuple(components), tuple(binds), tuple(unbinds))

    def add_component(self) -> AddComponent:
        tok = self.peek()
        if not (tok.kind == "name" and tok.text == "component"):
            raise self.error("expected 'component'")
        self.i += 1
        name_tok = self.take("name")
        if "." in name_tok.text:
            raise self.error("component names may not contain '.'", name_tok)
        tok = self.take("name")
        if tok.text != "type":
            raise self.error("expected 'type'", tok)
        type_tok = self.take("name")
        if self.registry is not None and type_tok.text not in self.registry:
            raise errors.UnknownType(f"{self.source}:{type_tok.line}: component type {type_tok.text!r}")
        props: list[tuple[str, Any]] = []
        if self.accept("punct", "{"):
            while not self.accept("punct", "}"):
                key = self.take("name").text
                self.take("punct", "=")
                props.append((key, self.literal()))
                self.accept("punct", ",")
        return AddComponent(name_tok.text, type_tok.text, tuple(props))

    def ref(self, pointcuts: dict[str, Pointcut], added: set[str], direction: str) -> Ref:
        tok = self.peek()
        if tok.kind == "string":
            self.i += 1
            return Ref("literal", tok.value)
        tok = self.take("name")
        head, _, port = tok.text.partition(".")
        if head in pointcuts:
            pc = pointcuts[head]
            if pc.target == "instance":
                if not port:
                    raise self.error(f"instance pointcut {head!r} needs a port: {head}.<port>", tok)
            elif port:
                raise self.error(f"pointcut {head!r} already selects ports", tok)
            elif pc.target != direction:
                raise self.error(f"pointcut {head!r} selects {pc.target}s, a {direction} is needed", tok)
            return Ref("pointcut", head, port or None)
        if not port:
            raise errors.UnresolvedPointcutRef(f"{self.source}:{tok.line}:{tok.col}: {head!r}")
        if head in added:
            return Ref("added", head, port)
        return Ref("literal", tok.text)


def parse_aspects(text: str, *, source: str = "<aspect>", registry: TypeRegistry | None = None) -> list[AspectAssembly]:
    return _Parser(text, source, registry).aspects()


def parse_aspect(text: str, *, source: str = "<aspect>", registry: TypeRegistry | None = None) -> AspectAssembly:
    found = parse_aspects(text, source=source, registry=registry)
    if len(found) != 1:
        raise errors.ParseError(f"expected exactly one aspect, found {len(found)}", 0, 0, source)
    return found[0]
