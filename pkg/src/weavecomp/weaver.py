"""Weaving and unweaving aspect assemblies into a container's assembly.

Each applied aspect keeps an ownership record (the instances and bindings it
created, the bindings it suppressed) so that unweaving reverts exactly its own
contribution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable

from . import errors
from .aspects import AspectAssembly, Pointcut, Ref
from .glob import glob_match
from .model import Assembly, Binding, Endpoint, Origin

if TYPE_CHECKING:
    from .runtime import Container


@dataclass(frozen=True)
class JoinPoint:
    instance: str
    port: str | None = None

    def __str__(self) -> str:
        return self.instance if self.port is None else f"{self.instance}.{self.port}"


def match_pointcut(pointcut: Pointcut, assembly: Assembly) -> list[JoinPoint]:
    found = []
    for inst in assembly.instances.values():
        if not glob_match(pointcut.instance_pattern, inst.name):
            continue
        if pointcut.type_pattern is not None and not glob_match(pointcut.type_pattern, inst.type.name):
            continue
        if pointcut.target == "instance":
            found.append(JoinPoint(inst.name))
            continue
        ports = inst.type.sources if pointcut.target == "source" else inst.type.sinks
        found.extend(JoinPoint(inst.name, p.name) for p in ports if glob_match(pointcut.port_pattern, p.name))
    return sorted(found, key=lambda jp: (jp.instance, jp.port or ""))


@dataclass(frozen=True)
class SuppressedBinding:
    source: str  # endpoint labels; ids do not survive a destroy
    sink: str
    origin: Origin

    def __str__(self) -> str:
        return f"{self.source} -> {self.sink}"


@dataclass
class Application:
    """Ownership record of one applied aspect."""

    aspect: AspectAssembly
    instances: list[str] = field(default_factory=list)
    bindings: list[str] = field(default_factory=list)
    suppressed: list[SuppressedBinding] = field(default_factory=list)


@dataclass
class AspectWeaveResult:
    aspect: str
    created_instances: list[str] = field(default_factory=list)
    created_bindings: list[str] = field(default_factory=list)
    removed_bindings: list[str] = field(default_factory=list)


@dataclass
class WeaveReport:
    aspects: list[AspectWeaveResult] = field(default_factory=list)

    def lines(self) -> list[str]:
        out = []
        for a in self.aspects:
            out.append(f"weave {a.aspect}")
            out += [f"  + instance {n}" for n in a.created_instances]
            out += [f"  + binding {b}" for b in a.created_bindings]
            out += [f"  - binding {b}" for b in a.removed_bindings]
        return out


@dataclass
class RestoreReport:
    aspect: str
    removed_instances: list[str] = field(default_factory=list)
    removed_bindings: list[str] = field(default_factory=list)
    force_detached: list[str] = field(default_factory=list)
    restored: list[str] = field(default_factory=list)
    dangling: list[str] = field(default_factory=list)  # suppressed bindings that could not come back


class Weaver:
    def __init__(self, container: "Container"):
        self.container = container
        self.library: dict[str, AspectAssembly] = {}
        self.applied: dict[str, Application] = {}
        self.strict = False

    @property
    def assembly(self) -> Assembly:
        return self.container.assembly

    def define(self, aspect: AspectAssembly) -> None:
        if aspect.name in self.library and self.library[aspect.name] != aspect:
            raise errors.ConfigError(f"aspect {aspect.name!r} defined twice")
        self.library[aspect.name] = aspect

    def lookup(self, name: str) -> AspectAssembly:
        try:
            return self.library[name]
        except KeyError:
            raise errors.UnknownAspect(name) from None

    def is_applied(self, name: str) -> bool:
        return name in self.applied

    # weaving

    def weave(self, aspects: Iterable[AspectAssembly | str], *, strict: bool | None = None) -> WeaveReport:
        strict = self.strict if strict is None else strict
        resolved = [self.lookup(a) if isinstance(a, str) else a for a in aspects]
        names = [a.name for a in resolved]
        if len(set(names)) != len(names):
            raise errors.AlreadyApplied(f"aspect listed twice in {names}")
        for a in resolved:
            if a.name in self.applied:
                raise errors.AlreadyApplied(a.name)
        report = WeaveReport()
        with self.container.turn():
            for aspect in sorted(resolved, key=lambda a: (a.priority, a.name)):
                result = AspectWeaveResult(aspect.name)
                app = Application(aspect)
                try:
                    self._apply(aspect, app, result, strict)
                except errors.WeaveCompError as exc:
                    self._rollback(app)
                    raise errors.WeaveError(aspect.name, exc, report) from exc
                self.library.setdefault(aspect.name, aspect)
                self.applied[aspect.name] = app
                report.aspects.append(result)
                self.container.record_reconfigured(
                    f"weave:{aspect.name}",
                    f"+{len(result.created_instances)}i +{len(result.created_bindings)}b "
                    f"-{len(result.removed_bindings)}b",
                )
        return report

    def _apply(self, aspect: AspectAssembly, app: Application, result: AspectWeaveResult, strict: bool) -> None:
        asm = self.assembly
        matches = {pc.name: match_pointcut(pc, asm) for pc in aspect.pointcuts}
        for unbind in aspect.graft.unbinds:
            victims = [
                b for b in asm.bindings.values()
                if glob_match(unbind.source_pattern, asm.label(b.source))
                and glob_match(unbind.sink_pattern, asm.label(b.sink))
            ]
            for b in sorted(victims, key=lambda b: (asm.label(b.source), asm.label(b.sink))):
                record = SuppressedBinding(asm.label(b.source), asm.label(b.sink), b.origin)
                asm.disconnect(b.id)
                self._disown(b.id)
                app.suppressed.append(record)
                result.removed_bindings.append(str(record))
        added: dict[str, str] = {}
        for comp in aspect.graft.components:
            name = aspect.instance_name(comp.name)
            inst_id = asm.instantiate(comp.type_name, name, dict(comp.properties), Origin.aspect(aspect.name))
            added[comp.name] = inst_id
            app.instances.append(inst_id)
            result.created_instances.append(name)
        for bind in aspect.graft.binds:
            sources = self._expand(bind.source, "source", aspect, matches, added)
            sinks = self._expand(bind.sink, "sink", aspect, matches, added)
            if not sources or not sinks:
                if strict:
                    raise errors.EmptyJoinPointRequired(f"{aspect.name}: bind {bind.source} -> {bind.sink}")
                continue
            for src in sources:
                for snk in sinks:
                    if asm.find_binding(src, snk) is not None:
                        continue  # already there; not ours to remove later
                    bid = asm.connect(src, snk, Origin.aspect(aspect.name))
                    app.bindings.append(bid)
                    result.created_bindings.append(f"{asm.label(src)} -> {asm.label(snk)}")

    def _expand(self, ref: Ref, direction: str, aspect, matches, added) -> list[Endpoint]:
        asm = self.assembly
        if ref.kind == "added":
            ep = Endpoint(added[ref.name], ref.port)
            asm.port_type(ep, direction)
            return [ep]
        if ref.kind == "literal":
            return [asm.resolve(ref.name, direction)]
        pc = aspect.pointcut(ref.name)
        eps = []
        for jp in matches[ref.name]:
            inst = asm.by_name(jp.instance)
            port = jp.port if pc.target != "instance" else ref.port
            has = inst.type.source(port) if direction == "source" else inst.type.sink(port)
            if has is not None:
                eps.append(Endpoint(inst.id, port))
        return eps

    def _disown(self, binding_id: str) -> None:
        for other in self.applied.values():
            if binding_id in other.bindings:
                other.bindings.remove(binding_id)

    def _rollback(self, app: Application) -> None:
        asm = self.assembly
        for bid in reversed(app.bindings):
            asm.bindings.pop(bid, None)
        for iid in reversed(app.instances):
            if iid in asm.instances:
                asm.destroy(iid)
        for record in reversed(app.suppressed):
            self._restore(record)

    def _restore(self, record: SuppressedBinding) -> bool:
        asm = self.assembly
        try:
            src = asm.resolve(record.source, "source")
            snk = asm.resolve(record.sink, "sink")
        except errors.UnknownEndpoint:
            return False
        if asm.find_binding(src, snk) is None:
            bid = asm.connect(src, snk, record.origin)
            owner = self.applied.get(record.origin.detail) if record.origin.kind == "aspect" else None
            if owner is not None:
                owner.bindings.append(bid)
        return True

    # unweaving

    def unweave(self, name: str) -> RestoreReport:
        app = self.applied.get(name)
        if app is None:
            raise errors.NotApplied(name)
        asm = self.assembly
        report = RestoreReport(name)
        with self.container.turn():
            for bid in app.bindings:
                b = asm.bindings.get(bid)
                if b is not None:
                    report.removed_bindings.append(_label(asm, b))
                    asm.disconnect(bid)
            for iid in app.instances:
                if iid not in asm.instances:
                    continue
                report.removed_instances.append(asm.instances[iid].name)
                labels = {b.id: _label(asm, b) for b in asm.bindings_touching(iid)}
                for b in asm.destroy(iid):
                    report.force_detached.append(labels[b.id])
                    self._disown(b.id)
            del self.applied[name]
            for other in self.applied.values():
                other.suppressed = [s for s in other.suppressed if s.origin != Origin.aspect(name)]
            for record in app.suppressed:
                if self._restore(record):
                    report.restored.append(str(record))
                else:
                    report.dangling.append(str(record))
            report.force_detached.sort()
            self.container.record_reconfigured(
                f"unweave:{name}",
                f"-{len(report.removed_instances)}i -{len(report.removed_bindings)}b "
                f"~{len(report.force_detached)}b +{len(report.restored)}b !{len(report.dangling)}",
            )
        return report

    def forget_binding(self, binding: Binding) -> None:
        """Drop a destroyed binding from whichever aspect owned it."""
        self._disown(binding.id)


def _label(asm: Assembly, b: Binding) -> str:
    return f"{asm.label(b.source)} -> {asm.label(b.sink)}"


def weave(container: "Container", aspects: Iterable[AspectAssembly | str], *, strict: bool | None = None) -> WeaveReport:
    return container.weaver.weave(aspects, strict=strict)


def unweave(container: "Container", name: str) -> RestoreReport:
    return container.weaver.unweave(name)
