"""Sequential/conditional workflows acting on a container.

A workflow file is JSON::

    {"name": "AuthFlow",
     "body": [
       {"activity": "InvokeSink", "endpoint": "rfid1.simulate", "value": "Felhi"},
       {"activity": "EvaluateRules"},
       {"activity": "Terminate"}]}

Activities: ``Sequence`` (``body``), ``IfElse`` (``condition``, ``then``,
``else``), ``InvokeSink`` (``endpoint``, ``value``), ``AssertFact`` (``key``,
``value``; omitted value retracts), ``WeaveAspect``/``UnweaveAspect``
(``aspect``), ``EvaluateRules``, ``Delay`` (``ticks``) and ``Terminate``.
Conditions are the named conditions of the loaded rule set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Mapping

from . import errors
from .model import render_value, type_of

if TYPE_CHECKING:
    from .rules import RulesEngine
    from .runtime import Container

ACTIVITIES = (
    "Sequence", "IfElse", "InvokeSink", "AssertFact", "WeaveAspect",
    "UnweaveAspect", "EvaluateRules", "Delay", "Terminate",
)


@dataclass(frozen=True)
class Activity:
    kind: str
    args: tuple[tuple[str, Any], ...] = ()
    body: tuple["Activity", ...] = ()
    orelse: tuple["Activity", ...] = ()

    def arg(self, name: str, default: Any = None) -> Any:
        return dict(self.args).get(name, default)


@dataclass(frozen=True)
class WorkflowDefinition:
    name: str
    body: tuple[Activity, ...]

    def walk(self):
        stack = list(self.body)
        while stack:
            act = stack.pop()
            yield act
            stack.extend(act.body)
            stack.extend(act.orelse)


def _activity(data: Mapping[str, Any], where: str) -> Activity:
    kind = data.get("activity")
    if kind not in ACTIVITIES:
        raise errors.ParseError(f"{where}: unknown activity {kind!r}", 0, 0)
    args = tuple(sorted((k, v) for k, v in data.items() if k not in ("activity", "body", "then", "else")))
    if kind == "Sequence":
        body = tuple(_activity(a, f"{where}.{i}") for i, a in enumerate(data.get("body", ())))
        return Activity(kind, args, body)
    if kind == "IfElse":
        if "condition" not in data:
            raise errors.ParseError(f"{where}: IfElse needs a condition", 0, 0)
        then = tuple(_activity(a, f"{where}.then.{i}") for i, a in enumerate(data.get("then", ())))
        orelse = tuple(_activity(a, f"{where}.else.{i}") for i, a in enumerate(data.get("else", ())))
        return Activity(kind, args, then, orelse)
    required = {"InvokeSink": ("endpoint",), "AssertFact": ("key",), "WeaveAspect": ("aspect",),
                "UnweaveAspect": ("aspect",), "Delay": ("ticks",)}.get(kind, ())
    for key in required:
        if key not in data:
            raise errors.ParseError(f"{where}: {kind} needs {key!r}", 0, 0)
    if kind == "Delay" and (not isinstance(data["ticks"], int) or data["ticks"] < 0):
        raise errors.ParseError(f"{where}: Delay ticks must be a non-negative integer", 0, 0)
    return Activity(kind, args)


def parse_workflow(data: Mapping[str, Any] | str) -> WorkflowDefinition:
    if isinstance(data, str):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as exc:
            raise errors.ParseError(exc.msg, exc.lineno, exc.colno, "<workflow>") from None
    name = data.get("name")
    if not name:
        raise errors.ParseError("workflow needs a name", 0, 0, "<workflow>")
    return WorkflowDefinition(name, tuple(_activity(a, f"{name}.{i}") for i, a in enumerate(data.get("body", ()))))


def load_workflow(path: str | Path) -> WorkflowDefinition:
    return parse_workflow(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class WorkflowRecord:
    tick: int
    path: str
    activity: str
    detail: str = ""

    def line(self) -> str:
        return f"{self.tick}\t{self.path}\t{self.activity}\t{self.detail}"


@dataclass
class WorkflowTrace:
    workflow: str
    records: list[WorkflowRecord] = field(default_factory=list)
    status: str = "running"  # completed | terminated | failed

    def serialize(self) -> str:
        return "".join(r.line() + "\n" for r in self.records)


class _Terminate(Exception):
    pass


def check_references(workflow: WorkflowDefinition, engine: "RulesEngine") -> None:
    """Fail unless every condition and aspect the workflow names is known."""
    for act in workflow.walk():
        if act.kind == "IfElse" and act.arg("condition") not in engine.rules.conditions:
            raise errors.UnknownConditionRef(f"{workflow.name}: {act.arg('condition')!r}")
        if act.kind in ("WeaveAspect", "UnweaveAspect"):
            engine.container.weaver.lookup(act.arg("aspect"))


def register_workflow(engine: "RulesEngine", workflow: WorkflowDefinition) -> None:
    check_references(workflow, engine)
    if workflow.name in engine.workflows:
        raise errors.ConfigError(f"workflow {workflow.name!r} defined twice")
    engine.workflows[workflow.name] = workflow


def run_workflow(engine: "RulesEngine", container: "Container", name: str, start_tick: int | None = None) -> WorkflowTrace:
    try:
        workflow = engine.workflows[name]
    except KeyError:
        raise errors.UnknownWorkflow(name) from None
    if start_tick is not None:
        container.clock = max(container.clock, start_tick)
    trace = WorkflowTrace(name)
    try:
        _run_body(engine, container, workflow.body, name, trace)
        trace.status = "completed"
    except _Terminate:
        trace.status = "terminated"
    return trace


def _run_body(engine, container, body, path, trace) -> None:
    for i, act in enumerate(body):
        _run_activity(engine, container, act, f"{path}.{i}", trace)


def _literal(value: Any) -> Any:
    type_of(value)
    return value


def _run_activity(engine: "RulesEngine", container: "Container", act: Activity, path: str, trace: WorkflowTrace) -> None:
    tick = container.clock
    try:
        if act.kind == "Sequence":
            trace.records.append(WorkflowRecord(tick, path, act.kind, f"{len(act.body)} activities"))
            _run_body(engine, container, act.body, path, trace)
        elif act.kind == "IfElse":
            holds = engine.evaluate(act.arg("condition"))
            trace.records.append(WorkflowRecord(tick, path, act.kind, f"{act.arg('condition')} -> {'then' if holds else 'else'}"))
            _run_body(engine, container, act.body if holds else act.orelse, path, trace)
        elif act.kind == "InvokeSink":
            value = _literal(act.arg("value"))
            trace.records.append(WorkflowRecord(tick, path, act.kind, f"{act.arg('endpoint')} {render_value(value)}"))
            container.invoke_sink(act.arg("endpoint"), value)
            container.run_until_quiescent()
        elif act.kind == "AssertFact":
            key = act.arg("key")
            if "value" in dict(act.args):
                engine.assert_fact(key, _literal(act.arg("value")), tick, "workflow")
                detail = f"{key}={render_value(act.arg('value'))}"
            else:
                engine.retract_fact(key)
                detail = f"{key} retracted"
            trace.records.append(WorkflowRecord(tick, path, act.kind, detail))
        elif act.kind == "WeaveAspect":
            trace.records.append(WorkflowRecord(tick, path, act.kind, act.arg("aspect")))
            container.weaver.weave([act.arg("aspect")])
        elif act.kind == "UnweaveAspect":
            trace.records.append(WorkflowRecord(tick, path, act.kind, act.arg("aspect")))
            container.weaver.unweave(act.arg("aspect"))
        elif act.kind == "EvaluateRules":
            report = engine.fire_rules()
            summary = ", ".join(f"{f.rule}:{f.branch}" for f in report.firings)
            trace.records.append(WorkflowRecord(tick, path, act.kind, summary))
            container.run_until_quiescent()
        elif act.kind == "Delay":
            container.clock += act.arg("ticks")
            trace.records.append(WorkflowRecord(tick, path, act.kind, f"+{act.arg('ticks')}"))
        elif act.kind == "Terminate":
            trace.records.append(WorkflowRecord(tick, path, act.kind))
            raise _Terminate()
    except (_Terminate, errors.ActivityFailure):
        raise
    except errors.WeaveCompError as exc:
        trace.records.append(WorkflowRecord(container.clock, path, "Failed", f"{act.kind}: {exc}"))
        trace.status = "failed"
        raise errors.ActivityFailure(f"{path} {act.kind}", exc, trace) from exc
