"""Configuration loading, scenario replay and reporting.

A configuration directory holds a ``weavecomp.json`` manifest naming the other
files (all paths relative to the directory)::

    {
      "settings": {"hop_limit": 1000, "event_budget": 100000},
      "assembly": "assembly.json",
      "aspects": ["aspects/auth.aa"],
      "weave": ["AuthWiring"],
      "rules": ["rules.xml"],
      "workflows": ["workflows/authflow.json"],
      "services": ["services/auth.xml"],
      "service_stubs": [{"endpoint": "...", "operation": "verify",
                         "behavior": {"kind": "scripted", "table": {...}}}],
      "device_stubs": [{"uuid": "...", "script": {"setState": {"state": "$in"}}}],
      "observe": [{"endpoint": "rfid1.tagRead", "fact": "auth.identity", "react": true}],
      "discovery": {"fire_rules": false}
    }

A directory without a manifest is an empty, valid configuration.
"""

from __future__ import annotations

import difflib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

from . import errors
from .aspects import parse_aspects
from .discovery import DeviceDescription, DiscoveryBus, ProxyManager, scripted_device_stub
from .model import define_component_type, render_value
from .rules import RulesEngine, parse_rules
from .runtime import DEFAULT_EVENT_BUDGET, DEFAULT_HOP_LIMIT, Container, DispatchTrace
from .services import ServiceProxies, behavior_from_config, parse_service_descriptor
from .workflow import load_workflow, register_workflow, run_workflow

MANIFEST = "weavecomp.json"

SETTINGS = {
    "hop_limit": DEFAULT_HOP_LIMIT,
    "event_budget": DEFAULT_EVENT_BUDGET,
    "strict_weave": False,
    "strict_missing": False,
    "repass": False,
}

STEP_ACTIONS = (
    "Announce", "Withdraw", "Inject", "AssertFact", "SetProperty",
    "RunWorkflow", "Weave", "Unweave", "Expect",
)
EXPECTATIONS = ("TraceContains", "SnapshotEquals", "FactEquals", "ProxyExists", "ProxyAbsent")


def _read_json(path: Path) -> Any:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise errors.ParseError(exc.msg, exc.lineno, exc.colno, str(path)) from None


def _paths(manifest: Mapping[str, Any], key: str) -> list[str]:
    # a single entry may be given as a bare string
    value = manifest.get(key) or []
    return [value] if isinstance(value, str) else list(value)


def _existing(base: Path, rel: str, what: str) -> Path:
    path = base / rel
    if not path.is_file():
        raise errors.CrossReferenceError(f"{what} file {rel!r} not found in {base}")
    return path


def load_config(config_dir: str | Path, overrides: Mapping[str, Any] | None = None) -> Container:
    """Build a ready container from a configuration directory; all or nothing."""
    base = Path(config_dir)
    if not base.is_dir():
        raise errors.ConfigError(f"{base} is not a directory")
    manifest_path = base / MANIFEST
    manifest = _read_json(manifest_path) if manifest_path.is_file() else {}
    settings = dict(SETTINGS)
    unknown = set(manifest.get("settings", {})) - set(SETTINGS)
    if unknown:
        raise errors.ConfigError(f"unknown settings {sorted(unknown)}")
    settings.update(manifest.get("settings", {}))
    settings.update({k: v for k, v in (overrides or {}).items() if v is not None})

    container = Container(hop_limit=settings["hop_limit"], event_budget=settings["event_budget"])
    container.config_dir = base
    container.settings = settings
    container.weaver.strict = settings["strict_weave"]
    container.bus = DiscoveryBus()
    manager = ProxyManager(container, container.bus, fire_rules=manifest.get("discovery", {}).get("fire_rules", False))
    container.proxy_manager = manager
    proxies = ServiceProxies(container)
    engine = RulesEngine(container, strict_missing=settings["strict_missing"], repass=settings["repass"])

    current = str(manifest_path)
    try:
        assembly = {}
        if manifest.get("assembly"):
            current = manifest["assembly"]
            assembly = _read_json(_existing(base, current, "assembly"))
        for tdef in assembly.get("types", ()):
            define_component_type(container.registry, tdef)
        for idef in assembly.get("instances", ()):
            container.assembly.instantiate(idef["type"], idef["name"], idef.get("properties") or {})

        for rel in _paths(manifest, "services"):
            current = rel
            descriptor = parse_service_descriptor(
                _existing(base, rel, "service").read_text(encoding="utf-8"), source=rel
            )
            proxies.build(descriptor)
        current = manifest.get("assembly", str(manifest_path))
        asm = container.assembly
        for bdef in assembly.get("bindings", ()):
            asm.connect(asm.resolve(bdef["from"], "source"), asm.resolve(bdef["to"], "sink"))

        for rel in _paths(manifest, "aspects"):
            current = rel
            text = _existing(base, rel, "aspect").read_text(encoding="utf-8")
            for aspect in parse_aspects(text, source=rel, registry=container.registry):
                container.weaver.define(aspect)

        for rel in _paths(manifest, "rules"):
            current = rel
            engine.rules.merge(parse_rules(_existing(base, rel, "rules").read_text(encoding="utf-8"), source=rel))
        for rule in engine.rules.rules:
            for action in rule.then_actions + rule.else_actions:
                if action.kind in ("WeaveAspect", "UnweaveAspect"):
                    container.weaver.lookup(action.target)

        for rel in _paths(manifest, "workflows"):
            current = rel
            register_workflow(engine, load_workflow(_existing(base, rel, "workflow")))

        current = str(manifest_path)
        for obs in manifest.get("observe", ()):
            engine.observe(obs["endpoint"], obs["fact"], obs.get("react", True))
        for stub_def in manifest.get("service_stubs", ()):
            stub = proxies.network.stub_for(stub_def["endpoint"])
            stub.register(stub_def["operation"], behavior_from_config(stub_def["behavior"]))
        for dev in manifest.get("device_stubs", ()):
            container.bus.register_stub(dev["uuid"], scripted_device_stub(dev.get("script", {})))
        if manifest.get("weave"):
            container.weaver.weave(_paths(manifest, "weave"))
    except errors.ParseError:
        raise
    except (errors.UnknownEndpoint, errors.UnknownInstance, errors.UnknownType, errors.UnknownAspect,
            errors.UnknownConditionRef, errors.UnknownBehaviorKind) as exc:
        raise errors.CrossReferenceError(f"{current}: {type(exc).__name__}: {exc}") from exc
    except errors.CrossReferenceError:
        raise
    except errors.WeaveCompError as exc:
        raise errors.ConfigError(f"{current}: {type(exc).__name__}: {exc}") from exc
    except (KeyError, TypeError, AttributeError) as exc:
        raise errors.ConfigError(f"{current}: malformed entry ({type(exc).__name__}: {exc})") from exc
    return container


def describe(container: Container) -> str:
    engine = container.engine
    return (
        f"{sum(1 for _ in container.registry)} types, {len(container.assembly.instances)} instances, "
        f"{len(container.assembly.bindings)} bindings, {len(container.weaver.library)} aspects "
        f"({len(container.weaver.applied)} woven), {len(engine.rules.rules)} rules, "
        f"{len(engine.workflows)} workflows"
    )


# scenarios

@dataclass(frozen=True)
class Step:
    index: int
    tick: int
    action: str
    args: Mapping[str, Any]

    def describe(self) -> str:
        if self.action == "Expect":
            args = dict(self.args)
            kind = args.pop("kind", "?")
            inner = ", ".join(f"{k}={render_value(v) if not isinstance(v, (list, dict)) else v}" for k, v in sorted(args.items()))
            return f"Expect {kind}({inner})"
        inner = ", ".join(f"{k}={v!r}" for k, v in sorted(self.args.items()))
        return f"{self.action}({inner})"


@dataclass
class ScenarioScript:
    name: str
    steps: list[Step]
    base_dir: Path | None = None


def parse_scenario(data: Any, *, name: str = "scenario", base_dir: Path | None = None) -> ScenarioScript:
    if isinstance(data, Mapping):
        name = data.get("name", name)
        raw_steps = data.get("steps", [])
    else:
        raw_steps = data
    steps = []
    last = 0
    for i, raw in enumerate(raw_steps, start=1):
        action = raw.get("action")
        if action not in STEP_ACTIONS:
            raise errors.ParseError(f"step {i}: unknown action {action!r}", i, 0, name)
        tick = raw.get("tick", last)
        if not isinstance(tick, int) or tick < last:
            raise errors.ParseError(f"step {i}: tick {tick!r} goes backwards", i, 0, name)
        args = dict(raw.get("args", {}))
        if action == "Expect" and args.get("kind") not in EXPECTATIONS:
            raise errors.ParseError(f"step {i}: unknown expectation {args.get('kind')!r}", i, 0, name)
        if base_dir is not None:
            for key in ("device", "file"):
                if key in args and not (base_dir / args[key]).is_file():
                    raise errors.CrossReferenceError(f"{name} step {i}: {args[key]!r} not found")
        steps.append(Step(i, tick, action, args))
        last = tick
    return ScenarioScript(name, steps, base_dir)


def load_scenario(path: str | Path) -> ScenarioScript:
    path = Path(path)
    return parse_scenario(_read_json(path), name=path.stem, base_dir=path.parent)


@dataclass
class ExpectationResult:
    tick: int
    step: int
    description: str
    passed: bool
    observed: str = ""


@dataclass
class StepFailure:
    tick: int
    step: int
    description: str
    error: str


@dataclass
class ScenarioReport:
    scenario: str
    expectations: list[ExpectationResult] = field(default_factory=list)
    step_failures: list[StepFailure] = field(default_factory=list)
    trace: DispatchTrace = field(default_factory=DispatchTrace)
    snapshot: str = ""
    fail_fast: bool = False
    aborted: bool = False

    @property
    def passed(self) -> int:
        return sum(1 for e in self.expectations if e.passed)

    @property
    def ok(self) -> bool:
        return self.exit_code == 0

    @property
    def exit_code(self) -> int:
        if self.passed != len(self.expectations):
            return 1
        if self.fail_fast and self.step_failures:
            return 1
        return 0


def _resolve_file(container: Container, script: ScenarioScript, rel: str) -> Path:
    for base in (script.base_dir, container.config_dir):
        if base is not None and (Path(base) / rel).is_file():
            return Path(base) / rel
    raise errors.CrossReferenceError(f"file {rel!r} not found")


def _apply_step(container: Container, script: ScenarioScript, step: Step) -> None:
    args = step.args
    engine = container.engine
    if step.action == "Announce":
        if "device" in args:
            device = DeviceDescription.load(_resolve_file(container, script, args["device"]))
        else:
            device = DeviceDescription.from_dict(args["description"])
        container.bus.announce(device, step.tick)
    elif step.action == "Withdraw":
        container.bus.withdraw(args["uuid"], step.tick)
    elif step.action == "Inject":
        target = args["endpoint"]
        try:
            container.assembly.resolve(target, "source")
        except errors.UnknownEndpoint:
            container.invoke_sink(target, args.get("value"), step.tick)
        else:
            container.enqueue_event(target, args.get("value"), step.tick)
    elif step.action == "AssertFact":
        if "value" in args:
            engine.assert_fact(args["key"], args["value"], step.tick, "scenario")
        else:
            engine.retract_fact(args["key"])
    elif step.action == "SetProperty":
        container.set_property(args["instance"], args["name"], args.get("value"))
    elif step.action == "RunWorkflow":
        run_workflow(engine, container, args["name"], step.tick)
    elif step.action == "Weave":
        container.weaver.weave(args.get("aspects") or [args["aspect"]])
    elif step.action == "Unweave":
        container.weaver.unweave(args["aspect"])
    container.run_until_quiescent()


def _check(container: Container, script: ScenarioScript, step: Step) -> tuple[bool, str]:
    args = step.args
    kind = args["kind"]
    if kind == "TraceContains":
        seen = container.trace.delivered(args["endpoint"])
        want = args.get("value")
        hit = any(v == want and type(v) is type(want) for v in seen)
        return hit, "" if hit else f"delivered on {args['endpoint']}: [{', '.join(render_value(v) for v in seen[-10:])}]"
    if kind == "SnapshotEquals":
        expected = _resolve_file(container, script, args["file"]).read_text(encoding="utf-8")
        actual = container.assembly.snapshot()
        if actual == expected:
            return True, ""
        diff = difflib.unified_diff(expected.splitlines(), actual.splitlines(), "expected", "actual", lineterm="")
        return False, " | ".join(list(diff)[2:])
    if kind == "FactEquals":
        fact = container.engine.facts.get(args["key"])
        want = args.get("value")
        if fact is not None and fact.value == want and type(fact.value) is type(want):
            return True, ""
        return False, "absent" if fact is None else render_value(fact.value)
    uuid = args["uuid"]
    present = uuid in container.proxy_manager.proxies
    if kind == "ProxyExists":
        return present, "" if present else "no proxy"
    return not present, "" if not present else "proxy present"


def run_scenario(container: Container, script: ScenarioScript, *, fail_fast: bool = False) -> ScenarioReport:
    report = ScenarioReport(script.name, fail_fast=fail_fast)
    start = len(container.trace)
    for step in script.steps:
        container.clock = max(container.clock, step.tick)
        if step.action == "Expect":
            try:
                passed, observed = _check(container, script, step)
            except (errors.WeaveCompError, KeyError) as exc:
                passed, observed = False, f"{type(exc).__name__}: {exc}"
            report.expectations.append(ExpectationResult(step.tick, step.index, step.describe(), passed, observed))
            continue
        try:
            _apply_step(container, script, step)
        except (errors.WeaveCompError, KeyError, TypeError) as exc:
            report.step_failures.append(StepFailure(step.tick, step.index, step.describe(), f"{type(exc).__name__}: {exc}"))
            if fail_fast:
                report.aborted = True
                break
    report.trace = DispatchTrace(container.trace.records[start:])
    report.snapshot = container.assembly.snapshot()
    return report


def emit_report(report: ScenarioReport, fmt: str = "text") -> str:
    if fmt == "trace":
        return report.trace.serialize()
    if fmt == "json":
        doc = {
            "scenario": report.scenario,
            "expectations": [asdict(e) for e in report.expectations],
            "step_failures": [asdict(f) for f in report.step_failures],
            "passed": report.passed,
            "total": len(report.expectations),
            "aborted": report.aborted,
            "exit_code": report.exit_code,
            "trace_records": len(report.trace),
            "snapshot": report.snapshot,
        }
        return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
    if fmt != "text":
        raise errors.UnknownFormat(fmt)
    lines = [f"scenario: {report.scenario}"]
    for e in report.expectations:
        line = f"{'PASS' if e.passed else 'FAIL'} t={e.tick} step {e.step}: {e.description}"
        lines.append(line if e.passed else f"{line} -- observed: {e.observed}")
    for f in report.step_failures:
        lines.append(f"STEP FAILURE t={f.tick} step {f.step}: {f.description} -- {f.error}")
    if report.aborted:
        lines.append("aborted (fail-fast)")
    lines.append(f"step failures: {len(report.step_failures)}")
    lines.append(f"expectations: {report.passed}/{len(report.expectations)} passed")
    return "\n".join(lines) + "\n"
