"""Context facts, condition expressions and the rules engine.

Rule documents are XML in the ``RuleDefinitions`` shape used by workflow rule
files::

    <RuleDefinitions>
      <RuleDefinitions.Conditions>
        <RuleExpressionCondition Name="IsAuthorized">
          <CodeBinaryOperatorExpression Operator="ValueEquality">
            <Left><FactReference Key="auth.identity"/></Left>
            <Right><CodePrimitiveExpression Type="String" Value="Felhi"/></Right>
          </CodeBinaryOperatorExpression>
        </RuleExpressionCondition>
      </RuleDefinitions.Conditions>
      <Rules>
        <Rule Name="Admit" Condition="IsAuthorized" Priority="1">
          <Then><EmitEvent Endpoint="screen1.show" Value="accepted"/></Then>
          <Else><EmitEvent Endpoint="screen1.show" Value="rejected"/></Else>
        </Rule>
      </Rules>
    </RuleDefinitions>

Namespace prefixes are ignored, and the verbose ``.Left``/``.Right``/``.Value``
property-element spellings are accepted as well.
"""

from __future__ import annotations

import logging
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Any, Mapping, Union

from . import errors
from .model import PayloadType, render_value, type_of

if TYPE_CHECKING:
    from .runtime import Container, Event

log = logging.getLogger(__name__)

COMPARISONS = ("ValueEquality", "ValueInequality", "LessThan", "GreaterThan")
CONNECTIVES = ("BooleanAnd", "BooleanOr")
ORDERED_TYPES = (PayloadType.Integer, PayloadType.String)
MAX_PASSES = 10


class _Absent:
    def __repr__(self) -> str:
        return "ABSENT"


ABSENT = _Absent()


@dataclass(frozen=True)
class Fact:
    key: str
    value: Any
    tick: int = 0
    source: str = "scenario"


# expression tree

@dataclass(frozen=True)
class Primitive:
    type: PayloadType
    value: Any


@dataclass(frozen=True)
class FactRef:
    key: str
    type: PayloadType | None = None


@dataclass(frozen=True)
class Binary:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    operand: "Expr"


Expr = Union[Primitive, FactRef, Binary, Not]


def expr_to_text(expr: Expr) -> str:
    if isinstance(expr, Primitive):
        return render_value(expr.value)
    if isinstance(expr, FactRef):
        return expr.key
    if isinstance(expr, Not):
        return f"not ({expr_to_text(expr.operand)})"
    symbol = {
        "ValueEquality": "==", "ValueInequality": "!=", "LessThan": "<",
        "GreaterThan": ">", "BooleanAnd": "and", "BooleanOr": "or",
    }[expr.op]
    return f"({expr_to_text(expr.left)} {symbol} {expr_to_text(expr.right)})"


def _static_type(expr: Expr) -> PayloadType | None:
    if isinstance(expr, Primitive):
        return expr.type
    if isinstance(expr, FactRef):
        return expr.type
    return PayloadType.Boolean


def typecheck(expr: Expr, expect: PayloadType | None = PayloadType.Boolean) -> Expr:
    """Check operand types and pin the type of every fact reference it can."""
    if isinstance(expr, Primitive):
        if expect is not None and expr.type is not expect:
            raise errors.TypeMismatchInCondition(f"{expr_to_text(expr)} is {expr.type.value}, {expect.value} needed")
        return expr
    if isinstance(expr, FactRef):
        if expr.type is None:
            return FactRef(expr.key, expect)
        if expect is not None and expr.type is not expect:
            raise errors.TypeMismatchInCondition(f"{expr.key} is {expr.type.value}, {expect.value} needed")
        return expr
    if expect is not None and expect is not PayloadType.Boolean:
        raise errors.TypeMismatchInCondition(f"{expr_to_text(expr)} is Boolean, {expect.value} needed")
    if isinstance(expr, Not):
        return Not(typecheck(expr.operand, PayloadType.Boolean))
    if expr.op in CONNECTIVES:
        return Binary(expr.op, typecheck(expr.left, PayloadType.Boolean), typecheck(expr.right, PayloadType.Boolean))
    if expr.op not in COMPARISONS:
        raise errors.TypeMismatchInCondition(f"unknown operator {expr.op!r}")
    lt, rt = _static_type(expr.left), _static_type(expr.right)
    if lt is not None and rt is not None and lt is not rt:
        raise errors.TypeMismatchInCondition(f"{expr_to_text(expr)}: {lt.value} vs {rt.value}")
    operand = lt or rt
    if expr.op in ("LessThan", "GreaterThan") and operand is not None and operand not in ORDERED_TYPES:
        raise errors.TypeMismatchInCondition(f"{expr.op} is undefined on {operand.value}")
    return Binary(expr.op, typecheck(expr.left, operand), typecheck(expr.right, operand))


class _Missing(Exception):
    def __init__(self, key: str, ill_typed: bool = False):
        self.key = key
        self.ill_typed = ill_typed


def _lookup(facts: Mapping[str, Any], ref: FactRef) -> Any:
    value = facts.get(ref.key, ABSENT)
    if isinstance(value, Fact):
        value = value.value
    if value is ABSENT:
        raise _Missing(ref.key)
    if ref.type is not None and not ref.type.accepts(value):
        raise _Missing(ref.key, ill_typed=True)
    return value


def _eval(expr: Expr, facts: Mapping[str, Any]) -> Any:
    if isinstance(expr, Primitive):
        return expr.value
    if isinstance(expr, FactRef):
        return _lookup(facts, expr)
    if isinstance(expr, Not):
        value = _eval(expr.operand, facts)
        if not isinstance(value, bool):
            raise _Missing("<operand>", ill_typed=True)
        return not value
    # both sides are always evaluated: a missing fact anywhere decides the outcome
    left = _eval(expr.left, facts)
    right = _eval(expr.right, facts)
    if type_of(left) is not type_of(right):
        raise _Missing("<operand>", ill_typed=True)
    if expr.op == "ValueEquality":
        return left == right
    if expr.op == "ValueInequality":
        return left != right
    if expr.op in CONNECTIVES:
        if not isinstance(left, bool):
            raise _Missing("<operand>", ill_typed=True)
        return (left and right) if expr.op == "BooleanAnd" else (left or right)
    if type_of(left) not in ORDERED_TYPES:
        raise _Missing("<operand>", ill_typed=True)
    return left < right if expr.op == "LessThan" else left > right


def evaluate_condition(expr: Expr, facts: Mapping[str, Any], *, strict: bool = False) -> bool:
    """Evaluate ``expr`` against a fact store.

    A reference to a missing (or wrongly typed) fact makes the whole condition
    false, or raises :class:`~weavecomp.errors.MissingFact` when ``strict``.
    """
    try:
        return bool(_eval(expr, facts))
    except _Missing as miss:
        if strict:
            if miss.ill_typed:
                raise errors.TypeMismatchInCondition(f"fact {miss.key} has the wrong type") from None
            raise errors.MissingFact(miss.key) from None
        return False


# actions and rules

@dataclass(frozen=True)
class Action:
    kind: str  # EmitEvent | SetProperty | AssertFact | WeaveAspect | UnweaveAspect
    target: str = ""  # endpoint, instance, fact key or aspect name
    name: str = ""  # property name for SetProperty
    value: str | None = None  # literal text; None retracts for AssertFact
    type: PayloadType | None = None

    def __str__(self) -> str:
        if self.kind in ("WeaveAspect", "UnweaveAspect"):
            return f"{self.kind}({self.target})"
        target = f"{self.target}.{self.name}" if self.name else self.target
        if self.value is None:
            return f"{self.kind}({target})"
        return f"{self.kind}({target}={render_value(self.value)})"


@dataclass(frozen=True)
class Rule:
    name: str
    condition: str
    priority: int = 0
    then_actions: tuple[Action, ...] = ()
    else_actions: tuple[Action, ...] = ()


@dataclass
class RuleSet:
    conditions: dict[str, Expr] = field(default_factory=dict)
    rules: list[Rule] = field(default_factory=list)

    def ordered(self) -> list[Rule]:
        return sorted(self.rules, key=lambda r: (r.priority, r.name))

    def merge(self, other: "RuleSet") -> None:
        for name, expr in other.conditions.items():
            if name in self.conditions:
                raise errors.ConfigError(f"condition {name!r} defined twice")
            self.conditions[name] = expr
        known = {r.name for r in self.rules}
        for rule in other.rules:
            if rule.name in known:
                raise errors.ConfigError(f"rule {rule.name!r} defined twice")
            self.rules.append(rule)


def _local(el: ET.Element) -> str:
    return el.tag.rpartition("}")[2].rpartition(":")[2]


def _children(el: ET.Element) -> list[ET.Element]:
    return list(el)


_PRIMITIVE_TAGS = {
    "String": PayloadType.String,
    "Int32": PayloadType.Integer,
    "Int64": PayloadType.Integer,
    "Integer": PayloadType.Integer,
    "Boolean": PayloadType.Boolean,
    "Unit": PayloadType.Unit,
}


def _single(el: ET.Element, what: str) -> ET.Element:
    kids = _children(el)
    if len(kids) != 1:
        raise errors.ParseError(f"{what} must contain exactly one expression, found {len(kids)}", 0, 0, "<rules>")
    return kids[0]


def _operand(el: ET.Element, side: str) -> ET.Element:
    for child in el:
        name = _local(child)
        if name == side or name.endswith("." + side):
            return _single(child, side)
    raise errors.ParseError(f"<{_local(el)}> is missing its {side} operand", 0, 0, "<rules>")


def _parse_expr(el: ET.Element) -> Expr:
    tag = _local(el)
    if tag == "RuleExpressionCondition.Expression" or tag == "Expression":
        return _parse_expr(_single(el, tag))
    if tag == "CodeBinaryOperatorExpression":
        op = el.get("Operator", "")
        if op not in COMPARISONS + CONNECTIVES:
            raise errors.ParseError(f"unknown binary operator {op!r}", 0, 0, "<rules>")
        return Binary(op, _parse_expr(_operand(el, "Left")), _parse_expr(_operand(el, "Right")))
    if tag in ("CodeUnaryOperatorExpression", "CodeNotExpression"):
        op = el.get("Operator", "BooleanNot")
        if op != "BooleanNot":
            raise errors.ParseError(f"unknown unary operator {op!r}", 0, 0, "<rules>")
        kids = _children(el)
        inner = _operand(el, "Operand") if any(_local(k).endswith("Operand") for k in kids) else _single(el, tag)
        return Not(_parse_expr(inner))
    if tag == "FactReference":
        key = el.get("Key")
        if not key:
            raise errors.ParseError("<FactReference> needs a Key", 0, 0, "<rules>")
        declared = el.get("Type")
        return FactRef(key, PayloadType.parse(declared) if declared else None)
    if tag == "CodePrimitiveExpression":
        if el.get("Value") is not None or el.get("Type") is not None:
            ptype = PayloadType.parse(el.get("Type", "String"))
            return Primitive(ptype, ptype.coerce_text(el.get("Value", "")))
        holder = next((c for c in el if _local(c).endswith(".Value") or _local(c) == "Value"), None)
        if holder is None or len(holder) != 1:
            raise errors.ParseError("<CodePrimitiveExpression> without a value", 0, 0, "<rules>")
        typed = holder[0]
        ptype = _PRIMITIVE_TAGS.get(_local(typed))
        if ptype is None:
            raise errors.ParseError(f"unsupported primitive <{_local(typed)}>", 0, 0, "<rules>")
        return Primitive(ptype, ptype.coerce_text(typed.text or ""))
    raise errors.ParseError(f"unexpected element <{tag}> in a condition", 0, 0, "<rules>")


def _parse_action(el: ET.Element) -> Action:
    tag = _local(el)
    declared = el.get("Type")
    ptype = PayloadType.parse(declared) if declared else None
    if tag == "EmitEvent":
        return Action(tag, el.get("Endpoint", ""), value=el.get("Value", ""), type=ptype)
    if tag == "SetProperty":
        return Action(tag, el.get("Instance", ""), el.get("Name", ""), el.get("Value", ""), ptype)
    if tag == "AssertFact":
        return Action(tag, el.get("Key", ""), value=el.get("Value"), type=ptype or PayloadType.String)
    if tag in ("WeaveAspect", "UnweaveAspect"):
        return Action(tag, el.get("Name") or el.get("Aspect", ""))
    raise errors.ParseError(f"unknown action <{tag}>", 0, 0, "<rules>")


def parse_rules(text: str, *, source: str = "<rules>") -> RuleSet:
    try:
        # undeclared namespace prefixes (as in exported workflow rule files) are tolerated
        root = ET.fromstring(_declare_prefixes(text))
    except ET.ParseError as exc:
        line, col = exc.position
        raise errors.ParseError(str(exc), line, col + 1, source) from None
    if _local(root) != "RuleDefinitions":
        raise errors.ParseError(f"root must be <RuleDefinitions>, found <{_local(root)}>", 1, 1, source)
    rules = RuleSet()
    for section in root:
        name = _local(section)
        if name == "RuleDefinitions.Conditions":
            for cond in section:
                cname = cond.get("Name")
                if _local(cond) != "RuleExpressionCondition" or not cname:
                    raise errors.ParseError("conditions must be named <RuleExpressionCondition>", 0, 0, source)
                if cname in rules.conditions:
                    raise errors.ParseError(f"condition {cname!r} defined twice", 0, 0, source)
                rules.conditions[cname] = typecheck(_parse_expr(_single(cond, cname)))
        elif name in ("Rules", "RuleDefinitions.Rules"):
            for rule_el in section:
                then_el = next((c for c in rule_el if _local(c) == "Then"), None)
                else_el = next((c for c in rule_el if _local(c) == "Else"), None)
                rules.rules.append(
                    Rule(
                        name=rule_el.get("Name", ""),
                        condition=rule_el.get("Condition", ""),
                        priority=int(rule_el.get("Priority", "0")),
                        then_actions=tuple(_parse_action(a) for a in (then_el if then_el is not None else ())),
                        else_actions=tuple(_parse_action(a) for a in (else_el if else_el is not None else ())),
                    )
                )
    names = [r.name for r in rules.rules]
    if len(set(names)) != len(names) or "" in names:
        raise errors.ParseError("rule names must be present and unique", 0, 0, source)
    for rule in rules.rules:
        if rule.condition not in rules.conditions:
            raise errors.UnknownConditionRef(f"rule {rule.name!r} -> {rule.condition!r}")
    return rules


def _declare_prefixes(text: str) -> str:
    head = re.search(r"<([A-Za-z_][\w.]*:)?RuleDefinitions\b", text)
    prefixes = set(re.findall(r"</?([A-Za-z_][\w.-]*):[A-Za-z_]", text))
    declared = set(re.findall(r"xmlns:([A-Za-z_][\w.-]*)\s*=", text))
    missing = sorted(prefixes - declared - {"xml"})
    if not missing or head is None:
        return text
    decl = "".join(f' xmlns:{p}="urn:weavecomp:{p}"' for p in missing)
    insert = head.end()
    return text[:insert] + decl + text[insert:]


# engine

@dataclass
class ActionResult:
    action: Action
    ok: bool = True
    error: str = ""

    def __str__(self) -> str:
        return str(self.action) if self.ok else f"!{self.action}: {self.error}"


@dataclass
class Firing:
    rule: str
    branch: str  # "then" | "else" | "error"
    actions: list[ActionResult] = field(default_factory=list)
    passno: int = 1

    def line(self) -> str:
        return "\t".join([self.rule, self.branch, *(str(a) for a in self.actions)])


@dataclass
class FiringReport:
    firings: list[Firing] = field(default_factory=list)

    def serialize(self) -> str:
        return "".join(f.line() + "\n" for f in self.firings)

    @property
    def failures(self) -> list[ActionResult]:
        return [a for f in self.firings for a in f.actions if not a.ok]


@dataclass(frozen=True)
class Observer:
    endpoint: str
    fact: str
    react: bool = True


class RulesEngine:
    """Fact store plus rule set, acting on a container."""

    def __init__(
        self,
        container: "Container",
        rules: RuleSet | None = None,
        *,
        strict_missing: bool = False,
        repass: bool = False,
    ):
        self.container = container
        self.rules = rules or RuleSet()
        self.facts: dict[str, Fact] = {}
        self.strict_missing = strict_missing
        self.repass = repass
        self.dirty = False
        self.observers: list[Observer] = []
        self.workflows: dict[str, Any] = {}
        container.engine = self
        container.reactions.append(self._on_event)

    # facts

    def fact_values(self) -> dict[str, Any]:
        return {k: f.value for k, f in self.facts.items()}

    def assert_fact(self, key: str, value: Any, tick: int | None = None, source: str = "scenario") -> Any:
        """Store ``value`` under ``key``; :data:`ABSENT` retracts.  Returns the previous value or None."""
        if value is ABSENT:
            return self.retract_fact(key)
        type_of(value)
        old = self.facts.get(key)
        tick = self.container.clock if tick is None else tick
        self.facts[key] = Fact(key, value, tick, source)
        self.dirty = True
        return None if old is None else old.value

    def retract_fact(self, key: str) -> Any:
        old = self.facts.pop(key, None)
        if old is not None:
            self.dirty = True
        return None if old is None else old.value

    def observe(self, endpoint: str, fact: str, react: bool = True) -> Observer:
        obs = Observer(endpoint, fact, react)
        self.observers.append(obs)
        return obs

    def _on_event(self, event: "Event") -> None:
        label = self.container.assembly.label(event.endpoint)
        react = None
        for obs in self.observers:
            if obs.endpoint == label:
                self.assert_fact(obs.fact, event.payload, event.tick, label)
                react = react or obs.react
        if react:
            self.fire_rules(cause=event)

    # conditions

    def condition(self, name: str) -> Expr:
        try:
            return self.rules.conditions[name]
        except KeyError:
            raise errors.UnknownConditionRef(name) from None

    def evaluate(self, name: str) -> bool:
        return evaluate_condition(self.condition(name), self.facts, strict=self.strict_missing)

    # firing

    def fire_rules(self, cause: "Event | None" = None) -> FiringReport:
        report = FiringReport()
        with self.container.turn():
            passes = MAX_PASSES if self.repass else 1
            for passno in range(1, passes + 1):
                self.dirty = False
                for rule in self.rules.ordered():
                    report.firings.append(self._fire(rule, cause, passno))
                if not self.dirty:
                    break
        return report

    def _fire(self, rule: Rule, cause, passno: int) -> Firing:
        try:
            holds = self.evaluate(rule.condition)
        except errors.WeaveCompError as exc:
            return Firing(rule.name, "error", [ActionResult(Action("Evaluate", rule.condition), False, str(exc))], passno)
        branch = "then" if holds else "else"
        firing = Firing(rule.name, branch, passno=passno)
        for action in rule.then_actions if holds else rule.else_actions:
            result = ActionResult(action)
            try:
                self.execute(action, cause)
            except errors.WeaveCompError as exc:
                result.ok = False
                result.error = f"{type(exc).__name__}: {exc}"
                log.info("rule %s: action %s failed: %s", rule.name, action, exc)
            firing.actions.append(result)
        return firing

    def execute(self, action: Action, cause: "Event | None" = None) -> None:
        container = self.container
        hop = cause.hop + 1 if cause is not None else 0
        if action.kind == "EmitEvent":
            asm = container.assembly
            try:
                ep, direction = asm.resolve(action.target, "sink"), "sink"
            except errors.UnknownEndpoint:
                ep, direction = asm.resolve(action.target, "source"), "source"
            ptype = action.type or asm.port_type(ep, direction)
            value = ptype.coerce_text(action.value or "")
            if direction == "sink":
                container.invoke_sink(ep, value, hop=hop)
            else:
                container.enqueue_event(ep, value, hop=hop)
        elif action.kind == "SetProperty":
            inst = container.assembly.by_name(action.target)
            decl = inst.type.property(action.name)
            if decl is None:
                raise errors.UnknownProperty(f"{action.target}.{action.name}")
            container.set_property(inst.id, action.name, (action.type or decl.type).coerce_text(action.value or ""))
        elif action.kind == "AssertFact":
            if action.value is None:
                self.retract_fact(action.target)
            else:
                self.assert_fact(action.target, action.type.coerce_text(action.value), source="rules")
        elif action.kind == "WeaveAspect":
            container.weaver.weave([action.target])
        elif action.kind == "UnweaveAspect":
            container.weaver.unweave(action.target)
        else:
            raise errors.ConfigError(f"unknown action {action.kind!r}")


def fire_rules(engine: RulesEngine, container: "Container | None" = None) -> FiringReport:
    if container is not None and container is not engine.container:
        raise ValueError("engine is bound to a different container")
    return engine.fire_rules()


def assert_fact(engine: RulesEngine, key: str, value: Any, tick: int | None = None, source: str = "scenario") -> Any:
    return engine.assert_fact(key, value, tick, source)
