from __future__ import annotations

import random

import pytest
from hypothesis import given, strategies as st

from weavecomp import errors
from weavecomp.model import PayloadType
from weavecomp.rules import (
    ABSENT,
    Binary,
    FactRef,
    Primitive,
    RulesEngine,
    assert_fact,
    evaluate_condition,
    fire_rules,
    parse_rules,
)

from conftest import CASE_STUDY, make_container
from oracles import oracle_eval, random_facts, random_tree, rules_document

CODE1 = (CASE_STUDY / "rules.xml").read_text(encoding="utf-8")

SIMPLE = """
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
"""


def engine_with_screen(text=SIMPLE, **kw):
    c = make_container()
    c.assembly.instantiate("Screen", "screen1")
    return c, RulesEngine(c, parse_rules(text), **kw)


class TestParse:
    @pytest.mark.parametrize("text", [CODE1, SIMPLE])
    def test_code1_condition(self, text):
        rs = parse_rules(text)
        assert list(rs.conditions) == ["IsAuthorized"]
        cond = rs.conditions["IsAuthorized"]
        assert isinstance(cond, Binary) and cond.op == "ValueEquality"
        assert cond.left == FactRef("auth.identity", PayloadType.String)
        assert cond.right == Primitive(PayloadType.String, "Felhi")

    def test_unknown_condition_ref(self):
        with pytest.raises(errors.UnknownConditionRef):
            parse_rules(SIMPLE.replace('Condition="IsAuthorized"', 'Condition="Nope"'))

    def test_type_mismatch(self):
        doc = rules_document({"bad": ("LessThan", ("lit", "String", "a"), ("lit", "Integer", 1))})
        with pytest.raises(errors.TypeMismatchInCondition):
            parse_rules(doc)

    def test_fact_type_conflict(self):
        doc = ('<RuleDefinitions><RuleDefinitions.Conditions><RuleExpressionCondition Name="c">'
               '<CodeBinaryOperatorExpression Operator="LessThan"><Left><FactReference Key="k" Type="Boolean"/>'
               '</Left><Right><CodePrimitiveExpression Type="Boolean" Value="true"/></Right>'
               '</CodeBinaryOperatorExpression></RuleExpressionCondition></RuleDefinitions.Conditions>'
               '</RuleDefinitions>')
        with pytest.raises(errors.TypeMismatchInCondition):
            parse_rules(doc)

    def test_syntax_error(self):
        with pytest.raises(errors.ParseError) as info:
            parse_rules("<RuleDefinitions>\n<Rules>\n</RuleDefinitions>")
        assert info.value.line == 3


class TestEvaluate:
    cond = parse_rules(SIMPLE).conditions["IsAuthorized"]

    def test_match_and_mismatch(self):
        assert evaluate_condition(self.cond, {"auth.identity": "Felhi"})
        assert not evaluate_condition(self.cond, {"auth.identity": "Other"})

    def test_missing_default_false_and_strict(self):
        assert not evaluate_condition(self.cond, {})
        with pytest.raises(errors.MissingFact):
            evaluate_condition(self.cond, {}, strict=True)

    def test_missing_poisons_whole_condition(self):
        # (a == 1) or (missing == "x") is false, not true, when a fact is absent
        doc = rules_document({"c": ("BooleanOr",
                                    ("ValueEquality", ("fact", "auth.level"), ("lit", "Integer", 1)),
                                    ("ValueEquality", ("fact", "auth.identity"), ("lit", "String", "x")))})
        cond = parse_rules(doc).conditions["c"]
        assert not evaluate_condition(cond, {"auth.level": 1})
        assert evaluate_condition(cond, {"auth.level": 1, "auth.identity": "y"})


@given(st.integers(0, 2**32 - 1))
def test_oracle_equivalence(seed):
    rnd = random.Random(seed)
    trees = {f"c{i}": random_tree(rnd) for i in range(5)}
    rs = parse_rules(rules_document(trees))
    for _ in range(10):
        facts = random_facts(rnd)
        for name, tree in trees.items():
            assert evaluate_condition(rs.conditions[name], facts) == oracle_eval(tree, facts)


class TestFacts:
    def test_assert_returns_old(self):
        _, e = engine_with_screen()
        assert assert_fact(e, "auth.identity", "Felhi") is None
        assert assert_fact(e, "auth.identity", "Other") == "Felhi"
        assert e.facts["auth.identity"].value == "Other"

    def test_retract_then_default_false(self):
        c, e = engine_with_screen()
        e.assert_fact("auth.identity", "Felhi")
        e.assert_fact("auth.identity", ABSENT)
        assert not e.evaluate("IsAuthorized")
        report = fire_rules(e, c)
        assert [(f.rule, f.branch) for f in report.firings] == [("Admit", "else")]


class TestFire:
    def test_admit_accepts_and_rejects(self):
        c, e = engine_with_screen()
        e.assert_fact("auth.identity", "Felhi")
        report = e.fire_rules()
        assert report.serialize() == 'Admit\tthen\tEmitEvent(screen1.show="accepted")\n'
        e.assert_fact("auth.identity", "Intruder")
        assert e.fire_rules().firings[0].branch == "else"
        c.run_until_quiescent()
        assert c.trace.delivered("screen1.show") == ["accepted", "rejected"]

    def test_in_pass_visibility_and_single_firing(self):
        doc = rules_document({
            "always": ("ValueEquality", ("lit", "Integer", 1), ("lit", "Integer", 1)),
            "seen": ("ValueEquality", ("fact", "door.open"), ("lit", "Boolean", True)),
        }).replace("</RuleDefinitions>", """
          <Rules>
            <Rule Name="Second" Condition="seen" Priority="2">
              <Then><EmitEvent Endpoint="screen1.show" Value="saw it"/></Then>
            </Rule>
            <Rule Name="First" Condition="always" Priority="1">
              <Then><AssertFact Key="door.open" Value="true" Type="Boolean"/></Then>
            </Rule>
          </Rules></RuleDefinitions>""")
        c, e = engine_with_screen(doc)
        report = e.fire_rules()
        assert [(f.rule, f.branch) for f in report.firings] == [("First", "then"), ("Second", "then")]
        assert e.dirty

    def test_repass_reaches_fixpoint(self):
        doc = rules_document({
            "seen": ("ValueEquality", ("fact", "door.open"), ("lit", "Boolean", True)),
            "always": ("ValueEquality", ("lit", "Integer", 1), ("lit", "Integer", 1)),
        }).replace("</RuleDefinitions>", """
          <Rules>
            <Rule Name="A" Condition="seen" Priority="1"><Then><AssertFact Key="x" Value="1"/></Then></Rule>
            <Rule Name="B" Condition="always" Priority="2">
              <Then><AssertFact Key="door.open" Value="true" Type="Boolean"/></Then></Rule>
          </Rules></RuleDefinitions>""")
        _, single = engine_with_screen(doc)
        single.fire_rules()
        assert "x" not in single.facts  # A saw door.open only after its own turn
        _, looping = engine_with_screen(doc, repass=True)
        report = looping.fire_rules()
        assert looping.facts["x"].value == "1"
        assert max(f.passno for f in report.firings) <= 10

    def test_action_failure_recorded(self):
        doc = SIMPLE.replace('Endpoint="screen1.show" Value="rejected"', 'Endpoint="ghost.show" Value="x"')
        c, e = engine_with_screen(doc)
        report = e.fire_rules()
        assert len(report.failures) == 1
        assert report.serialize().startswith('Admit\telse\t!EmitEvent(ghost.show="x"): UnknownEndpoint')

    def test_hop_increments_from_cause(self):
        c, e = engine_with_screen()
        c.assembly.instantiate("RfidSim", "rfid1")
        e.observe("rfid1.tagRead", "auth.identity")
        c.enqueue_event("rfid1.tagRead", "Felhi")
        c.run_until_quiescent()
        inj = [r for r in c.trace.of_kind("Injected") if r.endpoint == "screen1.show"]
        assert inj[0].hop == 1


@given(st.lists(st.tuples(st.sampled_from(["auth.identity", "door.open", "auth.level"]),
                          st.one_of(st.text(max_size=3), st.booleans(), st.integers(-2, 2))),
                max_size=6, unique_by=lambda kv: kv[0]), st.randoms())
def test_firing_independent_of_insertion_order(items, rnd):
    doc = SIMPLE.replace("</Rules>", '<Rule Name="Zed" Condition="IsAuthorized" Priority="0"/></Rules>')

    def run(seq):
        c, e = engine_with_screen(doc)
        for k, v in seq:
            e.assert_fact(k, v)
        report = e.fire_rules()
        names = [f.rule for f in report.firings]
        assert len(names) == len(set(names))
        return report.serialize()

    shuffled = list(items)
    rnd.shuffle(shuffled)
    assert run(items) == run(shuffled)


@given(st.text(max_size=10))
def test_case_study_contract(s):
    c, e = engine_with_screen()
    e.assert_fact("auth.identity", s)
    e.fire_rules()
    c.run_until_quiescent()
    assert c.trace.delivered("screen1.show") == ["accepted" if s == "Felhi" else "rejected"]
