from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from weavecomp import errors
from weavecomp.aspects import Pointcut, parse_aspect, parse_aspects
from weavecomp.glob import glob_match
from weavecomp.model import Origin
from weavecomp.weaver import match_pointcut, unweave, weave

from conftest import make_container

AUTH_WIRING = '''
aspect AuthWiring priority 10
  pointcut readers : instance "rfid*" source "tagRead"
  pointcut screens : instance "screen*" sink "show"
  graft
    add component authGate type Gate { expected = "Felhi" }
    bind readers -> authGate.input
    bind authGate.pass -> screens
    unbind "rfid*.tagRead" -> "screen*.show"
  end
'''


def base():
    c = make_container()
    asm = c.assembly
    asm.instantiate("RfidSim", "rfid1")
    asm.instantiate("Screen", "screen1")
    asm.connect(asm.resolve("rfid1.tagRead", "source"), asm.resolve("screen1.show", "sink"))
    return c


# glob oracle: plain recursion, no regular expressions

def oracle_glob(pattern: str, name: str) -> bool:
    if not pattern:
        return not name
    head = pattern[0]
    if head == "*":
        return any(oracle_glob(pattern[1:], name[i:]) for i in range(len(name) + 1))
    if not name:
        return False
    return (head == "?" or head == name[0]) and oracle_glob(pattern[1:], name[1:])


ALPHABET = "ab.*?-"


@given(st.text(ALPHABET, max_size=6), st.text("ab.-", max_size=6))
def test_glob_matches_oracle(pattern, name):
    assert glob_match(pattern, name) == oracle_glob(pattern, name)


def test_glob_case_sensitive_and_anchored():
    assert not glob_match("rfid", "RFID")
    assert not glob_match("rfid", "rfid1")
    assert glob_match("r[1]", "r[1]")


class TestParse:
    def test_auth_wiring_shape(self):
        a = parse_aspect(AUTH_WIRING)
        assert a.name == "AuthWiring" and a.priority == 10
        assert len(a.pointcuts) == 2
        assert len(a.graft.components) == 1
        assert len(a.graft.binds) == 2
        assert len(a.graft.unbinds) == 1
        assert a.graft.components[0].properties == (("expected", "Felhi"),)

    def test_empty_graft(self):
        a = parse_aspect("aspect Nothing graft end")
        c = base()
        before = c.assembly.snapshot()
        weave(c, [a])
        assert c.assembly.snapshot() == before

    def test_unresolved_ref(self):
        with pytest.raises(errors.UnresolvedPointcutRef):
            parse_aspect('aspect A pointcut s : instance "x" sink "in" graft bind ghosts -> s end')

    def test_syntax_error_position(self):
        with pytest.raises(errors.ParseError) as info:
            parse_aspect("aspect A\n  pointcut : instance x\ngraft end")
        assert info.value.line == 2 and info.value.column == 12

    def test_unknown_component_type(self):
        reg = make_container().registry
        with pytest.raises(errors.UnknownType):
            parse_aspect("aspect A graft add component x type Warp end", registry=reg)

    def test_several_aspects_and_comments(self):
        found = parse_aspects("# one\naspect A graft end\naspect B priority -1 graft end # two\n")
        assert [(a.name, a.priority) for a in found] == [("A", 0), ("B", -1)]


class TestMatch:
    def names(self, pattern, names):
        c = make_container()
        for n in names:
            c.assembly.instantiate("Screen", n)
        return [jp.instance for jp in match_pointcut(Pointcut("p", "instance", pattern), c.assembly)]

    def test_prefix(self):
        got = self.names("rfid*", ["screen1", "rfid2", "rfid1"])
        assert got == sorted(n for n in ["screen1", "rfid2", "rfid1"] if oracle_glob("rfid*", n))

    def test_universal(self):
        assert self.names("*", ["b", "a"]) == ["a", "b"]

    def test_question_mark(self):
        assert self.names("lamp?", ["lamp", "lamp1"]) == ["lamp1"]

    def test_type_qualifier_and_ports(self):
        c = base()
        c.assembly.instantiate("Gate", "g")
        pc = Pointcut("p", "source", "*", "*", "Gate")
        assert [str(jp) for jp in match_pointcut(pc, c.assembly)] == ["g.fail", "g.pass"]


class TestWeave:
    def test_auth_wiring_snapshot(self):
        c = base()
        weave(c, [parse_aspect(AUTH_WIRING)])
        assert c.assembly.snapshot() == (
            "# weavecomp assembly v1\n"
            'I AuthWiring.authGate Gate aspect:AuthWiring expected="Felhi"\n'
            "I rfid1 RfidSim manual\n"
            "I screen1 Screen manual\n"
            "B AuthWiring.authGate.pass -> screen1.show aspect:AuthWiring\n"
            "B rfid1.tagRead -> AuthWiring.authGate.input aspect:AuthWiring\n"
        )
        c.assembly.check_integrity()

    def test_woven_assembly_dispatches(self):
        c = base()
        weave(c, [parse_aspect(AUTH_WIRING)])
        c.enqueue_event("rfid1.tagRead", "Felhi")
        c.enqueue_event("rfid1.tagRead", "Mallory")
        c.run_until_quiescent()
        assert c.trace.delivered("screen1.show") == ["Felhi"]

    def test_empty_list(self):
        c = base()
        before = c.assembly.snapshot()
        assert weave(c, []).aspects == []
        assert c.assembly.snapshot() == before

    def test_priority_order_not_list_order(self):
        a = parse_aspect('aspect A priority 2 graft add component x type Screen end')
        b = parse_aspect('aspect B priority 1 graft add component x type Screen end')
        c1, c2 = base(), base()
        r1 = weave(c1, [a, b])
        weave(c2, [b, a])
        assert [x.aspect for x in r1.aspects] == ["B", "A"]
        assert c1.assembly.snapshot() == c2.assembly.snapshot()

    def test_already_applied(self):
        c = base()
        a = parse_aspect(AUTH_WIRING)
        weave(c, [a])
        with pytest.raises(errors.AlreadyApplied):
            weave(c, [a])

    def test_failed_aspect_rolls_back_only_itself(self):
        good = parse_aspect("aspect Good priority 1 graft add component s type Screen end")
        bad = parse_aspect(
            'aspect Bad priority 2 graft add component n type Counter\n'
            'bind "rfid1.tagRead" -> n.tick end'
        )
        c = base()
        with pytest.raises(errors.WeaveError) as info:
            weave(c, [bad, good])
        assert isinstance(info.value.cause, errors.PayloadTypeMismatch)
        assert c.weaver.is_applied("Good") and not c.weaver.is_applied("Bad")
        assert "Bad.n" not in c.assembly.snapshot()
        assert "Good.s" in c.assembly.snapshot()

    def test_strict_empty_join_point(self):
        a = parse_aspect('aspect A pointcut none : instance "zzz*" sink "show" graft bind "rfid1.tagRead" -> none end')
        c = base()
        before = c.assembly.snapshot()
        weave(c, [a])
        assert c.assembly.snapshot() == before
        unweave(c, "A")
        with pytest.raises(errors.WeaveError) as info:
            weave(c, [a], strict=True)
        assert isinstance(info.value.cause, errors.EmptyJoinPointRequired)
        c.weaver.strict = True
        with pytest.raises(errors.WeaveError):
            weave(c, [a])

    def test_cartesian_product(self):
        c = make_container()
        for n in ("r1", "r2"):
            c.assembly.instantiate("RfidSim", n)
        for n in ("s1", "s2", "s3"):
            c.assembly.instantiate("Screen", n)
        a = parse_aspect('aspect X pointcut r : instance "r*" source "*" pointcut s : instance "s*" sink "*"'
                         " graft bind r -> s end")
        assert len(weave(c, [a]).aspects[0].created_bindings) == 6


class TestUnweave:
    def test_inverse(self):
        c = base()
        before = c.assembly.snapshot()
        weave(c, [parse_aspect(AUTH_WIRING)])
        report = unweave(c, "AuthWiring")
        assert c.assembly.snapshot() == before
        assert report.restored == ["rfid1.tagRead -> screen1.show"]
        assert not any(i.origin == Origin.aspect("AuthWiring") for i in c.assembly.instances.values())

    def test_not_applied(self):
        with pytest.raises(errors.NotApplied):
            unweave(base(), "AuthWiring")

    def test_overlap_force_detached(self):
        c = base()
        a = parse_aspect("aspect A graft add component g type Gate end")
        b = parse_aspect('aspect B graft bind "rfid1.tagRead" -> "A.g.input" end')
        weave(c, [a])
        weave(c, [b])
        report = unweave(c, "A")
        assert report.force_detached == ["rfid1.tagRead -> A.g.input"]
        assert c.weaver.applied["B"].bindings == []
        # B can still be unwoven cleanly
        assert unweave(c, "B").removed_bindings == []

    def test_dangling_restore(self):
        c = base()
        weave(c, [parse_aspect(AUTH_WIRING)])
        c.assembly.destroy(c.assembly.by_name("screen1").id)
        report = unweave(c, "AuthWiring")
        assert report.dangling == ["rfid1.tagRead -> screen1.show"]
        c.assembly.check_integrity()

    def test_reconfigured_records(self):
        c = base()
        weave(c, [parse_aspect(AUTH_WIRING)])
        unweave(c, "AuthWiring")
        assert [r.endpoint for r in c.trace.of_kind("Reconfigured")] == ["weave:AuthWiring", "unweave:AuthWiring"]


# random aspect sets: superposition and inversion

BASE_NAMES = ["a1", "a2", "b1", "b2"]


def relay_base():
    c = make_container()
    for n in BASE_NAMES:
        c.assembly.instantiate("Relay", n)
    asm = c.assembly
    asm.connect(asm.resolve("a1.output", "source"), asm.resolve("b1.input", "sink"))
    return c


patterns = st.sampled_from(["*", "a*", "b*", "?1", "a2", "zz*"])


@st.composite
def aspect_texts(draw, name, priority):
    adds = draw(st.integers(0, 2))
    lines = [f"aspect {name} priority {priority}",
             f'  pointcut src : instance "{draw(patterns)}" source "output"',
             f'  pointcut dst : instance "{draw(patterns)}" sink "input"',
             "graft"]
    for i in range(adds):
        lines.append(f"  add component c{i} type Relay")
        if draw(st.booleans()):
            lines.append(f"  bind src -> c{i}.input")
        if draw(st.booleans()):
            lines.append(f"  bind c{i}.output -> dst")
    if draw(st.booleans()):
        lines.append("  bind src -> dst")
    if draw(st.booleans()):
        lines.append(f'  unbind "{draw(patterns)}.output" -> "{draw(patterns)}.input"')
    lines.append("end")
    return "\n".join(lines)


@st.composite
def aspect_sets(draw):
    n = draw(st.integers(1, 4))
    prios = draw(st.lists(st.integers(-5, 5), min_size=n, max_size=n, unique=True))
    return [parse_aspect(draw(aspect_texts(f"A{i}", p))) for i, p in enumerate(prios)]


@given(aspect_sets(), st.randoms())
def test_superposition_determinism(aspects, rnd):
    c1, c2 = relay_base(), relay_base()
    shuffled = list(aspects)
    rnd.shuffle(shuffled)
    weave(c1, aspects)
    weave(c2, shuffled)
    assert c1.assembly.snapshot() == c2.assembly.snapshot()
    c1.assembly.check_integrity()


@given(aspect_sets())
def test_ownership_soundness(aspects):
    c = relay_base()
    weave(c, aspects)
    for a in aspects:
        unweave(c, a.name)
        tag = Origin.aspect(a.name)
        assert not any(i.origin == tag for i in c.assembly.instances.values())
        assert not any(b.origin == tag for b in c.assembly.bindings.values())
        c.assembly.check_integrity()


@given(st.data())
def test_inversion_without_suppression(data):
    text = data.draw(aspect_texts("Solo", 0)).replace("  unbind", "# unbind")
    c = relay_base()
    before = c.assembly.snapshot()
    weave(c, [parse_aspect(text)])
    unweave(c, "Solo")
    assert c.assembly.snapshot() == before
