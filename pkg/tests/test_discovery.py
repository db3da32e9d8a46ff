from __future__ import annotations

import time

import pytest
from hypothesis import given, strategies as st

from weavecomp import errors
from weavecomp.aspects import parse_aspect
from weavecomp.discovery import (
    ALIVE,
    BYEBYE,
    DeviceDescription,
    DiscoveryBus,
    DiscoveryMessage,
    ProxyManager,
    UdpTransport,
    build_device_proxy,
    scripted_device_stub,
)
from weavecomp.model import Origin
from weavecomp.rules import RulesEngine, parse_rules

from conftest import make_container

RFID = DeviceDescription.from_dict({
    "uuid": "uuid:rfid-1", "type": "urn:sensor:rfid:1", "name": "rfid1",
    "services": [{"id": "Reader", "actions": [], "variables": [{"name": "tagRead", "type": "String"}]}],
})
LAMP = DeviceDescription.from_dict({
    "uuid": "uuid:lamp-1", "type": "urn:actuator:lamp:1", "name": "lamp",
    "services": [{"id": "Power", "actions": [{"name": "setState", "in": "Boolean"}],
                  "variables": [{"name": "state", "type": "Boolean"}]}],
})
SCREEN = DeviceDescription.from_dict({
    "uuid": "uuid:screen-1", "type": "urn:display:screen:1", "name": "screen", "services": [],
})


def hooked():
    c = make_container()
    bus = DiscoveryBus()
    ProxyManager(c, bus)
    c.bus = bus
    return c, bus


class TestBus:
    def test_listener_gets_alive(self):
        bus = DiscoveryBus()
        got = []
        bus.subscribe(got.append)
        msg = bus.announce(RFID, tick=3)
        assert got == [msg]
        assert (msg.verb, msg.uuid, msg.device_type, msg.location, msg.tick) == (
            ALIVE, "uuid:rfid-1", "urn:sensor:rfid:1", "desc/uuid:rfid-1.json", 3)
        assert bus.describe(msg.location) is RFID

    def test_duplicate_and_unknown(self):
        bus = DiscoveryBus()
        bus.announce(RFID)
        with pytest.raises(errors.DuplicateUuid):
            bus.announce(RFID)
        with pytest.raises(errors.UnknownUuid):
            bus.withdraw("uuid:none")
        with pytest.raises(errors.UnresolvableLocation):
            bus.describe("desc/none.json")

    def test_no_listeners_and_inverse(self):
        bus = DiscoveryBus()
        bus.announce(RFID)
        assert set(bus.alive) == {"uuid:rfid-1"}
        assert bus.withdraw("uuid:rfid-1").verb == BYEBYE
        assert bus.alive == {}

    def test_search(self):
        bus = DiscoveryBus()
        assert bus.search("*") == []
        bus.announce(SCREEN)
        bus.announce(RFID)
        assert [m.uuid for m in bus.search("urn:sensor:*")] == ["uuid:rfid-1"]
        assert [m.uuid for m in bus.search("*")] == ["uuid:rfid-1", "uuid:screen-1"]

    def test_listeners_see_same_order(self):
        bus = DiscoveryBus()
        a, b = [], []
        bus.subscribe(a.append)
        bus.subscribe(b.append)
        bus.announce(RFID)
        bus.announce(LAMP)
        bus.withdraw(RFID.uuid)
        assert a == b and [m.verb for m in a] == [ALIVE, ALIVE, BYEBYE]


class TestWireFormat:
    def test_alive_text(self):
        msg = DiscoveryMessage(ALIVE, "3f1c", "urn:sensor:rfid:1", "rfid1", "desc/rfid1.json", tick=0)
        assert msg.encode() == (
            "NOTIFY ALIVE\nUUID: 3f1c\nTYPE: urn:sensor:rfid:1\nNAME: rfid1\n"
            "LOCATION: desc/rfid1.json\nTICK: 0\n\n"
        )

    @given(st.sampled_from([ALIVE, BYEBYE, "SEARCH", "RESPONSE"]),
           st.text("abc:-1*.", min_size=1, max_size=12), st.integers(0, 10_000))
    def test_roundtrip(self, verb, text, tick):
        if verb == "SEARCH":
            msg = DiscoveryMessage(verb, pattern=text, tick=tick)
        elif verb == BYEBYE:
            msg = DiscoveryMessage(verb, text, tick=tick)
        else:
            msg = DiscoveryMessage(verb, text, "urn:" + text, "n" + text, "desc/" + text, tick=tick)
        assert DiscoveryMessage.decode(msg.encode()) == msg

    def test_malformed(self):
        with pytest.raises(errors.ParseError):
            DiscoveryMessage.decode("NOTIFY ALIVE\nUUID: x\n\n")
        with pytest.raises(errors.ParseError):
            DiscoveryMessage.decode("HELLO\n\n")

    def test_udp_loopback(self):
        rx, tx = UdpTransport(), UdpTransport()
        got = []
        rx.listen(got.append)
        try:
            msg = DiscoveryMessage(BYEBYE, "uuid:x", tick=4)
            tx.send(msg, rx.address)
            deadline = time.monotonic() + 2
            while not got and time.monotonic() < deadline:
                time.sleep(0.01)
            assert got == [msg]
        finally:
            rx.close()
            tx.close()


class TestProxies:
    def test_rfid_ports(self):
        c = make_container()
        iid = build_device_proxy(c, RFID)
        inst = c.assembly.instance(iid)
        assert len(inst.type.sinks) == 0
        assert [p.name for p in inst.type.sources] == ["tagRead"]
        assert inst.origin == Origin.device("uuid:rfid-1")

    def test_lamp_ports_and_duplicate(self):
        c = make_container()
        iid = build_device_proxy(c, LAMP)
        assert [p.name for p in c.assembly.instance(iid).type.sinks] == ["setState"]
        with pytest.raises(errors.DuplicateProxy):
            build_device_proxy(c, LAMP)

    def test_name_clash_suffix(self):
        c, bus = hooked()
        c.assembly.instantiate("Screen", "lamp")
        bus.announce(LAMP)
        assert c.assembly.instance(c.proxy_manager.proxies[LAMP.uuid]).name == "lamp-2"

    def test_action_roundtrip_through_stub(self):
        c, bus = hooked()
        bus.register_stub(LAMP.uuid, scripted_device_stub({"setState": {"state": "$in"}}))
        bus.announce(LAMP)
        c.invoke_sink("lamp.setState", True)
        c.run_until_quiescent()
        assert [(r.endpoint, r.payload) for r in c.trace.of_kind("Emitted")] == [("lamp.state", True)]

    def test_publish_variable(self):
        c, bus = hooked()
        c.assembly.instantiate("Screen", "s")
        bus.announce(RFID)
        c.assembly.connect(c.assembly.resolve("rfid1.tagRead", "source"), c.assembly.resolve("s.show", "sink"))
        c.proxy_manager.publish_variable(RFID.uuid, "tagRead", "Felhi")
        c.run_until_quiescent()
        assert c.trace.delivered("s.show") == ["Felhi"]

    def test_withdraw_removes_proxy(self):
        c, bus = hooked()
        c.assembly.instantiate("Screen", "s")
        before = c.assembly.snapshot()
        bus.announce(RFID)
        c.assembly.connect(c.assembly.resolve("rfid1.tagRead", "source"), c.assembly.resolve("s.show", "sink"))
        bus.withdraw(RFID.uuid)
        assert c.assembly.snapshot() == before
        reconf = c.trace.of_kind("Reconfigured")
        assert [r.endpoint for r in reconf] == ["proxy+:rfid1", "proxy-:rfid1"]
        assert reconf[1].payload == "rfid1.tagRead -> s.show"


HOTPLUG_RULES = """
<RuleDefinitions>
  <RuleDefinitions.Conditions>
    <RuleExpressionCondition Name="LampPresent">
      <CodeBinaryOperatorExpression Operator="ValueEquality">
        <CodeBinaryOperatorExpression.Left><FactReference Key="device.lamp" Type="Boolean"/></CodeBinaryOperatorExpression.Left>
        <CodeBinaryOperatorExpression.Right><CodePrimitiveExpression Type="Boolean" Value="true"/></CodeBinaryOperatorExpression.Right>
      </CodeBinaryOperatorExpression>
    </RuleExpressionCondition>
  </RuleDefinitions.Conditions>
  <Rules>
    <Rule Name="WireLamp" Condition="LampPresent">
      <Then><WeaveAspect Name="LampWiring"/></Then>
      <Else><UnweaveAspect Name="LampWiring"/></Else>
    </Rule>
  </Rules>
</RuleDefinitions>
"""


def test_rule_fired_weave_round_trip():
    c = make_container()
    c.assembly.instantiate("Gate", "g")
    bus = DiscoveryBus()
    ProxyManager(c, bus, fire_rules=True)
    RulesEngine(c, parse_rules(HOTPLUG_RULES))
    c.weaver.define(parse_aspect(
        'aspect LampWiring pointcut lamps : instance "lamp*" sink "setState" graft '
        'add component b type Relay bind "g.pass" -> b.input end'))
    before = c.assembly.snapshot()
    bus.announce(LAMP)
    assert c.weaver.is_applied("LampWiring")
    assert "LampWiring.b" in c.assembly.snapshot()
    bus.withdraw(LAMP.uuid)
    assert not c.weaver.is_applied("LampWiring")
    assert c.assembly.snapshot() == before


# randomized device descriptions

ident = st.from_regex(r"[a-z][a-zA-Z0-9]{0,6}", fullmatch=True)
ptype = st.sampled_from(["String", "Integer", "Boolean", "Unit"])


@st.composite
def devices(draw, uuid="uuid:dev"):
    services = []
    for sid in draw(st.lists(ident, unique=True, max_size=3)):
        actions = [{"name": n, "in": draw(ptype)} for n in draw(st.lists(ident, unique=True, max_size=3))]
        variables = [{"name": n, "type": draw(ptype)} for n in draw(st.lists(ident, unique=True, max_size=3))]
        services.append({"id": sid, "actions": actions, "variables": variables})
    name = draw(st.text(st.characters(min_codepoint=33, max_codepoint=0x24F), min_size=1, max_size=8))
    return DeviceDescription.from_dict({"uuid": uuid, "type": "urn:x:" + draw(ident), "name": name,
                                        "services": services})


@given(devices())
def test_hotplug_round_trip_random(device):
    c, bus = hooked()
    c.assembly.instantiate("Probe", "probe")
    before = c.assembly.snapshot()
    bus.announce(device)
    inst = c.assembly.instance(c.proxy_manager.proxies[device.uuid])
    # wire every proxy source that can reach the probe
    for port in inst.type.sources:
        for sink in ("in", "num"):
            try:
                c.assembly.connect(c.assembly.resolve(f"{inst.name}.{port.name}", "source"),
                                   c.assembly.resolve(f"probe.{sink}", "sink"))
            except errors.WeaveCompError:
                pass
    n_actions = sum(len(s.actions) for s in device.services)
    assert len(inst.type.sinks) == n_actions
    bus.withdraw(device.uuid)
    assert c.assembly.snapshot() == before
    assert c.proxy_manager.proxies == {}
    c.assembly.check_integrity()


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3)), max_size=15))
def test_registry_proxy_coherence(ops):
    c, bus = hooked()
    for announce, k in ops:
        dev = DeviceDescription.from_dict({"uuid": f"uuid:{k}", "type": "urn:t", "name": "d", "services": []})
        try:
            bus.announce(dev) if announce else bus.withdraw(dev.uuid)
        except errors.WeaveCompError:
            pass
        proxied = {i.origin.detail for i in c.assembly.instances.values() if i.origin.kind == "device"}
        assert proxied == set(bus.alive)
