from __future__ import annotations

from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from weavecomp.model import ComponentType
from weavecomp.runtime import Container

ROOT = Path(__file__).resolve().parent.parent
CASE_STUDY = ROOT / "configs" / "case-study"
CASE_STUDY_SERVICE = ROOT / "configs" / "case-study-service"

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

TYPES = [
    {"name": "RfidSim", "behavior": "Relay",
     "sinks": [{"name": "simulate", "type": "String"}],
     "sources": [{"name": "tagRead", "type": "String"}]},
    {"name": "Screen", "behavior": "Sink", "sinks": [{"name": "show", "type": "String"}]},
    {"name": "Gate", "behavior": "Gate",
     "properties": [{"name": "expected", "type": "String", "default": ""}],
     "sinks": [{"name": "input", "type": "String"}],
     "sources": [{"name": "pass", "type": "String"}, {"name": "fail", "type": "String"}]},
    {"name": "Relay", "behavior": "Relay",
     "sinks": [{"name": "input", "type": "String"}],
     "sources": [{"name": "output", "type": "String"}]},
    {"name": "Counter", "behavior": "Counter",
     "sinks": [{"name": "tick", "type": "Integer"}],
     "sources": [{"name": "count", "type": "Integer"}]},
    {"name": "Probe", "behavior": "Probe",
     "sinks": [{"name": "in", "type": "String"}, {"name": "num", "type": "Integer"}]},
]


def make_container(**kwargs) -> Container:
    c = Container(**kwargs)
    for t in TYPES:
        c.registry.define(ComponentType.from_dict(t))
    return c


@pytest.fixture
def container() -> Container:
    return make_container()


@pytest.fixture
def assembly(container):
    return container.assembly


# one summary line per acceptance criterion, taken from the real test outcomes

_criteria: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        title = report.nodeid.split("::")[-1]
        _criteria[title] = ("PASS" if report.passed else "FAIL", report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for title, (outcome, _) in sorted(_criteria.items()):
        terminalreporter.write_line(f"{outcome}  {title}")
