"""Event-driven component assembly with aspect weaving, device discovery,
service proxies and a business-rules/workflow layer."""

from .aspects import parse_aspect, parse_aspects
from .discovery import DeviceDescription, DiscoveryBus, ProxyManager, build_device_proxy
from .harness import emit_report, load_config, load_scenario, run_scenario
from .model import Assembly, ComponentType, PayloadType, TypeRegistry, define_component_type, snapshot
from .rules import RulesEngine, evaluate_condition, fire_rules, parse_rules
from .runtime import Container, enqueue_event, run_until_quiescent
from .services import ServiceProxies, StubServer, invoke_remote, parse_service_descriptor
from .weaver import unweave, weave
from .workflow import parse_workflow, run_workflow

__version__ = "0.1.0"

__all__ = [
    "Assembly", "ComponentType", "Container", "DeviceDescription", "DiscoveryBus",
    "PayloadType", "ProxyManager", "RulesEngine", "ServiceProxies", "StubServer",
    "TypeRegistry", "build_device_proxy", "define_component_type", "emit_report",
    "enqueue_event", "evaluate_condition", "fire_rules", "invoke_remote", "load_config",
    "load_scenario", "parse_aspect", "parse_aspects", "parse_rules",
    "parse_service_descriptor", "parse_workflow", "run_scenario", "run_until_quiescent",
    "run_workflow", "snapshot", "unweave", "weave",
]
