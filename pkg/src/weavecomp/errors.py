"""Exception hierarchy shared by every weavecomp module."""

from __future__ import annotations


class WeaveCompError(Exception):
    """Base class for all weavecomp errors."""


# core model

class DuplicateTypeName(WeaveCompError):
    pass


class UnknownBehaviorKind(WeaveCompError):
    pass


class DuplicatePortName(WeaveCompError):
    pass


class UnknownType(WeaveCompError):
    pass


class DuplicateInstanceName(WeaveCompError):
    pass


class PropertyTypeMismatch(WeaveCompError):
    pass


class UnknownInstance(WeaveCompError):
    pass


class UnknownProperty(WeaveCompError):
    pass


class UnknownEndpoint(WeaveCompError):
    pass


class PayloadTypeMismatch(WeaveCompError):
    pass


class DuplicateBinding(WeaveCompError):
    pass


class UnknownBinding(WeaveCompError):
    pass


# runtime

class DuplicateBehaviorKind(WeaveCompError):
    pass


class HopLimitExceeded(WeaveCompError):
    def __init__(self, endpoint: str, hop: int, limit: int):
        super().__init__(f"event on {endpoint} reached hop {hop} (limit {limit})")
        self.endpoint = endpoint
        self.hop = hop
        self.limit = limit


class EventBudgetExhausted(WeaveCompError):
    def __init__(self, budget: int, pending: int):
        super().__init__(f"processed {budget} events, {pending} still queued")
        self.budget = budget
        self.pending = pending


class BehaviorError(WeaveCompError):
    """A behavior produced an emission the component type cannot carry."""


# aspect weaver

class ParseError(WeaveCompError):
    """Malformed input text; ``line``/``column`` are 1-based, 0 when unknown."""

    def __init__(self, message: str, line: int = 0, column: int = 0, source: str = ""):
        where = f"{source}:" if source else ""
        super().__init__(f"{where}{line}:{column}: {message}")
        self.message = message
        self.line = line
        self.column = column
        self.source = source


class UnresolvedPointcutRef(WeaveCompError):
    pass


class AlreadyApplied(WeaveCompError):
    pass


class NotApplied(WeaveCompError):
    pass


class UnknownAspect(WeaveCompError):
    pass


class EmptyJoinPointRequired(WeaveCompError):
    pass


class WeaveError(WeaveCompError):
    """An aspect failed to weave; its own changes were rolled back."""

    def __init__(self, aspect: str, cause: Exception, report=None):
        super().__init__(f"weaving {aspect} failed: {cause}")
        self.aspect = aspect
        self.cause = cause
        self.report = report


# discovery

class DuplicateUuid(WeaveCompError):
    pass


class UnknownUuid(WeaveCompError):
    pass


class DuplicateProxy(WeaveCompError):
    pass


class NameClashUnresolvable(WeaveCompError):
    pass


class UnresolvableLocation(WeaveCompError):
    pass


# service proxy

class DuplicateOperation(WeaveCompError):
    pass


class EmptyService(WeaveCompError):
    pass


class DuplicateStub(WeaveCompError):
    pass


class MalformedEndpoint(WeaveCompError):
    pass


# rules and workflow

class UnknownConditionRef(WeaveCompError):
    pass


class TypeMismatchInCondition(WeaveCompError):
    pass


class MissingFact(WeaveCompError):
    def __init__(self, key: str):
        super().__init__(f"fact {key!r} is not asserted")
        self.key = key


class UnknownWorkflow(WeaveCompError):
    pass


class ActivityFailure(WeaveCompError):
    def __init__(self, activity: str, cause: Exception, trace=None):
        super().__init__(f"{activity}: {cause}")
        self.activity = activity
        self.cause = cause
        self.trace = trace


# harness

class ConfigError(WeaveCompError):
    pass


class CrossReferenceError(ConfigError):
    pass


class UnknownFormat(WeaveCompError):
    pass
