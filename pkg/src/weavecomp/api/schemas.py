from __future__ import annotations

from typing import Any, Literal, Optional, Union

from pydantic import BaseModel, Field

Payload = Union[None, bool, int, str]


class Settings(BaseModel):
    hop_limit: Optional[int] = Field(default=None, ge=1)
    strict_weave: Optional[bool] = None


class ConfigRequest(BaseModel):
    config_dir: str
    settings: Settings = Field(default_factory=Settings)


class ValidateResponse(BaseModel):
    ok: bool
    summary: str = ""
    error: str = ""


class SnapshotResponse(BaseModel):
    snapshot: str


class RunRequest(ConfigRequest):
    scenario: str = Field(description="path of a scenario file, resolved on the server")
    fail_fast: bool = False
    report: Literal["text", "json"] = "text"


class RunResponse(BaseModel):
    exit_code: int
    passed: int
    total: int
    report: str
    trace: str


class SessionCreated(BaseModel):
    session: str
    summary: str


class InjectRequest(BaseModel):
    endpoint: str
    value: Payload = None
    tick: Optional[int] = Field(default=None, ge=0)


class TraceRecordOut(BaseModel):
    seq: int
    tick: int
    kind: str
    endpoint: str
    payload: Any = None
    hop: int = 0


class DispatchResult(BaseModel):
    records: list[TraceRecordOut]


class FactIn(BaseModel):
    key: str
    value: Payload = None
    retract: bool = False


class AspectRequest(BaseModel):
    aspects: list[str] = Field(min_length=1)


class DeviceIn(BaseModel):
    description: dict[str, Any]
    tick: Optional[int] = Field(default=None, ge=0)


class WorkflowOut(BaseModel):
    workflow: str
    status: str
    records: list[str]


class ErrorOut(BaseModel):
    error: str
    detail: str
