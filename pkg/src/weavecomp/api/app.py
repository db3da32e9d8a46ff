"""FastAPI service over the harness.

Stateless endpoints (``/validate``, ``/snapshot``, ``/run``) mirror the CLI.
Sessions keep a loaded container in memory so a client can drive it step by
step; each session is guarded by the container's own lock.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import JSONResponse

from .. import errors
from ..discovery import DeviceDescription
from ..harness import describe, emit_report, load_config, load_scenario, run_scenario
from ..runtime import Container
from ..workflow import run_workflow
from . import schemas

NOT_FOUND = (errors.UnknownEndpoint, errors.UnknownInstance, errors.UnknownAspect,
             errors.UnknownWorkflow, errors.UnknownUuid, errors.UnknownProperty)


def _overrides(settings: schemas.Settings) -> dict:
    return settings.model_dump(exclude_none=True)


def _records(records) -> schemas.DispatchResult:
    return schemas.DispatchResult(records=[
        schemas.TraceRecordOut(seq=r.seq, tick=r.tick, kind=r.kind, endpoint=r.endpoint, payload=r.payload, hop=r.hop)
        for r in records
    ])


def create_app() -> FastAPI:
    app = FastAPI(title="weavecomp", version="0.1.0")
    sessions: dict[str, Container] = {}
    ids = itertools.count(1)
    app.state.sessions = sessions

    @app.exception_handler(errors.WeaveCompError)
    async def _domain_error(request: Request, exc: errors.WeaveCompError):
        status = 404 if isinstance(exc, NOT_FOUND) else 422
        return JSONResponse(status_code=status, content={"error": type(exc).__name__, "detail": str(exc)})

    def session(sid: str) -> Container:
        try:
            return sessions[sid]
        except KeyError:
            raise HTTPException(404, f"no session {sid!r}") from None

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "sessions": len(sessions)}

    @app.post("/validate", response_model=schemas.ValidateResponse)
    def validate(req: schemas.ConfigRequest):
        try:
            container = load_config(req.config_dir, _overrides(req.settings))
        except errors.WeaveCompError as exc:
            return schemas.ValidateResponse(ok=False, error=f"{type(exc).__name__}: {exc}")
        return schemas.ValidateResponse(ok=True, summary=describe(container))

    @app.post("/snapshot", response_model=schemas.SnapshotResponse)
    def snapshot(req: schemas.ConfigRequest):
        return schemas.SnapshotResponse(snapshot=load_config(req.config_dir, _overrides(req.settings)).assembly.snapshot())

    @app.post("/run", response_model=schemas.RunResponse)
    def run(req: schemas.RunRequest):
        container = load_config(req.config_dir, _overrides(req.settings))
        report = run_scenario(container, load_scenario(req.scenario), fail_fast=req.fail_fast)
        return schemas.RunResponse(
            exit_code=report.exit_code,
            passed=report.passed,
            total=len(report.expectations),
            report=emit_report(report, req.report),
            trace=emit_report(report, "trace"),
        )

    @app.post("/sessions", response_model=schemas.SessionCreated, status_code=201)
    def create_session(req: schemas.ConfigRequest):
        container = load_config(req.config_dir, _overrides(req.settings))
        sid = f"s{next(ids)}"
        sessions[sid] = container
        return schemas.SessionCreated(session=sid, summary=describe(container))

    @app.delete("/sessions/{sid}", status_code=204)
    def delete_session(sid: str):
        session(sid)
        del sessions[sid]

    @app.get("/sessions/{sid}/snapshot", response_model=schemas.SnapshotResponse)
    def session_snapshot(sid: str):
        return schemas.SnapshotResponse(snapshot=session(sid).assembly.snapshot())

    @app.get("/sessions/{sid}/trace", response_model=schemas.DispatchResult)
    def session_trace(sid: str, since: int = 0):
        return _records(session(sid).trace.records[since:])

    @app.post("/sessions/{sid}/inject", response_model=schemas.DispatchResult)
    def inject(sid: str, req: schemas.InjectRequest):
        container = session(sid)
        with container.turn():
            if req.tick is not None:
                container.clock = max(container.clock, req.tick)
            try:
                container.assembly.resolve(req.endpoint, "source")
            except errors.UnknownEndpoint:
                container.invoke_sink(req.endpoint, req.value)
            else:
                container.enqueue_event(req.endpoint, req.value)
            start = len(container.trace) - 1
            container.run_until_quiescent()
            return _records(container.trace.records[start:])

    @app.get("/sessions/{sid}/facts")
    def facts(sid: str) -> dict:
        return session(sid).engine.fact_values()

    @app.post("/sessions/{sid}/facts", response_model=schemas.DispatchResult)
    def put_fact(sid: str, req: schemas.FactIn):
        container = session(sid)
        with container.turn():
            start = len(container.trace)
            if req.retract:
                container.engine.retract_fact(req.key)
            else:
                container.engine.assert_fact(req.key, req.value, source="api")
            container.run_until_quiescent()
            return _records(container.trace.records[start:])

    @app.post("/sessions/{sid}/weave")
    def weave(sid: str, req: schemas.AspectRequest) -> dict:
        container = session(sid)
        with container.turn():
            report = container.weaver.weave(req.aspects)
            container.run_until_quiescent()
        return {"lines": report.lines(), "snapshot": container.assembly.snapshot()}

    @app.post("/sessions/{sid}/unweave/{aspect}")
    def unweave(sid: str, aspect: str) -> dict:
        container = session(sid)
        with container.turn():
            report = container.weaver.unweave(aspect)
            container.run_until_quiescent()
        return {"report": asdict(report), "snapshot": container.assembly.snapshot()}

    @app.post("/sessions/{sid}/devices", status_code=201)
    def announce(sid: str, req: schemas.DeviceIn) -> dict:
        container = session(sid)
        device = DeviceDescription.from_dict(req.description)
        with container.turn():
            container.bus.announce(device, req.tick if req.tick is not None else container.clock)
            container.run_until_quiescent()
        return {"uuid": device.uuid, "proxy": container.proxy_manager.proxies.get(device.uuid)}

    @app.delete("/sessions/{sid}/devices/{uuid}")
    def withdraw(sid: str, uuid: str) -> dict:
        container = session(sid)
        with container.turn():
            if uuid not in container.bus.alive:
                raise errors.UnknownUuid(uuid)
            container.bus.withdraw(uuid, container.clock)
            container.run_until_quiescent()
        return {"uuid": uuid, "snapshot": container.assembly.snapshot()}

    @app.post("/sessions/{sid}/workflows/{name}", response_model=schemas.WorkflowOut)
    def workflow(sid: str, name: str):
        container = session(sid)
        with container.turn():
            try:
                trace = run_workflow(container.engine, container, name)
            except errors.ActivityFailure as exc:
                trace = exc.trace
        return schemas.WorkflowOut(workflow=name, status=trace.status, records=[r.line() for r in trace.records])

    return app


app = create_app()
