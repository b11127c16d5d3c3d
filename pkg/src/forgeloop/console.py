"""Localhost HTTP + WebSocket surface over the session manager.

REST verbs mutate only through the three documented inputs (task/resume
text, approval decisions, close); everything else is read-only projection
of the transcript. The WebSocket stream carries transcript records verbatim
and resumes gap-free from any sequence number.
"""
from __future__ import annotations

import asyncio
import queue
from pathlib import Path

from fastapi import FastAPI, Query, Request, Response, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .manager import (
    AlreadyResolved,
    SessionManager,
    UnknownApproval,
    UnknownSession,
    WrongSessionState,
)
from .session import BlankTask

STREAM_POLL_S = 0.25


def create_app(
    manager: SessionManager,
    auth_token: str | None = None,
    static_dir: Path | None = None,
) -> FastAPI:
    app = FastAPI(title="forgeloop console", docs_url=None, redoc_url=None)

    if auth_token:
        @app.middleware("http")
        async def require_token(request: Request, call_next):
            if request.url.path != "/health":
                header = request.headers.get("Authorization", "")
                if header != f"Bearer {auth_token}":
                    return JSONResponse({"error": "unauthorized"}, status_code=401)
            return await call_next(request)

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/sessions")
    def list_sessions():
        return [s.to_wire() for s in manager.list_summaries()]

    @app.post("/sessions", status_code=201)
    def create_session(overrides: dict | None = None):
        try:
            runtime = manager.create_session(overrides or {})
        except (ValueError, TypeError) as exc:
            return JSONResponse({"error": str(exc)}, status_code=400)
        return runtime.summary().to_wire()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            return manager.get(session_id).summary().to_wire()
        except UnknownSession:
            return JSONResponse({"error": "unknown session"}, status_code=404)

    @app.post("/sessions/{session_id}/input", status_code=202)
    def submit_input(session_id: str, body: dict):
        text = body.get("text", "")
        if not isinstance(text, str) or not text.strip():
            return JSONResponse({"error": "text must be non-blank"}, status_code=422)
        try:
            manager.get(session_id).submit_input(text)
        except UnknownSession:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        except WrongSessionState as exc:
            return JSONResponse({"error": f"session is {exc}"}, status_code=409)
        except BlankTask:
            return JSONResponse({"error": "text must be non-blank"}, status_code=422)
        return {"accepted": True}

    @app.post("/sessions/{session_id}/approvals/{exec_id}", status_code=204)
    def resolve_approval(session_id: str, exec_id: str, body: dict):
        decision = body.get("decision")
        if decision not in ("approve", "deny"):
            return JSONResponse({"error": "decision must be approve or deny"}, status_code=400)
        try:
            manager.get(session_id).resolve_approval(exec_id, decision == "approve")
        except UnknownSession:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        except UnknownApproval:
            return JSONResponse({"error": "no such pending approval"}, status_code=404)
        except AlreadyResolved:
            return JSONResponse({"error": "already resolved"}, status_code=409)
        return Response(status_code=204)

    @app.post("/sessions/{session_id}/close", status_code=204)
    def close_session(session_id: str):
        try:
            manager.close_session(session_id)
        except UnknownSession:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        return Response(status_code=204)

    @app.websocket("/sessions/{session_id}/events")
    async def stream_events(ws: WebSocket, session_id: str, from_seq: int = Query(0, alias="from")):
        await ws.accept()
        try:
            runtime = manager.get(session_id)
        except UnknownSession:
            await ws.send_json({"error": "unknown session"})
            await ws.close(code=4404)
            return
        snapshot, live = runtime.subscribe(from_seq)
        loop = asyncio.get_running_loop()
        last_sent = from_seq - 1
        try:
            for event in snapshot:
                await ws.send_json(_wire(event))
                last_sent = event.seq
            while True:
                try:
                    item = await loop.run_in_executor(None, live.get, True, STREAM_POLL_S)
                except queue.Empty:
                    continue
                if item is None:  # session closed or subscriber dropped
                    await ws.close(code=1000)
                    return
                if item.seq <= last_sent:
                    continue
                await ws.send_json(_wire(item))
                last_sent = item.seq
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            runtime.unsubscribe(live)

    if static_dir and Path(static_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def _wire(event) -> dict:
    return {"seq": event.seq, "t": event.t, "kind": event.kind, "payload": event.payload}
