"""Read-only HTTP JSON API over the event log and live observations.

The server never mutates state: camera pipelines write the event log and
publish their latest observation; these endpoints only read. Unknown
cameras give structured 404 bodies, malformed query values structured 4xx.
"""

from __future__ import annotations

from datetime import date as date_type
from datetime import datetime, timezone

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.responses import JSONResponse

from .config import ServiceConfig
from .monitor import CameraStatus, EventLog, aggregate_daily


def _parse_date(value: str) -> date_type:
    try:
        return date_type.fromisoformat(value)
    except ValueError:
        raise HTTPException(status_code=400, detail=f"invalid date {value!r}, want YYYY-MM-DD")


def _parse_timestamp(value: str | None, name: str) -> datetime | None:
    if value is None:
        return None
    try:
        parsed = datetime.fromisoformat(value)
    except ValueError:
        raise HTTPException(
            status_code=400, detail=f"invalid {name} timestamp {value!r}, want ISO-8601"
        )
    if parsed.tzinfo is None:
        parsed = parsed.replace(tzinfo=timezone.utc)
    return parsed


def create_app(
    config: ServiceConfig,
    event_log: EventLog | None = None,
    statuses: dict[str, CameraStatus] | None = None,
) -> FastAPI:
    """Build the API over a config, an event log, and live camera statuses."""
    log = event_log or EventLog(config.log_dir)
    statuses = statuses if statuses is not None else {}
    app = FastAPI(title="bargewatch", version="0.1.0", docs_url=None, redoc_url=None)

    def check_token(request: Request) -> None:
        token = config.server.bearer_token
        if not token:
            return
        header = request.headers.get("authorization", "")
        if header != f"Bearer {token}":
            raise HTTPException(status_code=401, detail="missing or invalid bearer token")

    def known_camera(camera_id: str) -> None:
        if not any(cam.id == camera_id for cam in config.cameras):
            raise HTTPException(status_code=404, detail=f"unknown camera {camera_id!r}")

    def camera_state(camera_id: str) -> dict:
        status = statuses.get(camera_id)
        last = status.last_observation if status else None
        return {
            "id": camera_id,
            "degraded": bool(status and status.degraded),
            "frames_seen": status.frames_seen if status else 0,
            "errors": status.errors if status else 0,
            "last_seen": last.timestamp.isoformat() if last else None,
            "last_scene": last.scene.value if last else None,
        }

    @app.exception_handler(HTTPException)
    async def structured_error(request: Request, exc: HTTPException) -> JSONResponse:
        return JSONResponse(status_code=exc.status_code, content={"error": exc.detail})

    @app.get("/health")
    def health() -> dict:
        return {
            "status": "ok",
            "cameras": {cam.id: camera_state(cam.id) for cam in config.cameras},
        }

    @app.get("/cameras")
    def cameras(_: None = Depends(check_token)) -> list[dict]:
        return [
            {
                "id": cam.id,
                "source": cam.source,
                "enabled": cam.enabled,
                "poll_interval_seconds": cam.poll_interval_seconds,
                "status": camera_state(cam.id),
            }
            for cam in config.cameras
        ]

    @app.get("/cameras/{camera_id}/status")
    def camera_status(camera_id: str, _: None = Depends(check_token)) -> dict:
        known_camera(camera_id)
        return camera_state(camera_id)

    @app.get("/cameras/{camera_id}/events")
    def camera_events(
        camera_id: str,
        _: None = Depends(check_token),
        from_: str | None = Query(default=None, alias="from"),
        to: str | None = Query(default=None),
    ) -> dict:
        known_camera(camera_id)
        events = log.read_range(
            camera_id,
            start=_parse_timestamp(from_, "from"),
            end=_parse_timestamp(to, "to"),
        )
        return {
            "camera_id": camera_id,
            "count": len(events),
            "events": [
                {
                    "scene": e.scene.value,
                    "start": e.start.isoformat(),
                    "end": e.end.isoformat(),
                    "frame_count": e.frame_count,
                    "peak_confidence": e.peak_confidence,
                }
                for e in events
            ],
        }

    @app.get("/cameras/{camera_id}/daily")
    def camera_daily(
        camera_id: str,
        date: str,
        _: None = Depends(check_token),
    ) -> dict:
        known_camera(camera_id)
        day = _parse_date(date)
        events = log.read_day(camera_id, day)
        return aggregate_daily(events, day, camera_id).to_dict()

    return app


def serve(config: ServiceConfig, event_log: EventLog | None = None) -> None:
    """Run the API under uvicorn; raises on an unbindable port."""
    import uvicorn

    app = create_app(config, event_log)
    uvicorn.run(app, host=config.server.bind, port=config.server.port, log_level="info")
