"""Service configuration: one YAML file shared by batch and live workflows.

Flags override file values; the environment variables BARGEWATCH_BIND and
BARGEWATCH_LOG_DIR override both for the bind address and log directory.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .detector import DetectorConfig
from .monitor import CameraSource

ENV_BIND = "BARGEWATCH_BIND"
ENV_LOG_DIR = "BARGEWATCH_LOG_DIR"


class ConfigError(ValueError):
    """Unusable service configuration."""


@dataclass(frozen=True)
class MonitorSettings:
    min_consecutive: int = 2
    gap_tolerance: int = 1
    fsync: bool = False

    def __post_init__(self) -> None:
        if self.min_consecutive < 1:
            raise ConfigError("monitor.min_consecutive must be >= 1")
        if self.gap_tolerance < 0:
            raise ConfigError("monitor.gap_tolerance must be >= 0")


@dataclass(frozen=True)
class ServerSettings:
    bind: str = "127.0.0.1"
    port: int = 8000
    bearer_token: str | None = None

    def __post_init__(self) -> None:
        if not (0 < self.port < 65536):
            raise ConfigError(f"server.port out of range: {self.port}")


@dataclass
class ServiceConfig:
    cameras: list[CameraSource] = field(default_factory=list)
    detector: DetectorConfig = field(default_factory=lambda: DetectorConfig(model_path="model.npz"))
    stub_fixture: str | None = None
    monitor: MonitorSettings = field(default_factory=MonitorSettings)
    server: ServerSettings = field(default_factory=ServerSettings)
    log_dir: str = "logs"

    def camera(self, camera_id: str) -> CameraSource:
        for cam in self.cameras:
            if cam.id == camera_id:
                return cam
        raise KeyError(camera_id)


def load_config(path: str | Path) -> ServiceConfig:
    """Parse and validate the service YAML; apply env overrides."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")

    known = {"cameras", "detector", "monitor", "server", "log_dir"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {sorted(unknown)}")

    cameras = []
    seen_ids = set()
    for i, entry in enumerate(data.get("cameras", [])):
        try:
            cam = CameraSource(
                id=entry["id"],
                source=entry["source"],
                poll_interval_seconds=float(entry.get("poll_interval_seconds", 5.0)),
                enabled=bool(entry.get("enabled", True)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"{path}: cameras[{i}]: {exc}") from exc
        if cam.id in seen_ids:
            raise ConfigError(f"{path}: duplicate camera id {cam.id!r}")
        seen_ids.add(cam.id)
        cameras.append(cam)

    det = data.get("detector", {})
    stub_fixture = det.pop("stub_fixture", None) if isinstance(det, dict) else None
    try:
        detector = DetectorConfig(
            model_path=det.get("model_path", ""),
            input_size=int(det.get("input_size", 640)),
            confidence_threshold=float(det.get("confidence_threshold", 0.25)),
            nms_iou_threshold=float(det.get("nms_iou_threshold", 0.7)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: detector: {exc}") from exc

    mon = data.get("monitor", {})
    monitor = MonitorSettings(
        min_consecutive=int(mon.get("min_consecutive", 2)),
        gap_tolerance=int(mon.get("gap_tolerance", 1)),
        fsync=bool(mon.get("fsync", False)),
    )

    srv = data.get("server", {})
    server = ServerSettings(
        bind=str(srv.get("bind", "127.0.0.1")),
        port=int(srv.get("port", 8000)),
        bearer_token=srv.get("bearer_token"),
    )

    config = ServiceConfig(
        cameras=cameras,
        detector=detector,
        stub_fixture=stub_fixture,
        monitor=monitor,
        server=server,
        log_dir=str(data.get("log_dir", "logs")),
    )
    return apply_env_overrides(config)


def apply_env_overrides(config: ServiceConfig) -> ServiceConfig:
    bind = os.environ.get(ENV_BIND)
    if bind:
        config.server = ServerSettings(
            bind=bind, port=config.server.port, bearer_token=config.server.bearer_token
        )
    log_dir = os.environ.get(ENV_LOG_DIR)
    if log_dir:
        config.log_dir = log_dir
    return config
