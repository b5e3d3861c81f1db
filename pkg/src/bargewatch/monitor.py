"""Live monitoring pipeline: sample frames, classify scenes, debounce
passage events, and persist them to per-camera append-only logs.

Each camera runs an independent pipeline (sample -> detect -> classify ->
debounce -> append); cameras share nothing except the read model served
over HTTP. Directory sources replay deterministically with synthetic
timestamps so repeated runs produce byte-identical logs.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from datetime import date as date_type
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from .geometry import Detection
from .scene import SceneClass, classify_scene

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")
REPLAY_EPOCH = datetime(1970, 1, 1, tzinfo=timezone.utc)

#: Events whose scene involves a vessel (towing, free, or anomalous F).
VESSEL_SCENES = {SceneClass.B, SceneClass.C, SceneClass.D, SceneClass.F}
WITH_BARGE_SCENES = {SceneClass.C, SceneClass.D}


class EventLogError(RuntimeError):
    """Event log corrupted beyond the recoverable trailing partial line."""


@dataclass(frozen=True)
class CameraSource:
    """One camera: a snapshot URL, a video file, or an image directory."""

    id: str
    source: str
    poll_interval_seconds: float = 5.0
    enabled: bool = True

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("camera id must be non-empty")
        if self.poll_interval_seconds <= 0:
            raise ValueError(f"poll_interval_seconds must be positive, got {self.poll_interval_seconds}")

    @property
    def kind(self) -> str:
        if self.source.startswith(("http://", "https://")):
            return "snapshot"
        if Path(self.source).is_dir():
            return "directory"
        return "video"


@dataclass(frozen=True)
class FrameObservation:
    camera_id: str
    timestamp: datetime
    scene: SceneClass
    detections: tuple[Detection, ...] = ()
    frame_path: str | None = None

    def __post_init__(self) -> None:
        expected = classify_scene(d.label for d in self.detections)
        if self.scene != expected:
            raise ValueError(f"scene {self.scene} != classification {expected}")


@dataclass(frozen=True)
class PassageEvent:
    """A debounced run of same-class observations: one vessel/barge transit."""

    camera_id: str
    scene: SceneClass
    start: datetime
    end: datetime
    frame_count: int
    peak_confidence: float

    def __post_init__(self) -> None:
        if self.scene == SceneClass.A:
            raise ValueError("passage events never carry the empty scene")
        if self.start > self.end:
            raise ValueError("event start after end")
        if self.frame_count < 1:
            raise ValueError("event needs at least one frame")

    def to_json_line(self) -> str:
        return json.dumps(
            {
                "camera_id": self.camera_id,
                "scene": self.scene.value,
                "start": self.start.isoformat(),
                "end": self.end.isoformat(),
                "frame_count": self.frame_count,
                "peak_confidence": self.peak_confidence,
            }
        )

    @classmethod
    def from_json(cls, obj: dict) -> "PassageEvent":
        return cls(
            camera_id=obj["camera_id"],
            scene=SceneClass(obj["scene"]),
            start=datetime.fromisoformat(obj["start"]),
            end=datetime.fromisoformat(obj["end"]),
            frame_count=int(obj["frame_count"]),
            peak_confidence=float(obj["peak_confidence"]),
        )


@dataclass(frozen=True)
class DailyAggregate:
    camera_id: str
    date: date_type
    vessel_count: int
    with_barge_count: int
    pct_with_barges: float | None  # None when no vessels were seen
    barge_only_count: int

    def to_dict(self) -> dict:
        return {
            "camera_id": self.camera_id,
            "date": self.date.isoformat(),
            "vessel_count": self.vessel_count,
            "with_barge_count": self.with_barge_count,
            "pct_with_barges": self.pct_with_barges,
            "barge_only_count": self.barge_only_count,
        }


class EventAssembler:
    """Incremental debouncer turning observations into passage events.

    A maximal run of one non-A scene class becomes an event once its
    same-class frame count reaches ``min_consecutive``; up to
    ``gap_tolerance`` interrupting frames (class A or a different class)
    are bridged without extending the event boundaries. Interrupting
    frames that close a run are replayed so they can start the next one.
    """

    def __init__(self, min_consecutive: int = 2, gap_tolerance: int = 1):
        if min_consecutive < 1:
            raise ValueError("min_consecutive must be >= 1")
        if gap_tolerance < 0:
            raise ValueError("gap_tolerance must be >= 0")
        self.min_consecutive = min_consecutive
        self.gap_tolerance = gap_tolerance
        self._run: list[FrameObservation] = []  # same-class frames only
        self._gap: list[FrameObservation] = []
        self._last_timestamp: datetime | None = None

    def feed(self, obs: FrameObservation) -> list[PassageEvent]:
        if self._last_timestamp is not None and obs.timestamp < self._last_timestamp:
            raise ValueError(
                f"observations out of order: {obs.timestamp} after {self._last_timestamp}"
            )
        self._last_timestamp = obs.timestamp
        return self._feed(obs)

    def _feed(self, obs: FrameObservation) -> list[PassageEvent]:
        if not self._run:
            if obs.scene != SceneClass.A:
                self._run = [obs]
            return []
        if obs.scene == self._run[0].scene:
            self._run.append(obs)
            self._gap = []
            return []
        if len(self._gap) < self.gap_tolerance:
            self._gap.append(obs)
            return []
        # Gap exceeded: close the run, then replay the gap frames and the
        # current frame so a different class can start its own run.
        events = self._close()
        replay, self._gap = self._gap, []
        for frame in replay + [obs]:
            events.extend(self._feed(frame))
        return events

    def _close(self) -> list[PassageEvent]:
        run, self._run = self._run, []
        if len(run) < self.min_consecutive:
            return []
        peak = max(
            (d.confidence for obs in run for d in obs.detections), default=0.0
        )
        return [
            PassageEvent(
                camera_id=run[0].camera_id,
                scene=run[0].scene,
                start=run[0].timestamp,
                end=run[-1].timestamp,
                frame_count=len(run),
                peak_confidence=peak,
            )
        ]

    def finish(self) -> list[PassageEvent]:
        """Flush the active run (end of stream)."""
        events = self._close()
        self._gap = []
        return events


def extract_events(
    observations: Iterable[FrameObservation],
    min_consecutive: int = 2,
    gap_tolerance: int = 1,
) -> list[PassageEvent]:
    """Batch form of the debouncer: feed everything, then flush."""
    assembler = EventAssembler(min_consecutive, gap_tolerance)
    events: list[PassageEvent] = []
    for obs in observations:
        events.extend(assembler.feed(obs))
    events.extend(assembler.finish())
    return events


def aggregate_daily(
    events: Iterable[PassageEvent], date: date_type, camera_id: str
) -> DailyAggregate:
    """Traffic counts for one camera-day.

    An event belongs to the UTC date of its start timestamp. Scenes B, C,
    D and F count as vessels (F saw a towing vessel but confirmed no
    barge); C and D as vessels with barges; E as barge-only movements.
    """
    selected = [
        e
        for e in events
        if e.camera_id == camera_id and e.start.astimezone(timezone.utc).date() == date
    ]
    vessel_count = sum(1 for e in selected if e.scene in VESSEL_SCENES)
    with_barge = sum(1 for e in selected if e.scene in WITH_BARGE_SCENES)
    barge_only = sum(1 for e in selected if e.scene == SceneClass.E)
    return DailyAggregate(
        camera_id=camera_id,
        date=date,
        vessel_count=vessel_count,
        with_barge_count=with_barge,
        pct_with_barges=(with_barge / vessel_count) if vessel_count else None,
        barge_only_count=barge_only,
    )


class EventLog:
    """Append-only newline-delimited event records, one file per camera-day.

    A crash can only truncate the final line; readers drop an unparseable
    trailing partial and treat malformed interior lines as corruption.
    """

    def __init__(self, log_dir: str | Path, fsync: bool = False):
        self.log_dir = Path(log_dir)
        self.fsync = fsync

    def _day_file(self, camera_id: str, day: date_type) -> Path:
        return self.log_dir / camera_id / f"{day.isoformat()}.jsonl"

    def append(self, event: PassageEvent) -> None:
        day = event.start.astimezone(timezone.utc).date()
        path = self._day_file(event.camera_id, day)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "a") as fh:
            fh.write(event.to_json_line() + "\n")
            fh.flush()
            if self.fsync:
                import os

                os.fsync(fh.fileno())

    def read_day(self, camera_id: str, day: date_type) -> list[PassageEvent]:
        path = self._day_file(camera_id, day)
        if not path.exists():
            return []
        return self._parse(path)

    def read_range(
        self,
        camera_id: str,
        start: datetime | None = None,
        end: datetime | None = None,
    ) -> list[PassageEvent]:
        camera_dir = self.log_dir / camera_id
        if not camera_dir.exists():
            return []
        events: list[PassageEvent] = []
        for path in sorted(camera_dir.glob("*.jsonl")):
            events.extend(self._parse(path))
        if start is not None:
            events = [e for e in events if e.start >= start]
        if end is not None:
            events = [e for e in events if e.start <= end]
        return events

    def cameras(self) -> list[str]:
        if not self.log_dir.exists():
            return []
        return sorted(p.name for p in self.log_dir.iterdir() if p.is_dir())

    @staticmethod
    def _parse(path: Path) -> list[PassageEvent]:
        events = []
        lines = path.read_text().splitlines()
        for i, line in enumerate(lines):
            if not line.strip():
                continue
            try:
                events.append(PassageEvent.from_json(json.loads(line)))
            except (json.JSONDecodeError, KeyError, ValueError) as exc:
                if i == len(lines) - 1:
                    logger.warning("%s: dropping partial trailing record", path)
                    continue
                raise EventLogError(f"{path}:{i + 1}: corrupt record: {exc}") from exc
        return events


def iter_directory_frames(
    camera: CameraSource,
) -> Iterator[tuple[datetime, np.ndarray, str]]:
    """Replay an image directory in lexicographic order.

    Timestamps are synthetic (epoch + i * poll_interval) so replays are
    reproducible run to run.
    """
    from PIL import Image

    paths = sorted(
        p for p in Path(camera.source).iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    for i, path in enumerate(paths):
        timestamp = REPLAY_EPOCH + timedelta(seconds=i * camera.poll_interval_seconds)
        frame = np.asarray(Image.open(path).convert("RGB"))
        yield timestamp, frame, path.stem


def iter_video_frames(camera: CameraSource) -> Iterator[tuple[datetime, np.ndarray, str]]:
    """Sample a video file at the poll interval.

    Frames come from indices ``round(k * interval * fps)`` for k = 0, 1,
    ...; sampling stops at the first index past the final frame, so the
    end boundary is exclusive. Timestamps are synthetic like directory
    replay.
    """
    import cv2

    capture = cv2.VideoCapture(camera.source)
    if not capture.isOpened():
        raise OSError(f"cannot open video source {camera.source}")
    try:
        fps = capture.get(cv2.CAP_PROP_FPS) or 30.0
        frame_count = int(capture.get(cv2.CAP_PROP_FRAME_COUNT))
        k = 0
        while True:
            index = round(k * camera.poll_interval_seconds * fps)
            if index >= frame_count:
                break
            capture.set(cv2.CAP_PROP_POS_FRAMES, index)
            ok, frame_bgr = capture.read()
            if not ok:
                break
            timestamp = REPLAY_EPOCH + timedelta(seconds=k * camera.poll_interval_seconds)
            yield timestamp, frame_bgr[:, :, ::-1].copy(), f"frame-{index:06d}"
            k += 1
    finally:
        capture.release()


def iter_snapshot_frames(
    camera: CameraSource,
    fetch: Callable[[str], bytes] | None = None,
    max_retries: int = 5,
    sleep: Callable[[float], None] = time.sleep,
    clock: Callable[[], datetime] | None = None,
    max_frames: int | None = None,
) -> Iterator[tuple[datetime, np.ndarray, str]]:
    """Poll a snapshot URL at the poll interval with exponential backoff.

    Transient failures are retried and logged; after ``max_retries``
    consecutive failures the stream ends (the camera is marked degraded
    by the caller). ``fetch`` and ``clock`` are injectable for tests.
    """
    import io

    from PIL import Image

    if fetch is None:
        import requests

        def fetch(url: str) -> bytes:
            response = requests.get(url, timeout=10)
            response.raise_for_status()
            return response.content

    if clock is None:
        clock = lambda: datetime.now(timezone.utc)  # noqa: E731

    emitted = 0
    failures = 0
    while max_frames is None or emitted < max_frames:
        try:
            payload = fetch(camera.source)
            frame = np.asarray(Image.open(io.BytesIO(payload)).convert("RGB"))
        except Exception as exc:
            failures += 1
            if failures > max_retries:
                logger.error(
                    "camera %s degraded after %d failed fetches: %s",
                    camera.id, failures - 1, exc,
                )
                return
            backoff = min(camera.poll_interval_seconds * 2 ** (failures - 1), 300.0)
            logger.warning(
                "camera %s fetch failed (attempt %d): %s; retrying in %.1fs",
                camera.id, failures, exc, backoff,
            )
            sleep(backoff)
            continue
        failures = 0
        timestamp = clock()
        yield timestamp, frame, timestamp.strftime("%Y%m%dT%H%M%S.%f")
        emitted += 1
        if max_frames is None or emitted < max_frames:
            sleep(camera.poll_interval_seconds)


def sample(camera: CameraSource, **kwargs) -> Iterator[tuple[datetime, np.ndarray, str]]:
    """Frame stream for a camera source, dispatched on the source kind."""
    kind = camera.kind
    if kind == "directory":
        return iter_directory_frames(camera)
    if kind == "video":
        return iter_video_frames(camera)
    return iter_snapshot_frames(camera, **kwargs)


@dataclass
class CameraStatus:
    """Mutable per-camera view published to the HTTP read model."""

    camera_id: str
    degraded: bool = False
    frames_seen: int = 0
    last_observation: FrameObservation | None = None
    errors: int = 0


def run_camera(
    camera: CameraSource,
    backend,
    event_log: EventLog,
    status: CameraStatus | None = None,
    min_consecutive: int = 2,
    gap_tolerance: int = 1,
    max_frames: int | None = None,
    sample_kwargs: dict | None = None,
) -> list[PassageEvent]:
    """Run one camera's pipeline to stream exhaustion (or ``max_frames``).

    Per-frame inference failures are logged and the frame skipped; the
    pipeline itself keeps going. Returns the events it appended.
    """
    status = status or CameraStatus(camera_id=camera.id)
    assembler = EventAssembler(min_consecutive, gap_tolerance)
    emitted: list[PassageEvent] = []

    def commit(events: list[PassageEvent]) -> None:
        for event in events:
            event_log.append(event)
            emitted.append(event)

    stream = sample(camera, **(sample_kwargs or {}))
    for i, (timestamp, frame, frame_id) in enumerate(stream):
        if max_frames is not None and i >= max_frames:
            break
        try:
            detections = backend.detect(frame, frame_id)
        except Exception as exc:
            status.errors += 1
            logger.error("camera %s frame %s inference failed: %s", camera.id, frame_id, exc)
            continue
        obs = FrameObservation(
            camera_id=camera.id,
            timestamp=timestamp,
            scene=classify_scene(d.label for d in detections),
            detections=tuple(detections),
        )
        status.frames_seen += 1
        status.last_observation = obs
        commit(assembler.feed(obs))
    commit(assembler.finish())
    return emitted
