import json
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from bargewatch.cli import main
from bargewatch.dataset import (
    DatasetManifest,
    ImageRecord,
    load_split,
    save_manifest,
)
from bargewatch.fixtures import table1_manifest

REPO_ROOT = Path(__file__).resolve().parents[1]
REFERENCE_PAIRS = REPO_ROOT / "fixtures" / "reference_pairs.jsonl"


class TestEvaluate:
    def test_reference_pairs_table(self, capsys):
        code = main(
            [
                "evaluate",
                "--gt", str(REFERENCE_PAIRS),
                "--pred", str(REFERENCE_PAIRS),
                "--format", "table",
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert "macro-F1 95.5%" in out

    def test_reference_pairs_json_with_fps(self, capsys):
        code = main(
            [
                "evaluate",
                "--gt", str(REFERENCE_PAIRS),
                "--pred", str(REFERENCE_PAIRS),
                "--format", "json",
                "--fps-frames", "116",
                "--fps-seconds", "3.41",
            ]
        )
        assert code == 0
        data = json.loads(capsys.readouterr().out)
        assert data["macro_f1"] == pytest.approx(0.955, abs=1e-3)
        assert data["fps"] == pytest.approx(34.0, abs=0.1)

    def test_missing_prediction_is_validation_error(self, tmp_path, capsys):
        gt = tmp_path / "gt.jsonl"
        pred = tmp_path / "pred.jsonl"
        gt.write_text('{"id": "x", "scene": "A"}\n{"id": "y", "scene": "B"}\n')
        pred.write_text('{"id": "x", "scene": "A"}\n')
        code = main(["evaluate", "--gt", str(gt), "--pred", str(pred)])
        assert code == 1
        assert "lack scenes" in capsys.readouterr().err


class TestSplit:
    def test_deterministic_outputs(self, tmp_path):
        manifest_path = tmp_path / "manifest.jsonl"
        save_manifest(table1_manifest(), manifest_path)
        for name in ("a", "b"):
            code = main(
                [
                    "split",
                    "--manifest", str(manifest_path),
                    "--out", str(tmp_path / name),
                    "--seed", "7",
                ]
            )
            assert code == 0
        for part in ("train", "val", "test"):
            assert (tmp_path / "a" / f"{part}.txt").read_bytes() == (
                tmp_path / "b" / f"{part}.txt"
            ).read_bytes()
        split = load_split(tmp_path / "a")
        assert sum(split.sizes()) == 331

    def test_bad_ratios(self, tmp_path, capsys):
        manifest_path = tmp_path / "manifest.jsonl"
        save_manifest(table1_manifest(), manifest_path)
        code = main(
            ["split", "--manifest", str(manifest_path), "--out", str(tmp_path / "s"),
             "--ratios", "0.9,0.2,0.2"]
        )
        assert code == 1


class TestUsageErrors:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 1

    def test_unknown_flag(self, capsys):
        assert main(["version", "--frobnicate"]) == 1

    def test_version(self, capsys):
        assert main(["version"]) == 0
        assert capsys.readouterr().out.strip()


class TestDetectAndClassify:
    def _frames(self, tmp_path, n=3):
        frames = tmp_path / "frames"
        frames.mkdir()
        for i in range(n):
            arr = np.full((24, 32, 3), 100 + i, dtype=np.uint8)
            Image.fromarray(arr).save(frames / f"img-{i}.png")
        return frames

    def test_stub_detect_then_classify(self, tmp_path, capsys):
        frames = self._frames(tmp_path)
        stub = tmp_path / "stub.jsonl"
        stub.write_text(
            json.dumps(
                {
                    "image_id": "img-0",
                    "detections": [
                        {"label": "vessel_with_barge", "box": [0.1, 0.1, 0.4, 0.4],
                         "confidence": 0.9},
                        {"label": "barge", "box": [0.5, 0.5, 0.9, 0.9],
                         "confidence": 0.8},
                    ],
                }
            )
            + "\n"
            + json.dumps({"image_id": "img-1", "detections": []})
            + "\n"
        )
        preds = tmp_path / "preds.jsonl"
        code = main(
            ["detect", "--stub", str(stub), "--images", str(frames), "--out", str(preds)]
        )
        assert code == 0
        lines = [json.loads(l) for l in preds.read_text().splitlines()]
        assert {l["image_id"] for l in lines} == {"img-0", "img-1", "img-2"}
        by_id = {l["image_id"]: l for l in lines}
        assert len(by_id["img-0"]["detections"]) == 2
        assert by_id["img-1"]["detections"] == []

        code = main(["classify", "--pred", str(preds)])
        assert code == 0
        scenes = {
            json.loads(l)["id"]: json.loads(l)["scene"]
            for l in capsys.readouterr().out.strip().splitlines()
        }
        assert scenes == {"img-0": "D", "img-1": "A", "img-2": "A"}


class TestBgsubCommand:
    def test_runs_over_directory(self, tmp_path):
        frames = tmp_path / "frames"
        frames.mkdir()
        rng = np.random.default_rng(0)
        for i in range(3):
            Image.fromarray(
                rng.integers(0, 255, (16, 16, 3), dtype=np.uint8)
            ).save(frames / f"f{i}.png")
        code = main(
            ["bgsub", "--input", str(frames), "--out", str(tmp_path / "out"),
             "--emit", "masks"]
        )
        assert code == 0
        assert len(list((tmp_path / "out" / "masks").iterdir())) == 3


class TestMonitorCommand:
    def test_replay_writes_event_log(self, tmp_path):
        frames = tmp_path / "frames"
        frames.mkdir()
        for i in range(6):
            Image.fromarray(
                np.full((16, 16, 3), 50, dtype=np.uint8)
            ).save(frames / f"frame-{i:03d}.png")
        # Stub: frames 1-3 show a towing vessel + barge, rest empty.
        stub_lines = []
        for i in range(6):
            dets = (
                [
                    {"label": "vessel_with_barge", "box": [0.1, 0.1, 0.4, 0.4],
                     "confidence": 0.9},
                    {"label": "barge", "box": [0.5, 0.5, 0.9, 0.9], "confidence": 0.85},
                ]
                if 1 <= i <= 3
                else []
            )
            stub_lines.append(json.dumps({"image_id": f"frame-{i:03d}", "detections": dets}))
        stub = tmp_path / "stub.jsonl"
        stub.write_text("\n".join(stub_lines) + "\n")
        config = tmp_path / "config.yaml"
        config.write_text(
            f"""
cameras:
  - id: cam1
    source: {frames}
    poll_interval_seconds: 5
detector:
  stub_fixture: {stub}
monitor:
  min_consecutive: 2
  gap_tolerance: 1
log_dir: {tmp_path / "logs"}
"""
        )
        code = main(["monitor", "--config", str(config)])
        assert code == 0
        log_file = tmp_path / "logs" / "cam1" / "1970-01-01.jsonl"
        events = [json.loads(l) for l in log_file.read_text().splitlines()]
        assert len(events) == 1
        assert events[0]["scene"] == "D"
        assert events[0]["frame_count"] == 3
