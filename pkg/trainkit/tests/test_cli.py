import json

from trainkit.cli import main


class TestCli:
    def test_train_export_verify_round_trip(self, smoke_dataset, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text(
            json.dumps(
                {
                    "epochs": 2,
                    "batch_size": 4,
                    "image_size": 320,
                    "seed": 7,
                    "confidence_threshold": 0.001,
                }
            )
        )
        weights = tmp_path / "weights.pt"
        code = main(
            [
                "train",
                "--config", str(config_path),
                "--manifest", str(smoke_dataset / "manifest.jsonl"),
                "--labels-dir", str(smoke_dataset / "labels"),
                "--split-dir", str(smoke_dataset / "splits"),
                "--weights-out", str(weights),
            ]
        )
        assert code == 0
        assert weights.exists()
        report = json.loads(weights.with_suffix(".report.json").read_text())
        assert len(report["epochs"]) == 2

        bundle = tmp_path / "model.npz"
        assert main(
            ["export", "--config", str(config_path), "--weights", str(weights),
             "--out", str(bundle)]
        ) == 0
        assert bundle.exists()

        code = main(
            [
                "verify",
                "--config", str(config_path),
                "--weights", str(weights),
                "--bundle", str(bundle),
                "--manifest", str(smoke_dataset / "manifest.jsonl"),
                "--labels-dir", str(smoke_dataset / "labels"),
                "--limit", "2",
                "--work-dir", str(tmp_path / "verify"),
            ]
        )
        out = capsys.readouterr().out
        assert code == 0
        assert json.loads(out)["result"] == "PASS"

    def test_bad_config_names_field(self, tmp_path, capsys):
        config_path = tmp_path / "config.json"
        config_path.write_text(json.dumps({"batch_size": 64}))
        code = main(
            [
                "export",
                "--config", str(config_path),
                "--weights", str(tmp_path / "none.pt"),
                "--out", str(tmp_path / "m.npz"),
            ]
        )
        assert code == 1
        assert "batch_size" in capsys.readouterr().err

    def test_export_bad_size_rejected(self, smoke_dataset, tmp_path, capsys):
        code = main(
            ["export", "--weights", str(tmp_path / "missing.pt"),
             "--image-size", "999", "--out", str(tmp_path / "m.npz")]
        )
        assert code == 1

    def test_usage_error(self):
        assert main(["nonsense"]) == 1
