"""Trainkit acceptance: smoke train-and-export with serving-side parity.

Prints ``[ACCEPTANCE] <name>: PASS/FAIL`` lines like the serving
package's suite. The smoke path must finish well inside 10 minutes on CPU.
"""

import time
from contextlib import contextmanager

import pytest

from trainkit.config import ConfigRangeError, TrainingConfig
from trainkit.data import read_manifest, read_split_ids
from trainkit.export import bundles_identical, export
from trainkit.train import train
from trainkit.verify import verify_export


@contextmanager
def criterion(name):
    try:
        yield
    except BaseException:
        print(f"\n[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"\n[ACCEPTANCE] {name}: PASS")


@pytest.fixture(scope="module")
def smoke_run(smoke_dataset, tmp_path_factory):
    work = tmp_path_factory.mktemp("smoke-run")
    config = TrainingConfig(epochs=2, batch_size=4, image_size=320, seed=7)
    samples = read_manifest(smoke_dataset / "manifest.jsonl", smoke_dataset / "labels")
    train_ids = read_split_ids(smoke_dataset / "splits", "train")
    val_ids = read_split_ids(smoke_dataset / "splits", "val")
    weights = work / "weights.pt"
    report = train(
        config,
        [s for s in samples if s.id in train_ids],
        [s for s in samples if s.id in val_ids],
        weights_out=weights,
    )
    bundle = work / "model.npz"
    export(weights, bundle, config.image_size, config.channels)
    return work, config, samples, weights, bundle, report


def test_smoke_train_export_and_parity(smoke_run):
    with criterion("smoke train (12 images, 2 epochs) -> export -> parity PASS"):
        started = time.perf_counter()
        work, config, samples, weights, bundle, report = smoke_run
        assert len(report.rows) == 2
        assert weights.exists() and bundle.exists()

        # Threshold below the untrained score floor (~0.01) keeps candidates
        # flowing through both pipelines, so parity is non-vacuous even on a
        # barely-trained model.
        verify_config = TrainingConfig(
            epochs=2, batch_size=4, image_size=320, seed=7, confidence_threshold=0.001
        )
        parity = verify_export(
            weights, bundle, samples[:5], verify_config, work_dir=work / "verify"
        )
        print(parity.to_json())
        assert parity.matched > 0, "parity check was vacuous (no boxes matched)"
        assert parity.passed
        assert parity.min_iou is not None and parity.min_iou >= 0.9
        assert parity.max_confidence_delta is not None
        assert parity.max_confidence_delta <= 0.05
        assert time.perf_counter() - started < 600


def test_truncated_export_fails_with_mismatches(smoke_run, tmp_path):
    with criterion("deliberately truncated export -> FAIL with mismatch listing"):
        work, config, samples, weights, bundle, _ = smoke_run
        import numpy as np

        with np.load(bundle, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
        del arrays["head.bias"]  # truncate the bundle
        broken = tmp_path / "broken.npz"
        np.savez(broken, **arrays)
        parity = verify_export(
            weights, broken, samples[:2], config, work_dir=tmp_path / "verify"
        )
        assert not parity.passed
        assert parity.mismatches


def test_export_is_deterministic(smoke_run, tmp_path):
    with criterion("export twice from same weights -> content-identical bundles"):
        _, config, _, weights, bundle, _ = smoke_run
        again = tmp_path / "again.npz"
        export(weights, again, config.image_size, config.channels)
        assert bundles_identical(bundle, again)


def test_table_ranges_rejected_by_field(smoke_dataset):
    with criterion("hyperparameter range validation names the offending field"):
        for overrides, bad_field in [
            ({"batch_size": 64}, "batch_size"),
            ({"image_size": 999}, "image_size"),
            ({"optimizer": "Adagrad"}, "optimizer"),
            ({"momentum": 1.5}, "momentum"),
            ({"weight_decay": 0.1}, "weight_decay"),
            ({"iou": 0.95}, "iou"),
            ({"lr0": 1.0}, "lr0"),
            ({"epochs": 9999}, "epochs"),
        ]:
            with pytest.raises(ConfigRangeError) as excinfo:
                TrainingConfig(**overrides)
            assert excinfo.value.field == bad_field
