"""Fine-tuning loop with patience-based early stopping.

Targets are assigned per grid cell: the cell containing a box center
learns objectness 1, its class, the in-cell center offsets, and log
sizes; every other cell learns objectness 0. Validation runs full
inference each epoch and scores scene macro-F1, the metric that drives
early stopping and best-checkpoint selection.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import TrainingConfig
from .data import Sample, load_input
from .metrics import greedy_nms, scene_macro_f1, scene_of, should_stop
from .model import GridDetector, base_weights

logger = logging.getLogger(__name__)


@dataclass
class EpochRow:
    epoch: int
    loss: float
    val_macro_f1: float


@dataclass
class TrainingReport:
    rows: list[EpochRow] = field(default_factory=list)
    best_epoch: int = -1
    best_metric: float = -1.0
    stopped_early: bool = False

    def to_json(self) -> str:
        return json.dumps(
            {
                "best_epoch": self.best_epoch,
                "best_val_macro_f1": self.best_metric,
                "stopped_early": self.stopped_early,
                "epochs": [
                    {"epoch": r.epoch, "loss": r.loss, "val_macro_f1": r.val_macro_f1}
                    for r in self.rows
                ],
            },
            indent=2,
        )


def _targets(model: GridDetector, samples: list[Sample], image_size: int):
    """Input tensors plus per-cell training targets for each sample."""
    stride = model.stride
    grid = image_size // stride
    inputs, targets = [], []
    for sample in samples:
        tensor, scale, pad_x, pad_y, width, height = load_input(sample.path, image_size)
        obj = np.zeros((grid, grid), dtype=np.float32)
        cls = np.zeros((model.num_classes, grid, grid), dtype=np.float32)
        box = np.zeros((4, grid, grid), dtype=np.float32)
        for class_index, xc, yc, w, h in sample.boxes:
            cx = xc * width * scale + pad_x
            cy = yc * height * scale + pad_y
            j = min(int(cx / stride), grid - 1)
            i = min(int(cy / stride), grid - 1)
            obj[i, j] = 1.0
            cls[class_index, i, j] = 1.0
            box[0, i, j] = cx / stride - j  # in-cell offset, (0, 1)
            box[1, i, j] = cy / stride - i
            box[2, i, j] = math.log(max(w * width * scale, 1.0) / stride)
            box[3, i, j] = math.log(max(h * height * scale, 1.0) / stride)
        inputs.append(torch.from_numpy(tensor))
        targets.append(
            (torch.from_numpy(obj), torch.from_numpy(cls), torch.from_numpy(box))
        )
    return inputs, targets


def _loss(output: torch.Tensor, target) -> torch.Tensor:
    obj_t, cls_t, box_t = target
    bce = torch.nn.functional.binary_cross_entropy_with_logits
    obj_loss = bce(output[4], obj_t)
    positive = obj_t > 0.5
    if positive.any():
        cls_loss = bce(output[5:, positive], cls_t[:, positive])
        offset_loss = torch.nn.functional.mse_loss(
            torch.sigmoid(output[0:2, positive]), box_t[0:2, positive]
        )
        size_loss = torch.nn.functional.mse_loss(output[2:4, positive], box_t[2:4, positive])
        return obj_loss + cls_loss + offset_loss + size_loss
    return obj_loss


def _optimizer(model: torch.nn.Module, config: TrainingConfig) -> torch.optim.Optimizer:
    kind = config.optimizer
    if kind == "Adam":
        return torch.optim.Adam(model.parameters(), lr=config.lr0, weight_decay=config.weight_decay)
    if kind == "AdamW":
        return torch.optim.AdamW(model.parameters(), lr=config.lr0, weight_decay=config.weight_decay)
    if kind == "RMSProp":
        return torch.optim.RMSprop(
            model.parameters(), lr=config.lr0, momentum=config.momentum,
            weight_decay=config.weight_decay,
        )
    # SGD and plain Momentum both map to torch SGD with momentum
    return torch.optim.SGD(
        model.parameters(), lr=config.lr0, momentum=config.momentum,
        weight_decay=config.weight_decay,
    )


def infer(
    model: GridDetector,
    sample: Sample,
    image_size: int,
    confidence_threshold: float,
    nms_iou: float,
) -> list[dict]:
    """Native detections for one image: normalized boxes, class, confidence."""
    tensor, scale, pad_x, pad_y, width, height = load_input(sample.path, image_size)
    with torch.no_grad():
        candidates = model.candidates(torch.from_numpy(tensor)[None])[0].numpy()
    dets = []
    for row in candidates:
        scores = row[4:]
        best = int(np.argmax(scores))
        confidence = float(scores[best])
        if confidence < confidence_threshold:
            continue
        x1 = float(row[0] - row[2] / 2 - pad_x) / scale
        y1 = float(row[1] - row[3] / 2 - pad_y) / scale
        x2 = float(row[0] + row[2] / 2 - pad_x) / scale
        y2 = float(row[1] + row[3] / 2 - pad_y) / scale
        x1, x2 = max(0.0, min(x1, width)), max(0.0, min(x2, width))
        y1, y2 = max(0.0, min(y1, height)), max(0.0, min(y2, height))
        if x1 >= x2 or y1 >= y2:
            continue
        dets.append(
            {
                "class": best,
                "confidence": confidence,
                "box": (x1 / width, y1 / height, x2 / width, y2 / height),
            }
        )
    return greedy_nms(dets, nms_iou)


def validation_macro_f1(model, samples, config) -> float:
    pairs = []
    for sample in samples:
        observed = scene_of({row[0] for row in sample.boxes})
        dets = infer(model, sample, config.image_size, config.confidence_threshold, config.iou)
        predicted = scene_of({d["class"] for d in dets})
        pairs.append((observed, predicted))
    return scene_macro_f1(pairs)


def train(
    config: TrainingConfig,
    train_samples: list[Sample],
    val_samples: list[Sample],
    weights_out: str | Path,
    base_checkpoint: str | Path | None = None,
) -> TrainingReport:
    """Fine-tune from base weights; keep the best-validation checkpoint.

    Stops once validation scene macro-F1 has not improved for
    ``config.patience`` epochs. Raises on an empty training set and
    aborts on non-finite loss.
    """
    if not train_samples:
        raise ValueError("training split is empty")
    torch.manual_seed(config.seed)
    model = GridDetector(config.channels)
    if base_checkpoint is not None:
        model.load_state_dict(torch.load(base_checkpoint, weights_only=True))
    else:
        model.load_state_dict(base_weights(config.channels))

    inputs, targets = _targets(model, train_samples, config.image_size)
    optimizer = _optimizer(model, config)
    report = TrainingReport()
    history: list[float] = []
    best_state = None

    order = list(range(len(inputs)))
    generator = torch.Generator().manual_seed(config.seed)
    for epoch in range(1, config.epochs + 1):
        model.train()
        order = torch.randperm(len(inputs), generator=generator).tolist()
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            optimizer.zero_grad()
            x = torch.stack([inputs[i] for i in batch])
            outputs = model.forward(x)
            loss = torch.stack(
                [_loss(outputs[k], targets[i]) for k, i in enumerate(batch)]
            ).mean()
            if not torch.isfinite(loss):
                raise RuntimeError(
                    f"training diverged at epoch {epoch}: non-finite loss {loss.item()!r}"
                )
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.item()) * len(batch)
        epoch_loss /= len(order)

        model.eval()
        metric = validation_macro_f1(model, val_samples, config) if val_samples else 0.0
        history.append(metric)
        report.rows.append(EpochRow(epoch=epoch, loss=epoch_loss, val_macro_f1=metric))
        if metric > report.best_metric:
            report.best_metric = metric
            report.best_epoch = epoch
            best_state = {k: v.clone() for k, v in model.state_dict().items()}
        logger.info("epoch %d loss %.4f val macro-F1 %.4f", epoch, epoch_loss, metric)
        if should_stop(history, config.patience):
            report.stopped_early = True
            logger.info("early stop: no improvement for %d epoch(s)", config.patience)
            break

    torch.save(best_state if best_state is not None else model.state_dict(), weights_out)
    return report
