"""The trainable detector matching the serving bundle contract.

Backbone: 3x3 stride-2 pad-1 convolutions with ReLU (one per channel
entry, so stride = 2 ** len(channels)); head: 1x1 convolution to
(tx, ty, tw, th, obj, cls_1..cls_C) per cell. Decoding mirrors the bundle
documentation exactly so native and exported inference agree.
"""

from __future__ import annotations

import torch
from torch import nn

STRIDE_BLOCKS = 4  # 2**4 = 16, the documented bundle stride
LOG_SIZE_CLAMP = 8.0
NUM_CLASSES = 3


class GridDetector(nn.Module):
    def __init__(self, channels: tuple[int, ...] = (8, 16, 32, 32), num_classes: int = NUM_CLASSES):
        super().__init__()
        if len(channels) != STRIDE_BLOCKS:
            raise ValueError(f"need {STRIDE_BLOCKS} backbone blocks, got {len(channels)}")
        self.channels = tuple(channels)
        self.num_classes = num_classes
        widths = (3,) + self.channels
        self.blocks = nn.ModuleList(
            nn.Conv2d(widths[i], widths[i + 1], 3, stride=2, padding=1)
            for i in range(len(self.channels))
        )
        self.head = nn.Conv2d(self.channels[-1], 5 + num_classes, 1)

    @property
    def stride(self) -> int:
        return 2 ** len(self.channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Raw head output (N, 5+C, G, G)."""
        for block in self.blocks:
            x = torch.relu(block(x))
        return self.head(x)

    def candidates(self, x: torch.Tensor) -> torch.Tensor:
        """Decoded candidates (N, G*G, 4+C): cxcywh in input pixels + scores."""
        y = self.forward(x)
        n, depth, gh, gw = y.shape
        stride = self.stride
        jj = torch.arange(gw, device=y.device).view(1, 1, gw)
        ii = torch.arange(gh, device=y.device).view(1, gh, 1)
        cx = (jj + torch.sigmoid(y[:, 0])) * stride
        cy = (ii + torch.sigmoid(y[:, 1])) * stride
        w = torch.exp(torch.clamp(y[:, 2], -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP)) * stride
        h = torch.exp(torch.clamp(y[:, 3], -LOG_SIZE_CLAMP, LOG_SIZE_CLAMP)) * stride
        obj = torch.sigmoid(y[:, 4])
        scores = torch.sigmoid(y[:, 5:]) * obj.unsqueeze(1)
        stacked = torch.cat(
            [cx.unsqueeze(1), cy.unsqueeze(1), w.unsqueeze(1), h.unsqueeze(1), scores],
            dim=1,
        )
        return stacked.reshape(n, 4 + self.num_classes, gh * gw).transpose(1, 2)


def base_weights(
    channels: tuple[int, ...] = (8, 16, 32, 32),
    num_classes: int = NUM_CLASSES,
    seed: int = 20240101,
) -> dict:
    """Deterministic starting checkpoint for fine-tuning.

    Stands in for a real pretrained backbone at smoke scale; a checkpoint
    from a previous run can be passed to train() instead. The objectness
    bias starts low so the untrained model is quiet rather than noisy.
    """
    generator = torch.Generator().manual_seed(seed)
    model = GridDetector(channels, num_classes)
    state = {}
    for name, tensor in model.state_dict().items():
        if tensor.ndim > 1:
            state[name] = torch.empty_like(tensor).normal_(0.0, 0.05, generator=generator)
        else:
            state[name] = torch.zeros_like(tensor)
    state["head.bias"][4] = -4.0
    return state
