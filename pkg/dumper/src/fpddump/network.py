"""Stride-16 convolutional feature network with seeded weights.

A production dumper would load pretrained weights from disk; this package
ships none, so the network draws He-scaled weights from a seeded generator
instead. The descriptor names the seed and width, which is enough for the
compatibility digest to distinguish feature spaces.

The five-layer stack is built so the output grid is exactly
(H // 16, W // 16) for any input with both sides >= 16:

    conv1 4x4 stride 4    -> floor(n/4)
    conv2 3x3 stride 1 p1 -> unchanged
    conv3 2x2 stride 2    -> floor(n/2)
    conv4 3x3 stride 1 p1 -> unchanged
    conv5 2x2 stride 2    -> floor(n/2)

ReLU follows every layer except the last; the dump carries raw conv5 output.
"""
from __future__ import annotations

import math

import numpy as np
import torch

LAYER_NAME = "conv5"

# (in_channels, out_channels, kernel, stride, padding) per layer; the last
# out_channels is replaced by the configured width.
_CHAIN = (
    (3, 16, 4, 4, 0),
    (16, 16, 3, 1, 1),
    (16, 32, 2, 2, 0),
    (32, 32, 3, 1, 1),
    (32, -1, 2, 2, 0),
)


class PyramidNet:
    """Deterministic feature network: uint8 image in, float32 grid out."""

    stride = 16

    def __init__(self, seed: int = 0, channels: int = 256):
        if channels < 1:
            raise ValueError(f"channels must be >= 1, got {channels}")
        # Single-threaded conv keeps the float32 accumulation order, and with
        # it the output bytes, identical from run to run.
        torch.set_num_threads(1)
        self.seed = seed
        self.channels = channels
        gen = torch.Generator().manual_seed(seed)
        self._convs: list[torch.nn.Conv2d] = []
        for cin, cout, k, s, p in _CHAIN:
            if cout == -1:
                cout = channels
            conv = torch.nn.Conv2d(cin, cout, k, stride=s, padding=p, bias=True)
            fan_in = cin * k * k
            with torch.no_grad():
                conv.weight.copy_(
                    torch.randn(conv.weight.shape, generator=gen) * math.sqrt(2.0 / fan_in)
                )
                conv.bias.zero_()
            conv.eval()
            conv.requires_grad_(False)
            self._convs.append(conv)

    @property
    def descriptor(self) -> str:
        return f"seeded-pyrnet5:seed={self.seed},channels={self.channels}"

    def features(self, image: np.ndarray) -> np.ndarray:
        """conv5 features of an HxWx3 uint8 image: (channels, H//16, W//16).

        Inputs with a side below one stride produce an empty grid of the
        right shape instead of running the convolutions.
        """
        arr = np.asarray(image)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"expected an HxWx3 image, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
        h, w = arr.shape[:2]
        if h < self.stride or w < self.stride:
            return np.zeros((self.channels, h // self.stride, w // self.stride), np.float32)
        # Copy: PIL-backed arrays are read-only and torch wants writable memory.
        x = torch.from_numpy(np.array(arr, dtype=np.uint8))
        x = x.permute(2, 0, 1).unsqueeze(0).float().div_(255.0).sub_(0.5)
        with torch.no_grad():
            for i, conv in enumerate(self._convs):
                x = conv(x)
                if i < len(self._convs) - 1:
                    x = torch.relu(x)
        out = x.squeeze(0).numpy()
        return np.ascontiguousarray(out, dtype=np.float32)
