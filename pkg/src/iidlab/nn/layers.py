"""Layers and the toy encoder-decoder used by every pipeline stage."""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor

ACTIVATIONS = {"relu": T.relu, "silu": T.silu}


class Module:
    def parameters(self) -> dict[str, Tensor]:
        params = {}
        for attr, value in vars(self).items():
            if isinstance(value, Tensor) and value.requires_grad:
                params[attr] = value
            elif isinstance(value, Module):
                for k, v in value.parameters().items():
                    params[f"{attr}.{k}"] = v
            elif isinstance(value, list):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        for k, v in item.parameters().items():
                            params[f"{attr}.{i}.{k}"] = v
        return params

    def n_params(self) -> int:
        return int(sum(p.data.size for p in self.parameters().values()))

    def zero_grad(self):
        for p in self.parameters().values():
            p.zero_grad()

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.parameters().items()}

    def load_state_dict(self, state):
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))
            extra = sorted(set(state) - set(params))
            raise KeyError(f"state mismatch: missing {missing}, unexpected {extra}")
        for k, p in params.items():
            if p.data.shape != state[k].shape:
                raise ValueError(f"{k}: shape {state[k].shape} != {p.data.shape}")
            p.data = np.array(state[k], dtype=p.data.dtype)

    def __call__(self, x):
        return self.forward(x)


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size=3, rng=None, dtype=T.DEFAULT_DTYPE):
        rng = np.random.default_rng(rng)
        fan_in = in_channels * kernel_size * kernel_size
        w = rng.normal(0, np.sqrt(2.0 / fan_in), (out_channels, in_channels, kernel_size, kernel_size))
        self.weight = Tensor(w, requires_grad=True, dtype=dtype)
        self.bias = Tensor(np.zeros(out_channels), requires_grad=True, dtype=dtype)

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias)


class ConvBlock(Module):
    """3x3 convolution followed by a pointwise nonlinearity."""

    def __init__(self, in_channels, out_channels, activation="silu", rng=None, dtype=T.DEFAULT_DTYPE):
        self.conv = Conv2d(in_channels, out_channels, 3, rng, dtype)
        self.activation = activation

    def forward(self, x):
        return ACTIVATIONS[self.activation](self.conv(x))


class EncoderDecoder(Module):
    """U-shaped network: conv blocks and 2x average pooling on the way down,
    bilinear 2x upsampling with skip concatenation on the way up, and a
    sigmoid head.

    ``out_level`` selects the output resolution: the head sits on the decoder
    level with spatial size ``input / 2**out_level``.
    """

    def __init__(self, in_channels, out_channels, widths=(16, 32, 64), out_level=0,
                 activation="silu", seed=0, dtype=T.DEFAULT_DTYPE):
        if not 0 <= out_level < len(widths):
            raise ValueError(f"out_level {out_level} outside 0..{len(widths) - 1}")
        rng = np.random.default_rng(seed)
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.widths = tuple(widths)
        self.out_level = out_level
        prev = in_channels
        self.encoder = []
        for w in widths:
            self.encoder.append(ConvBlock(prev, w, activation, rng, dtype))
            prev = w
        self.decoder = []
        for level in range(len(widths) - 2, out_level - 1, -1):
            self.decoder.append(ConvBlock(widths[level + 1] + widths[level], widths[level],
                                          activation, rng, dtype))
        self.head = Conv2d(widths[out_level], out_channels, 3, rng, dtype)
        self.head.weight.data *= 0.1

    @property
    def downscale(self) -> int:
        return 2**self.out_level

    def forward(self, x):
        x = T.as_tensor(x)
        factor = 2 ** (len(self.widths) - 1)
        if x.shape[-1] % factor or x.shape[-2] % factor:
            raise ValueError(f"spatial size {x.shape[-2:]} must be divisible by {factor}")
        skips = []
        for i, block in enumerate(self.encoder):
            if i:
                x = T.avg_pool2d(x, 2)
            x = block(x)
            skips.append(x)
        for block, level in zip(self.decoder, range(len(self.widths) - 2, -1, -1)):
            x = T.concat([T.upsample_bilinear(x), skips[level]], axis=1)
            x = block(x)
        return T.sigmoid(self.head(x))
