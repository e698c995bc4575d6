"""Composable network blocks: conv-bn-act, CSP bottleneck, SPPF,
coordinate attention, weighted bidirectional fusion, detection head."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor


class Module:
    """Minimal module tree: child discovery via attribute order."""

    def __init__(self):
        self.training = True

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def _children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if isinstance(val, Parameter):
                yield (f"{prefix}{key}", val)
        for key, child in self._children():
            yield from child.named_parameters(prefix=f"{prefix}{key}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        """Non-trainable state (batchnorm running statistics)."""
        for key, val in vars(self).items():
            if isinstance(val, np.ndarray):
                yield (f"{prefix}{key}", val)
        for key, child in self._children():
            yield from child.named_buffers(prefix=f"{prefix}{key}.")

    def train(self) -> "Module":
        self.training = True
        for _, child in self._children():
            child.train()
        return self

    def eval(self) -> "Module":
        self.training = False
        for _, child in self._children():
            child.eval()
        return self


def _he_normal(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    std = math.sqrt(2.0 / fan_in)
    return (rng.standard_normal(shape) * std).astype(dtype)


class Conv(Module):
    """Bare convolution with optional bias."""

    def __init__(self, c_in: int, c_out: int, k: int = 1, stride: int = 1,
                 pad: int | None = None, bias: bool = True, *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.weight = Parameter(Tensor(_he_normal(rng, (c_out, c_in, k, k), c_in * k * k, dtype)))
        self.bias = Parameter(Tensor(np.zeros((1, c_out, 1, 1), dtype=dtype))) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        b = self.bias.tensor if self.bias is not None else None
        return ad.conv2d(x, self.weight.tensor, b, stride=self.stride, pad=self.pad)


class BatchNorm(Module):
    def __init__(self, c: int, *, dtype=np.float32, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Parameter(Tensor(np.ones((1, c, 1, 1), dtype=dtype)))
        self.beta = Parameter(Tensor(np.zeros((1, c, 1, 1), dtype=dtype)))
        self.running_mean = np.zeros(c, dtype=np.float64)
        self.running_var = np.ones(c, dtype=np.float64)

    def forward(self, x: Tensor) -> Tensor:
        return ad.batchnorm(x, self.gamma.tensor, self.beta.tensor,
                            self.running_mean, self.running_var,
                            training=self.training, momentum=self.momentum, eps=self.eps)


_ACTS = {
    "silu": ad.silu,
    "relu": ad.relu,
    "sigmoid": ad.sigmoid,
    "none": lambda t: t,
}


class ConvBNAct(Module):
    """conv -> batchnorm -> activation, the basic building unit."""

    def __init__(self, c_in: int, c_out: int, k: int = 1, stride: int = 1,
                 pad: int | None = None, act: str = "silu", *,
                 rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.conv = Conv(c_in, c_out, k, stride, pad, bias=False, rng=rng, dtype=dtype)
        self.bn = BatchNorm(c_out, dtype=dtype)
        self.act_name = act
        self._act = _ACTS[act]

    def forward(self, x: Tensor) -> Tensor:
        return self._act(self.bn(self.conv(x)))


class Bottleneck(Module):
    def __init__(self, c: int, shortcut: bool = True, *, rng, dtype=np.float32):
        super().__init__()
        self.cv1 = ConvBNAct(c, c, 1, rng=rng, dtype=dtype)
        self.cv2 = ConvBNAct(c, c, 3, rng=rng, dtype=dtype)
        self.shortcut = shortcut

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv2(self.cv1(x))
        return ad.add(x, y) if self.shortcut else y


class CSPBlock(Module):
    """Cross-stage-partial block: split channels between a bottleneck
    stack and a plain shortcut path, then rejoin."""

    def __init__(self, c_in: int, c_out: int, n: int = 1, shortcut: bool = True, *,
                 rng, dtype=np.float32):
        super().__init__()
        ch = c_out // 2
        self.cv1 = ConvBNAct(c_in, ch, 1, rng=rng, dtype=dtype)
        self.cv2 = ConvBNAct(c_in, ch, 1, rng=rng, dtype=dtype)
        self.m = [Bottleneck(ch, shortcut, rng=rng, dtype=dtype) for _ in range(n)]
        self.cv3 = ConvBNAct(2 * ch, c_out, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y = self.cv1(x)
        for blk in self.m:
            y = blk(y)
        return self.cv3(ad.concat([y, self.cv2(x)], axis=1))


class SPPF(Module):
    """Spatial pyramid pooling (fast): cascaded 5x5 stride-1 max pools."""

    def __init__(self, c_in: int, c_out: int, k: int = 5, *, rng, dtype=np.float32):
        super().__init__()
        ch = c_in // 2
        self.k = k
        self.cv1 = ConvBNAct(c_in, ch, 1, rng=rng, dtype=dtype)
        self.cv2 = ConvBNAct(ch * 4, c_out, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        y0 = self.cv1(x)
        y1 = ad.maxpool(y0, self.k, 1, self.k // 2)
        y2 = ad.maxpool(y1, self.k, 1, self.k // 2)
        y3 = ad.maxpool(y2, self.k, 1, self.k // 2)
        return self.cv2(ad.concat([y0, y1, y2, y3], axis=1))


class CABlock(Module):
    """Coordinate attention.

    Pools the input along each spatial direction, mixes the two pooled
    profiles through a shared 1x1 conv-bn-act, then produces per-row and
    per-column sigmoid gates that rescale the input:

        row profile  z_h[c,h] = mean over w of x[c,h,w]
        col profile  z_w[c,w] = mean over h of x[c,j,w]
        f   = act(bn(conv1([z_h ; z_w])))          (shared, reduced channels)
        g_h = sigmoid(conv_h(f_h)),  g_w = sigmoid(conv_w(f_w))
        out = x * g_h * g_w
    """

    def __init__(self, c: int, reduction: int = 32, *, rng, dtype=np.float32):
        super().__init__()
        self.channels_in = c
        cm = max(8, c // reduction)
        self.squeeze = ConvBNAct(c, cm, 1, rng=rng, dtype=dtype)
        self.conv_h = Conv(cm, c, 1, rng=rng, dtype=dtype)
        self.conv_w = Conv(cm, c, 1, rng=rng, dtype=dtype)

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.channels_in:
            raise ValueError(f"CABlock: expected {self.channels_in} channels, got {x.shape[1]}")
        n, c, h, w = x.shape
        z_h = ad.avg_pool(x, "width")                       # (n,c,h,1)
        z_w = ad.swap_hw(ad.avg_pool(x, "height"))          # (n,c,w,1)
        f = self.squeeze(ad.concat([z_h, z_w], axis=2))     # (n,cm,h+w,1)
        f_h, f_w = ad.split_spatial(f, h)
        g_h = ad.sigmoid(self.conv_h(f_h))                  # (n,c,h,1)
        g_w = ad.sigmoid(ad.swap_hw(self.conv_w(f_w)))      # (n,c,1,w)
        return ad.mul(ad.mul(x, g_h), g_w)


class WeightedFuse(Module):
    """Fusion node of the bidirectional pyramid.

    Combines 2 or 3 equally-shaped maps with learnable non-negative
    weights, fast-normalized as w+ / (eps + sum(w+)), then refines with a
    3x3 conv-bn-act. Inputs must already be resampled to the node's
    resolution; mismatches are rejected so the resampling stays auditable
    at the call site.
    """

    EPS = 1e-4

    def __init__(self, arity: int, c: int, *, rng, dtype=np.float32):
        super().__init__()
        if arity not in (2, 3):
            raise ValueError(f"WeightedFuse: arity must be 2 or 3, got {arity}")
        self.arity = arity
        self.fusion_weights = Parameter(Tensor(np.ones((1, arity, 1, 1), dtype=dtype)))
        self.conv = ConvBNAct(c, c, 3, rng=rng, dtype=dtype)

    def fuse(self, inputs: list[Tensor]) -> Tensor:
        """Normalized weighted sum, before the refining conv."""
        if len(inputs) != self.arity:
            raise ValueError(f"WeightedFuse: expected {self.arity} inputs, got {len(inputs)}")
        ref = inputs[0].shape
        for t in inputs[1:]:
            if t.shape != ref:
                raise ValueError(f"WeightedFuse: input shapes differ: {ref} vs {t.shape} "
                                 "(resample before fusing)")
        wpos = ad.relu(self.fusion_weights.tensor)
        denom = ad.add_scalar(ad.tsum(wpos), self.EPS)
        out = None
        for i, t in enumerate(inputs):
            coef = ad.div(ad.slice_channels(wpos, i, i + 1), denom)
            term = ad.scale_by(t, coef)
            out = term if out is None else ad.add(out, term)
        return out

    def coefficients(self) -> np.ndarray:
        """Current normalized fusion coefficients (diagnostic)."""
        w = np.maximum(self.fusion_weights.data.reshape(-1), 0.0)
        return w / (self.EPS + w.sum())

    def forward(self, inputs: list[Tensor]) -> Tensor:
        return self.conv(self.fuse(inputs))


class DetectHead(Module):
    """Per-level 1x1 conv emitting (anchors * (5 + classes)) channels.

    Channel layout is anchor-major: for each anchor
    [tx, ty, tw, th, obj, cls...]. Bias priors push initial objectness
    toward the expected object density so training starts calm.
    """

    def __init__(self, c_in: int, num_anchors: int, num_classes: int, stride: int,
                 image_size_hint: int = 64, *, rng, dtype=np.float32):
        super().__init__()
        self.num_anchors = num_anchors
        self.num_classes = num_classes
        self.stride = stride
        per_anchor = 5 + num_classes
        self.conv = Conv(c_in, num_anchors * per_anchor, 1, rng=rng, dtype=dtype)
        bias = self.conv.bias.data.reshape(num_anchors, per_anchor)
        cells = (image_size_hint / stride) ** 2
        bias[:, 4] = math.log(8.0 / max(cells, 1.0))
        bias[:, 5:] = math.log(0.6 / (num_classes - 0.99)) if num_classes > 1 else 0.0
        self.conv.bias.data = bias.reshape(1, -1, 1, 1).astype(dtype)

    def forward(self, x: Tensor) -> Tensor:
        return self.conv(x)
