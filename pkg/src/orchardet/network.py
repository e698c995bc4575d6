"""Network description and builder for the two detector variants.

``yolov5s`` is the familiar CSP backbone with an FPN+PAN concatenation
neck and heads at strides 8/16/32. ``yolov5s-bc`` adds coordinate
attention after every backbone stage and before every neck fusion,
replaces the concatenation neck with a weighted bidirectional pyramid
over P2..P5, and adds a stride-4 head for small far-away objects.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .blocks import CABlock, ConvBNAct, CSPBlock, DetectHead, Module, SPPF, WeightedFuse

VARIANTS = ("yolov5s", "yolov5s-bc")

# anchor (w, h) priors in input pixels per stride; the stride-4 trio is
# the stride-8 trio halved
BASE_ANCHORS = {
    4: ((5.0, 6.5), (8.0, 15.0), (16.5, 11.5)),
    8: ((10.0, 13.0), (16.0, 30.0), (33.0, 23.0)),
    16: ((30.0, 61.0), (62.0, 45.0), (59.0, 119.0)),
    32: ((116.0, 90.0), (156.0, 198.0), (373.0, 326.0)),
}

_BASE_WIDTHS = (64, 128, 256, 512, 1024)   # stem, P2, P3, P4, P5
_BASE_DEPTHS = (3, 6, 9, 3)                # CSP repeats per stage


def make_divisible(x: float, divisor: int = 8) -> int:
    return max(divisor, int(round(x / divisor) * divisor))


def scaled_widths(width_multiple: float) -> tuple[int, ...]:
    return tuple(make_divisible(w * width_multiple) for w in _BASE_WIDTHS)


def scaled_depths(depth_multiple: float) -> tuple[int, ...]:
    return tuple(max(1, round(d * depth_multiple)) for d in _BASE_DEPTHS)


@dataclass
class NetworkSpec:
    """Declarative architecture description, compiled by build_network."""

    variant: str = "yolov5s-bc"
    depth_multiple: float = 0.33
    width_multiple: float = 0.50
    num_classes: int = 2
    head_strides: tuple[int, ...] = ()
    anchors: dict[int, tuple[tuple[float, float], ...]] = field(default_factory=dict)

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if not self.head_strides:
            self.head_strides = (4, 8, 16, 32) if self.variant == "yolov5s-bc" else (8, 16, 32)
        self.head_strides = tuple(int(s) for s in self.head_strides)
        for a, b in zip(self.head_strides, self.head_strides[1:]):
            if b <= a:
                raise ValueError(f"head strides must be strictly increasing, got {self.head_strides}")
        for s in self.head_strides:
            if s & (s - 1):
                raise ValueError(f"head stride {s} is not a power of two")
        if not self.anchors:
            self.anchors = {s: BASE_ANCHORS[s] for s in self.head_strides}
        self.anchors = {int(s): tuple((float(w), float(h)) for w, h in v)
                        for s, v in self.anchors.items()}
        for s in self.head_strides:
            if s not in self.anchors:
                raise ValueError(f"no anchors given for stride {s}")
            if len(self.anchors[s]) != 3:
                raise ValueError(f"stride {s}: expected 3 anchors, got {len(self.anchors[s])}")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")

    @property
    def num_anchors(self) -> int:
        return 3

    @property
    def max_stride(self) -> int:
        return self.head_strides[-1]

    def head_channels(self) -> int:
        return self.num_anchors * (5 + self.num_classes)


class Backbone(Module):
    """Stem + 4 CSP stages emitting P2..P5, SPPF on top; optional CA."""

    def __init__(self, widths, depths, with_ca: bool, *, rng, dtype):
        super().__init__()
        c0, c2, c3, c4, c5 = widths
        n1, n2, n3, n4 = depths
        self.stem = ConvBNAct(3, c0, 6, 2, 2, rng=rng, dtype=dtype)
        self.down2 = ConvBNAct(c0, c2, 3, 2, rng=rng, dtype=dtype)
        self.stage2 = CSPBlock(c2, c2, n1, rng=rng, dtype=dtype)
        self.down3 = ConvBNAct(c2, c3, 3, 2, rng=rng, dtype=dtype)
        self.stage3 = CSPBlock(c3, c3, n2, rng=rng, dtype=dtype)
        self.down4 = ConvBNAct(c3, c4, 3, 2, rng=rng, dtype=dtype)
        self.stage4 = CSPBlock(c4, c4, n3, rng=rng, dtype=dtype)
        self.down5 = ConvBNAct(c4, c5, 3, 2, rng=rng, dtype=dtype)
        self.stage5 = CSPBlock(c5, c5, n4, rng=rng, dtype=dtype)
        self.sppf = SPPF(c5, c5, rng=rng, dtype=dtype)
        if with_ca:
            self.ca2 = CABlock(c2, rng=rng, dtype=dtype)
            self.ca3 = CABlock(c3, rng=rng, dtype=dtype)
            self.ca4 = CABlock(c4, rng=rng, dtype=dtype)
            self.ca5 = CABlock(c5, rng=rng, dtype=dtype)
        self.with_ca = with_ca

    def forward(self, x: Tensor) -> dict[int, Tensor]:
        p2 = self.stage2(self.down2(self.stem(x)))
        if self.with_ca:
            p2 = self.ca2(p2)
        p3 = self.stage3(self.down3(p2))
        if self.with_ca:
            p3 = self.ca3(p3)
        p4 = self.stage4(self.down4(p3))
        if self.with_ca:
            p4 = self.ca4(p4)
        p5 = self.sppf(self.stage5(self.down5(p4)))
        if self.with_ca:
            p5 = self.ca5(p5)
        return {2: p2, 3: p3, 4: p4, 5: p5}


class PANNeck(Module):
    """FPN top-down + PAN bottom-up with channel concatenation (baseline)."""

    def __init__(self, widths, depths, *, rng, dtype):
        super().__init__()
        _, _, c3, c4, c5 = widths
        n = max(1, depths[0])
        self.lat5 = ConvBNAct(c5, c4, 1, rng=rng, dtype=dtype)
        self.td4 = CSPBlock(2 * c4, c4, n, shortcut=False, rng=rng, dtype=dtype)
        self.lat4 = ConvBNAct(c4, c3, 1, rng=rng, dtype=dtype)
        self.td3 = CSPBlock(2 * c3, c3, n, shortcut=False, rng=rng, dtype=dtype)
        self.down3 = ConvBNAct(c3, c3, 3, 2, rng=rng, dtype=dtype)
        self.bu4 = CSPBlock(2 * c3, c4, n, shortcut=False, rng=rng, dtype=dtype)
        self.down4 = ConvBNAct(c4, c4, 3, 2, rng=rng, dtype=dtype)
        self.bu5 = CSPBlock(2 * c4, c5, n, shortcut=False, rng=rng, dtype=dtype)

    def forward(self, feats: dict[int, Tensor]) -> dict[int, Tensor]:
        l5 = self.lat5(feats[5])
        t4 = self.td4(ad.concat([ad.upsample2_nearest(l5), feats[4]], axis=1))
        l4 = self.lat4(t4)
        n3 = self.td3(ad.concat([ad.upsample2_nearest(l4), feats[3]], axis=1))
        n4 = self.bu4(ad.concat([self.down3(n3), l4], axis=1))
        n5 = self.bu5(ad.concat([self.down4(n4), l5], axis=1))
        return {3: n3, 4: n4, 5: n5}


class BiFPNNeck(Module):
    """Weighted bidirectional pyramid over P2..P5 with CA before fusion.

    One top-down pass then one bottom-up pass; every fusion node carries
    learnable normalized weights. Upsampled/downsampled inputs pass
    through 1x1 projections so channel counts match the target level.
    """

    def __init__(self, widths, *, rng, dtype):
        super().__init__()
        _, c2, c3, c4, c5 = widths
        self.ca2 = CABlock(c2, rng=rng, dtype=dtype)
        self.ca3 = CABlock(c3, rng=rng, dtype=dtype)
        self.ca4 = CABlock(c4, rng=rng, dtype=dtype)
        self.ca5 = CABlock(c5, rng=rng, dtype=dtype)
        self.proj54 = ConvBNAct(c5, c4, 1, rng=rng, dtype=dtype)
        self.proj43 = ConvBNAct(c4, c3, 1, rng=rng, dtype=dtype)
        self.proj32 = ConvBNAct(c3, c2, 1, rng=rng, dtype=dtype)
        self.proj23 = ConvBNAct(c2, c3, 1, rng=rng, dtype=dtype)
        self.proj34 = ConvBNAct(c3, c4, 1, rng=rng, dtype=dtype)
        self.proj45 = ConvBNAct(c4, c5, 1, rng=rng, dtype=dtype)
        self.fuse_td4 = WeightedFuse(2, c4, rng=rng, dtype=dtype)
        self.fuse_td3 = WeightedFuse(2, c3, rng=rng, dtype=dtype)
        self.fuse_out2 = WeightedFuse(2, c2, rng=rng, dtype=dtype)
        self.fuse_out3 = WeightedFuse(3, c3, rng=rng, dtype=dtype)
        self.fuse_out4 = WeightedFuse(3, c4, rng=rng, dtype=dtype)
        self.fuse_out5 = WeightedFuse(2, c5, rng=rng, dtype=dtype)

    def forward(self, feats: dict[int, Tensor]) -> dict[int, Tensor]:
        q2 = self.ca2(feats[2])
        q3 = self.ca3(feats[3])
        q4 = self.ca4(feats[4])
        q5 = self.ca5(feats[5])
        td4 = self.fuse_td4([q4, ad.upsample2_nearest(self.proj54(q5))])
        td3 = self.fuse_td3([q3, ad.upsample2_nearest(self.proj43(td4))])
        n2 = self.fuse_out2([q2, ad.upsample2_nearest(self.proj32(td3))])
        n3 = self.fuse_out3([q3, td3, self.proj23(ad.maxpool2(n2))])
        n4 = self.fuse_out4([q4, td4, self.proj34(ad.maxpool2(n3))])
        n5 = self.fuse_out5([q5, self.proj45(ad.maxpool2(n4))])
        return {2: n2, 3: n3, 4: n4, 5: n5}


class Network(Module):
    """Executable layer graph for one spec; forward returns raw head maps."""

    def __init__(self, spec: NetworkSpec, *, dtype=np.float32, init_seed: int = 0,
                 image_size_hint: int = 64):
        super().__init__()
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(init_seed)
        widths = scaled_widths(spec.width_multiple)
        depths = scaled_depths(spec.depth_multiple)
        self.widths = widths
        bc = spec.variant == "yolov5s-bc"
        self.backbone = Backbone(widths, depths, with_ca=bc, rng=rng, dtype=dtype)
        self.neck = BiFPNNeck(widths, rng=rng, dtype=dtype) if bc \
            else PANNeck(widths, depths, rng=rng, dtype=dtype)
        level_channels = {2: widths[1], 3: widths[2], 4: widths[3], 5: widths[4]}
        self.heads = {}
        for s in spec.head_strides:
            level = s.bit_length() - 1
            self.heads[s] = DetectHead(level_channels[level], spec.num_anchors,
                                       spec.num_classes, s,
                                       image_size_hint=image_size_hint, rng=rng, dtype=dtype)
        self._assign_parameter_names()

    # heads live in a dict keyed by stride; expose them to the module walk
    def _children(self):
        yield from super()._children()
        for s, h in self.heads.items():
            yield f"heads.{s}", h

    def _assign_parameter_names(self) -> None:
        seen = set()
        for name, p in self.named_parameters():
            if name in seen:
                raise RuntimeError(f"duplicate parameter name {name}")
            seen.add(name)
            p.name = name

    def parameter_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def remove_head(self, stride: int) -> None:
        """Graph surgery: drop one detection head (audit helper)."""
        if stride not in self.heads:
            raise KeyError(f"no head at stride {stride}")
        del self.heads[stride]
        self.spec.head_strides = tuple(s for s in self.spec.head_strides if s != stride)

    def forward(self, image: Tensor, capture: dict[str, Tensor] | None = None) -> list[Tensor]:
        """Raw per-head predictions, ordered by ascending stride.

        ``capture``, when given, receives named intermediate feature maps
        (the input of each head) for heat-map export.
        """
        n, c, h, w = image.shape
        s = self.spec.max_stride
        if h % s or w % s:
            raise ValueError(f"input {h}x{w} not divisible by the largest stride {s}")
        if c != 3:
            raise ValueError(f"expected 3-channel input, got {c}")
        feats = self.backbone(image)
        neck_out = self.neck(feats)
        outputs = []
        for stride in self.spec.head_strides:
            level = stride.bit_length() - 1
            head_in = neck_out[level]
            if capture is not None:
                capture[f"head_input.{stride}"] = head_in
            outputs.append(self.heads[stride](head_in))
        return outputs


def build_network(spec: NetworkSpec, *, dtype=np.float32, init_seed: int = 0,
                  image_size_hint: int = 64) -> Network:
    """Compile a NetworkSpec into an executable network."""
    return Network(spec, dtype=dtype, init_seed=init_seed, image_size_hint=image_size_hint)
