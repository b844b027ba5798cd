"""Temporal convolution units and the stream assemblers of the enhancement network.

Two interchangeable unit kinds:

* ``tcn``: residual blocks of two weight-normalised dilated causal
  convolutions (ReLU + spatial dropout after each) with an identity skip.
* ``1drn``: 1-D ResNet blocks, a depthwise-separable convolution followed by
  batch norm and ReLU, with the residual added after the ReLU.

A :class:`StreamSpec` is a layer table (filters, K, S, P, N, Out).  A stride of
``0.5`` marks a fractionally-strided (transposed) convolution that doubles the
temporal extent; a stride of ``2`` halves it.  Streams take ``[B, L, C]`` and
return ``[B, L', C']``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence

import numpy as np

from .autograd import BatchNorm, Conv1d, Module, Tensor, WeightNormConv1d, ops
from .autograd.tensor import as_tensor
from .errors import AlignmentError, ConfigurationError

UNIT_KINDS = ("tcn", "1drn")


class _Dropping(Module):
    """Mixin holding the generator used for dropout masks."""

    dropout = 0.0

    def set_rng(self, rng: np.random.Generator) -> None:
        self._rng = rng

    def _drop(self, x: Tensor) -> Tensor:
        return ops.spatial_dropout(x, self.dropout, getattr(self, "_rng", None), self.training)


class TCNBlock(_Dropping):
    """Causal residual block; receptive field grows by ``2*(K-1)*dilation``."""

    def __init__(self, channels: int, dilation: int, rng: np.random.Generator, kernel: int = 3,
                 dropout: float = 0.1):
        super().__init__()
        if not 0.0 <= dropout <= 1.0:
            raise ConfigurationError(f"dropout must lie in [0, 1], got {dropout}")
        self.channels, self.dilation, self.kernel = channels, dilation, kernel
        self.conv1 = WeightNormConv1d(channels, channels, kernel, rng, dilation=dilation, causal=True)
        self.conv2 = WeightNormConv1d(channels, channels, kernel, rng, dilation=dilation, causal=True)
        self.dropout = dropout
        self._rng = rng

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[1] != self.channels:
            raise ConfigurationError(f"TCN block expects {self.channels} channels, got {x.shape[1]}")
        h = self._drop(ops.relu(self.conv1(x)))
        h = self._drop(ops.relu(self.conv2(h)))
        return ops.add(x, h)


class TCNUpBlock(_Dropping):
    """Fractionally-strided causal convolution with a nearest-upsampled skip."""

    def __init__(self, channels: int, factor: int, rng: np.random.Generator, kernel: int = 3,
                 dropout: float = 0.1):
        super().__init__()
        self.channels, self.factor = channels, factor
        self.conv = WeightNormConv1d(channels, channels, kernel, rng, stride=factor, causal=True,
                                     transposed=True)
        self.dropout = dropout
        self._rng = rng

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[1] != self.channels:
            raise ConfigurationError(f"TCN block expects {self.channels} channels, got {x.shape[1]}")
        h = self._drop(ops.relu(self.conv(x)))
        return ops.add(ops.repeat(x, self.factor, axis=-1), h)


class DepthwiseSeparableConv1d(Module):
    def __init__(self, channels: int, kernel: int, rng: np.random.Generator, stride: int = 1):
        super().__init__()
        self.depthwise = Conv1d(channels, channels, kernel, rng, stride=stride,
                                padding=(kernel - 1) // 2, groups=channels, bias=False)
        self.pointwise = Conv1d(channels, channels, 1, rng, padding=0, bias=False)

    def forward(self, x) -> Tensor:
        return self.pointwise(self.depthwise(x))


class ResNet1DBlock(Module):
    """Depthwise-separable conv, BN, ReLU, then the residual.

    ``stride=2`` halves the length (the skip is average-pooled).
    """

    def __init__(self, channels: int, rng: np.random.Generator, kernel: int = 5, stride: int = 1):
        super().__init__()
        if stride not in (1, 2):
            raise ConfigurationError(f"1D ResNet block stride must be 1 or 2, got {stride}")
        self.channels, self.stride = channels, stride
        self.conv = DepthwiseSeparableConv1d(channels, kernel, rng, stride=stride)
        self.bn = BatchNorm(channels)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[1] != self.channels:
            raise ConfigurationError(f"1D ResNet block expects {self.channels} channels, got {x.shape[1]}")
        h = ops.relu(self.bn(self.conv(x)))
        skip = x if self.stride == 1 else ops.avg_pool1d(x, self.stride)
        return ops.add(skip, h)


class ResNet1DUpBlock(Module):
    """Transposed (full, not separable) convolution, BN, ReLU, plus an upsampled skip."""

    def __init__(self, channels: int, factor: int, rng: np.random.Generator, kernel: int = 5):
        super().__init__()
        self.channels, self.factor = channels, factor
        self.conv = Conv1d(channels, channels, kernel, rng, stride=factor, padding="same",
                           transposed=True, bias=False)
        self.bn = BatchNorm(channels)

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        h = ops.relu(self.bn(self.conv(x)))
        return ops.add(ops.repeat(x, self.factor, axis=-1), h)


# ------------------------------------------------------------------ specs
@dataclass
class LayerSpec:
    """One row of a stream table.  ``kind`` is ``fc``, ``conv`` (one 1D ResNet block) or ``tcn``."""

    name: str
    kind: str
    filters: int
    K: int = 1
    S: float = 1.0
    P: int = 0
    N: int = 1
    out: str = "T"

    @property
    def upsample(self) -> Fraction:
        return Fraction(1, 1) / Fraction(self.S).limit_denominator(16)


@dataclass
class StreamSpec:
    unit: str
    role: str
    layers: List[LayerSpec] = field(default_factory=list)

    def __post_init__(self):
        if self.unit not in UNIT_KINDS:
            raise ConfigurationError(f"unit kind must be one of {UNIT_KINDS}, got {self.unit!r}")
        self.layers = [LayerSpec(**l) if isinstance(l, dict) else l for l in self.layers]

    @property
    def upsample_factor(self) -> Fraction:
        total = Fraction(1)
        for layer in self.layers:
            total *= layer.upsample
        return total

    @property
    def out_channels(self) -> int:
        return self.layers[-1].filters

    def n_upsampling_stages(self) -> int:
        return sum(1 for l in self.layers if l.upsample > 1)

    def validate(self) -> None:
        if self.role == "video" and (self.upsample_factor != 4 or self.n_upsampling_stages() != 2):
            raise ConfigurationError(
                f"video stream must upsample by 4 in two stages, got x{self.upsample_factor} "
                f"in {self.n_upsampling_stages()}")
        if self.role == "audio" and self.upsample_factor != 1:
            raise ConfigurationError("audio stream must preserve the temporal extent")

    def to_dict(self) -> dict:
        return {"unit": self.unit, "role": self.role, "layers": [asdict(l) for l in self.layers]}

    @classmethod
    def from_dict(cls, d: dict) -> "StreamSpec":
        return cls(d["unit"], d["role"], [LayerSpec(**l) for l in d["layers"]])


def video_stream_spec(unit: str, width: Optional[int] = None, out_width: int = 256) -> StreamSpec:
    """Video stream tables: ``T -> 2T -> 4T`` through two transposed layers."""
    if unit == "1drn":
        w = width or 1536
        rows = [LayerSpec("fc0", "fc", w, 1, 1, 0, out="T")]
        outs = ["T", "T", "2T", "2T", "2T", "2T", "4T", "4T", "4T"]
        for i, out in enumerate(outs, start=1):
            stride = 0.5 if i in (3, 7) else 1
            rows.append(LayerSpec(f"conv{i}", "conv", w, 5, stride, 2, out=out))
        rows.append(LayerSpec("fc10", "fc", out_width, 1, 1, 0, out="4T"))
        return StreamSpec("1drn", "video", rows)
    if unit == "tcn":
        w = width or 520
        return StreamSpec("tcn", "video", [
            LayerSpec("fc0", "fc", w, 1, 1, 0, 1, "T"),
            LayerSpec("TCN1", "tcn", w, 3, 1, 0, 3, "T"),
            LayerSpec("conv2", "tcn", w, 3, 0.5, 0, 1, "2T"),
            LayerSpec("TCN3", "tcn", w, 3, 1, 0, 3, "2T"),
            LayerSpec("conv4", "tcn", w, 3, 0.5, 0, 1, "4T"),
            LayerSpec("fc5", "fc", out_width, 1, 1, 0, 1, "4T"),
        ])
    raise ConfigurationError(f"unit kind must be one of {UNIT_KINDS}, got {unit!r}")


def audio_stream_spec(unit: str, width: Optional[int] = None, out_width: int = 256) -> StreamSpec:
    """Audio stream tables: every layer keeps the ``4T`` extent."""
    if unit == "1drn":
        w = width or 1536
        rows = [LayerSpec("fc0", "fc", w, 1, 1, 0, out="4T")]
        rows += [LayerSpec(f"conv{i}", "conv", w, 5, 1, 2, out="4T") for i in range(1, 6)]
        rows.append(LayerSpec("fc6", "fc", out_width, 1, 1, 0, out="4T"))
        return StreamSpec("1drn", "audio", rows)
    if unit == "tcn":
        w = width or 520
        return StreamSpec("tcn", "audio", [
            LayerSpec("fc0", "fc", w, 1, 1, 0, 1, "4T"),
            LayerSpec("TCN1", "tcn", w, 3, 1, 0, 3, "4T"),
            LayerSpec("fc2", "fc", out_width, 1, 1, 0, 1, "4T"),
        ])
    raise ConfigurationError(f"unit kind must be one of {UNIT_KINDS}, got {unit!r}")


class TemporalStream(Module):
    """Layer stack instantiated from a :class:`StreamSpec`; maps ``[B, L, C_in]`` to ``[B, L*up, C_out]``."""

    def __init__(self, spec: StreamSpec, in_channels: int, rng: np.random.Generator,
                 dropout: float = 0.1):
        super().__init__()
        spec.validate()
        self.spec = spec
        self.layers: List[Module] = []
        channels = in_channels
        for row in spec.layers:
            if row.kind == "fc":
                self.layers.append(Conv1d(channels, row.filters, 1, rng, padding=0))
                channels = row.filters
                continue
            if row.filters != channels:
                raise ConfigurationError(
                    f"{row.name}: {row.filters} filters but {channels} input channels; add an fc row")
            up = row.upsample
            if row.kind == "tcn":
                if up > 1:
                    self.layers.append(TCNUpBlock(channels, int(up), rng, row.K, dropout))
                else:
                    self.layers.extend(TCNBlock(channels, 2 ** i, rng, row.K, dropout)
                                       for i in range(row.N))
            elif row.kind == "conv":
                if up > 1:
                    self.layers.append(ResNet1DUpBlock(channels, int(up), rng, row.K))
                else:
                    stride = int(1 / up)
                    self.layers.extend(ResNet1DBlock(channels, rng, row.K, stride) for _ in range(row.N))
            else:
                raise ConfigurationError(f"unknown layer kind {row.kind!r}")
        self.out_channels = channels

    def forward(self, x, lengths: Optional[Sequence[int]] = None) -> Tensor:
        """``lengths`` (input frames per sequence) zero the padding before every layer."""
        h = ops.transpose(as_tensor(x), (0, 2, 1))
        if lengths is None:
            for layer in self.layers:
                h = layer(h)
            return ops.transpose(h, (0, 2, 1))
        lengths = np.asarray(lengths)
        L_in = h.shape[2]
        for layer in self.layers:
            h = layer(ops.length_mask(h, lengths * h.shape[2] // L_in, axis=2))
        return ops.transpose(h, (0, 2, 1))


def video_stream(v, stream: TemporalStream) -> Tensor:
    """Video features ``[B, T, C]`` to ``[B, 4T, C']``."""
    if stream.spec.role != "video":
        raise ConfigurationError("video_stream needs a video-role stream")
    out = stream(v)
    if out.shape[1] != 4 * as_tensor(v).shape[1]:
        raise ConfigurationError(f"video stream produced {out.shape[1]} frames from {as_tensor(v).shape[1]}")
    return out


def audio_stream(m, stream: TemporalStream, n_video_frames: Optional[int] = None) -> Tensor:
    """Magnitudes ``[B, 4T, F]`` to ``[B, 4T, C']``; checks the 4T pairing when ``n_video_frames`` is given."""
    m = as_tensor(m)
    if stream.spec.role != "audio":
        raise ConfigurationError("audio_stream needs an audio-role stream")
    if n_video_frames is not None and m.shape[1] != 4 * n_video_frames:
        raise AlignmentError(f"{m.shape[1]} audio frames do not pair with {n_video_frames} video frames")
    return stream(m)


def receptive_field(kernel: int, dilations: Sequence[int], layers_per_block: int = 2) -> int:
    return 1 + sum(layers_per_block * (kernel - 1) * d for d in dilations)
