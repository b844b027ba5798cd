"""Visual front-end: C3D stem plus a pseudo-3D residual trunk.

``[B, T, 112, 112]`` grayscale clips become ``[B, T, width]`` per-frame
features.  The stem is a 5x7x7 convolution (spatial stride 2), batch norm,
ReLU and a 1x3x3 max-pool; the trunk halves the spatial size at each later
stage and never touches the temporal extent.  Block wiring cycles A, B, C.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .autograd import BatchNorm, Conv3d, Linear, Module, Tensor, ops
from .autograd.tensor import as_tensor
from .errors import ConfigurationError, FormatError

FRAME_SIZE = 112
P3D_MODES = ("A", "B", "C")


@dataclass
class VideoClip:
    frames: np.ndarray
    fps: int = 25

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3 or self.frames.shape[1:] != (FRAME_SIZE, FRAME_SIZE):
            raise FormatError(f"clip must be [T, {FRAME_SIZE}, {FRAME_SIZE}], got {self.frames.shape}")
        if self.frames.shape[0] < 1:
            raise FormatError("clip has no frames")
        if self.frames.min() < 0.0 or self.frames.max() > 1.0:
            raise FormatError("pixel values must lie in [0, 1]")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass
class P3DConfig:
    """Trunk layout.  ``stage_widths`` are block output widths before the multiplier.

    The 50-layer preset uses ``[3, 4, 6, 3]`` bottleneck blocks (48 conv layers
    plus stem and classifier).
    """

    stage_blocks: Tuple[int, ...] = (3, 4, 6, 3)
    stage_widths: Tuple[int, ...] = (64, 128, 256, 512)
    stem_filters: int = 64
    bottleneck_ratio: int = 4
    width_multiplier: float = 1.0
    cycle: Tuple[str, ...] = P3D_MODES

    def __post_init__(self):
        self.stage_blocks = tuple(self.stage_blocks)
        self.stage_widths = tuple(self.stage_widths)
        self.cycle = tuple(self.cycle)
        if len(self.stage_blocks) != len(self.stage_widths):
            raise ConfigurationError("stage_blocks and stage_widths must have equal length")
        if self.cycle != P3D_MODES:
            raise ConfigurationError(f"block cycle must be {P3D_MODES}, got {self.cycle}")

    @classmethod
    def full(cls) -> "P3DConfig":
        return cls()

    @classmethod
    def desk(cls, width_multiplier: float = 0.125, stage_blocks=(1, 1, 1, 1)) -> "P3DConfig":
        return cls(stage_blocks=tuple(stage_blocks), width_multiplier=width_multiplier)

    def scaled(self, width: int) -> int:
        return max(1, int(round(width * self.width_multiplier)))

    @property
    def out_width(self) -> int:
        return self.scaled(self.stage_widths[-1])

    def block_modes(self) -> List[str]:
        n = sum(self.stage_blocks)
        return [self.cycle[i % 3] for i in range(n)]


class P3DBlock(Module):
    """Bottleneck: 1x1x1 reduce, factored spatio-temporal pair, 1x1x1 expand, skip.

    Each factored convolution is followed by batch norm and ReLU.  Spatial
    downsampling happens in the reducing convolution.  ``zero_init_residual``
    zeroes the last BN scale, which turns the block into an identity on
    non-negative inputs.
    """

    def __init__(self, c_in: int, c_out: int, mode: str, rng: np.random.Generator,
                 spatial_stride: int = 1, bottleneck_ratio: int = 4,
                 zero_init_residual: bool = False, projection: Optional[bool] = None):
        super().__init__()
        if mode not in P3D_MODES:
            raise ConfigurationError(f"unknown P3D mode {mode!r}")
        inner = max(1, c_out // bottleneck_ratio)
        stride = (1, spatial_stride, spatial_stride)
        self.mode = mode
        self.c_in, self.c_out = c_in, c_out
        self.reduce = Conv3d(c_in, inner, (1, 1, 1), rng, stride=stride, padding=0)
        self.bn_reduce = BatchNorm(inner)
        self.spatial = Conv3d(inner, inner, (1, 3, 3), rng)
        self.bn_spatial = BatchNorm(inner)
        self.temporal = Conv3d(inner, inner, (3, 1, 1), rng)
        self.bn_temporal = BatchNorm(inner)
        self.expand = Conv3d(inner, c_out, (1, 1, 1), rng, padding=0)
        self.bn_expand = BatchNorm(c_out, zero_init=zero_init_residual)
        needs_projection = c_in != c_out or spatial_stride != 1
        if projection is None:
            projection = needs_projection
        if needs_projection and not projection:
            raise ConfigurationError(
                f"block changes shape ({c_in}->{c_out}, stride {spatial_stride}) without a projection")
        if projection:
            self.shortcut = Conv3d(c_in, c_out, (1, 1, 1), rng, stride=stride, padding=0)
            self.bn_shortcut = BatchNorm(c_out)
        else:
            self.shortcut = None

    def _factored(self, h: Tensor) -> Tensor:
        s = ops.relu(self.bn_spatial(self.spatial(h)))
        if self.mode == "A":
            return ops.relu(self.bn_temporal(self.temporal(s)))
        if self.mode == "B":
            return ops.add(s, ops.relu(self.bn_temporal(self.temporal(h))))
        if self.mode == "C":
            return ops.add(s, ops.relu(self.bn_temporal(self.temporal(s))))
        raise ConfigurationError(f"unknown P3D mode {self.mode!r}")

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.shape[1] != self.c_in:
            raise ConfigurationError(f"P3D block expects {self.c_in} channels, got {x.shape[1]}")
        h = ops.relu(self.bn_reduce(self.reduce(x)))
        h = self._factored(h)
        h = self.bn_expand(self.expand(h))
        skip = x if self.shortcut is None else self.bn_shortcut(self.shortcut(x))
        return ops.relu(ops.add(skip, h))


def p3d_block(x, block: P3DBlock, mode: Optional[str] = None) -> Tensor:
    """Run ``block``, optionally rewired to another mode with the same weights."""
    if mode is None:
        return block(x)
    saved = block.mode
    if mode not in P3D_MODES:
        raise ConfigurationError(f"unknown P3D mode {mode!r}")
    block.mode = mode
    try:
        return block(x)
    finally:
        block.mode = saved


def factored_parameter_count(channels: int) -> Tuple[int, int]:
    """(factored 1x3x3 + 3x1x1 weights, full 3x3x3 weights) at equal in/out widths."""
    return 9 * channels * channels + 3 * channels * channels, 27 * channels * channels


class VisualFrontend(Module):
    def __init__(self, cfg: P3DConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        stem = cfg.scaled(cfg.stem_filters)
        self.stem = Conv3d(1, stem, (5, 7, 7), rng, stride=(1, 2, 2), padding=(2, 3, 3))
        self.bn_stem = BatchNorm(stem)
        modes = iter(cfg.block_modes())
        self.blocks: List[P3DBlock] = []
        c_in = stem
        for stage, (n_blocks, width) in enumerate(zip(cfg.stage_blocks, cfg.stage_widths)):
            c_out = cfg.scaled(width)
            for i in range(n_blocks):
                stride = 2 if stage > 0 and i == 0 else 1
                self.blocks.append(P3DBlock(c_in, c_out, next(modes), rng, stride,
                                            cfg.bottleneck_ratio))
                c_in = c_out
        self.out_width = c_in

    def forward(self, clips) -> Tensor:
        """``[B, T, 112, 112]`` or ``[T, 112, 112]`` to ``[B, T, width]`` / ``[T, width]``."""
        clips = as_tensor(clips)
        squeeze = clips.ndim == 3
        if squeeze:
            clips = ops.reshape(clips, (1,) + clips.shape)
        if clips.ndim != 4 or clips.shape[2:] != (FRAME_SIZE, FRAME_SIZE):
            raise FormatError(f"frames must be {FRAME_SIZE}x{FRAME_SIZE}, got {clips.shape}")
        B, T = clips.shape[:2]
        h = ops.reshape(clips, (B, 1, T, FRAME_SIZE, FRAME_SIZE))
        h = ops.relu(self.bn_stem(self.stem(h)))
        h = ops.max_pool(h, (1, 3, 3), (1, 2, 2), (0, 1, 1))
        for block in self.blocks:
            h = block(h)
        feats = ops.transpose(ops.mean(h, axis=(3, 4)), (0, 2, 1))
        return ops.reshape(feats, (T, self.out_width)) if squeeze else feats


def frontend_forward(clip, frontend: VisualFrontend) -> Tensor:
    frames = clip.frames if isinstance(clip, VideoClip) else clip
    return frontend(frames)


class WordClassifier(Module):
    """Front-end, temporal mean-pool and one dense layer."""

    def __init__(self, frontend: VisualFrontend, n_classes: int, rng: np.random.Generator):
        super().__init__()
        if n_classes < 2:
            raise ConfigurationError(f"need at least two classes, got {n_classes}")
        self.frontend = frontend
        self.head = Linear(frontend.out_width, n_classes, rng)

    def forward(self, clips) -> Tensor:
        feats = self.frontend(clips)
        if feats.ndim == 2:
            feats = ops.reshape(feats, (1,) + feats.shape)
        return self.head(ops.mean(feats, axis=1))


def word_classify(clips, model: WordClassifier) -> Tensor:
    return model(clips)
