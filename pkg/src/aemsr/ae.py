"""Visually guided enhancement network.

Video features ``[B, T, Cv]`` go through a video stream that upsamples to
``4T``; noisy mel magnitudes ``[B, 4T, F]`` go through an audio stream.  The
two are concatenated on the channel axis, encoded by a one-layer EleAtt-GRU,
and two fully connected layers plus a sigmoid output layer yield a mask in
(0, 1).  The enhanced magnitude is the mask times the noisy magnitude.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .autograd import Linear, Module, Tensor, ops
from .autograd.optim import Adam
from .autograd.tensor import as_tensor
from .eleatt_gru import EleAttGRUStack
from .errors import AlignmentError, ConfigurationError, DegenerateInputError, TrainingDivergenceError
from .temporal import TemporalStream, audio_stream_spec, video_stream_spec


@dataclass
class AEConfig:
    """Widths default to the full-size tables; desk runs shrink them."""

    unit: str = "tcn"
    video_in: int = 512
    n_mels: int = 80
    stream_width: Optional[int] = None
    stream_out: int = 256
    gru_units: int = 512
    fc_units: int = 600
    dropout: float = 0.1
    input_scale: float = 1.0

    @classmethod
    def desk(cls, unit: str = "tcn", video_in: int = 64, **overrides) -> "AEConfig":
        params = dict(unit=unit, video_in=video_in, stream_width=64 if unit == "tcn" else 48,
                      stream_out=32, gru_units=64, fc_units=64)
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return asdict(self)


class AEModel(Module):
    """Mask estimator; ``unit`` selects TCN or 1D-ResNet streams behind one interface.

    ``forced_mask`` is a test hook: when set, the network is bypassed and the
    mask is that constant.
    """

    def __init__(self, cfg: AEConfig, rng: np.random.Generator):
        super().__init__()
        if cfg.unit not in ("tcn", "1drn"):
            raise ConfigurationError(f"AE unit must be 'tcn' or '1drn', got {cfg.unit!r}")
        self.cfg = cfg
        self.video_stream = TemporalStream(
            video_stream_spec(cfg.unit, cfg.stream_width, cfg.stream_out), cfg.video_in, rng, cfg.dropout)
        self.audio_stream = TemporalStream(
            audio_stream_spec(cfg.unit, cfg.stream_width, cfg.stream_out), cfg.n_mels, rng, cfg.dropout)
        fused = self.video_stream.out_channels + self.audio_stream.out_channels
        self.fusion = EleAttGRUStack(fused, cfg.gru_units, 1, rng)
        self.fc1 = Linear(cfg.gru_units, cfg.fc_units, rng)
        self.fc2 = Linear(cfg.fc_units, cfg.fc_units, rng)
        self.fc_mask = Linear(cfg.fc_units, cfg.n_mels, rng)
        self.forced_mask: Optional[float] = None

    @property
    def unit(self) -> str:
        return self.cfg.unit

    @property
    def fusion_width(self) -> int:
        return self.video_stream.out_channels + self.audio_stream.out_channels

    def head(self, fused: Tensor, lengths=None) -> Tensor:
        """Fusion head: EleAtt-GRU, fc1, fc2 and the sigmoid mask layer."""
        h = self.fusion(fused, lengths=lengths)
        h = ops.relu(self.fc1(h))
        h = ops.relu(self.fc2(h))
        return ops.sigmoid(self.fc_mask(h))

    def forward(self, v, m_noisy, lengths: Optional[Sequence[int]] = None) -> Tuple[Tensor, Tensor]:
        """Return ``(mask, enhanced)``; ``lengths`` are per-clip video frame counts."""
        v, m_noisy = as_tensor(v), as_tensor(m_noisy)
        squeeze = v.ndim == 2
        if squeeze:
            v = ops.reshape(v, (1,) + v.shape)
            m_noisy = ops.reshape(m_noisy, (1,) + m_noisy.shape)
        B, T = v.shape[:2]
        if m_noisy.ndim != 3 or m_noisy.shape[0] != B or m_noisy.shape[1] != 4 * T:
            raise AlignmentError(f"video {v.shape} needs magnitudes with {4 * T} frames, got {m_noisy.shape}")
        if m_noisy.shape[2] != self.cfg.n_mels:
            raise AlignmentError(f"expected {self.cfg.n_mels} mel bins, got {m_noisy.shape[2]}")
        if self.forced_mask is not None:
            mask = Tensor._wrap(np.full(m_noisy.shape, float(self.forced_mask)))
        else:
            gl = None if lengths is None else 4 * np.asarray(lengths)
            vs = self.video_stream(v, lengths)
            a_in = m_noisy if self.cfg.input_scale == 1.0 else ops.mul(m_noisy, self.cfg.input_scale)
            aus = self.audio_stream(a_in, gl)
            fused = ops.concat([vs, aus], axis=2)
            mask = self.head(fused, gl)
        enhanced = ops.mul(mask, m_noisy)
        if squeeze:
            mask = ops.reshape(mask, mask.shape[1:])
            enhanced = ops.reshape(enhanced, enhanced.shape[1:])
        return mask, enhanced


def ae_forward(v, m_noisy, model: AEModel, lengths=None) -> Tuple[Tensor, Tensor]:
    return model(v, m_noisy, lengths)


def ae_loss(model: AEModel, v, m_noisy, m_clean, lengths=None) -> Tensor:
    """L1 distance between enhanced and clean magnitudes, averaged over valid frames."""
    _, enhanced = model(v, m_noisy, lengths)
    loss = ops.l1_loss(enhanced, m_clean)
    if lengths is not None:
        total = enhanced.shape[-2] if enhanced.ndim == 2 else enhanced.shape[0] * enhanced.shape[1]
        valid = 4 * int(np.sum(lengths))
        loss = ops.mul(loss, total / valid)
    return loss


def ae_train_step(batch, model: AEModel, optimizer: Adam) -> float:
    """One Adam step on ``batch = (v, m_noisy, m_clean[, lengths])``; returns the loss."""
    v, m_noisy, m_clean = batch[:3]
    lengths = batch[3] if len(batch) > 3 else None
    model.train()
    optimizer.zero_grad()
    loss = ae_loss(model, v, m_noisy, m_clean, lengths)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDivergenceError(
            f"AE loss became {value}; lr={optimizer.lr}, "
            f"input range [{np.min(m_noisy):.3g}, {np.max(m_noisy):.3g}]")
    loss.backward()
    optimizer.step()
    return value


def energy_error(M, M_o) -> float:
    """Relative Frobenius distance ``||M - M_o|| / ||M_o||``."""
    M = np.asarray(M, dtype=np.float64)
    M_o = np.asarray(M_o, dtype=np.float64)
    if M.shape != M_o.shape:
        raise AlignmentError(f"shape mismatch {M.shape} vs {M_o.shape}")
    ref = np.linalg.norm(M_o)
    if ref == 0.0:
        raise DegenerateInputError("reference magnitude is all zero")
    return float(np.linalg.norm(M - M_o) / ref)
