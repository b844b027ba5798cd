"""Waveform to mel-magnitude features, babble synthesis and SNR mixing.

Audio runs at 16 kHz with a 40 ms Hann window (640 samples) and a 10 ms hop
(160 samples), so every 25 fps video frame pairs with four spectrogram frames.
Spectrograms are linear mel magnitudes (no log compression).
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, DegenerateInputError, FormatError

SAMPLE_RATE = 16000
WIN_LENGTH = 640
HOP_LENGTH = 160
N_FFT = 640
N_MELS = 80
FRAMES_PER_VIDEO_FRAME = 4
VIDEO_FPS = 25
SNR_LEVELS_DB = (-10.0, -5.0, 0.0, 5.0, 10.0)


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise FormatError(f"sample rate must be {SAMPLE_RATE} Hz, got {self.sample_rate}")
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.samples)):
            raise FormatError("waveform contains NaN or inf samples")

    def __len__(self) -> int:
        return self.samples.size

    @property
    def power(self) -> float:
        return float(np.mean(self.samples ** 2)) if self.samples.size else 0.0


@dataclass
class NoiseSpec:
    """Babble augmentation settings: mix with probability ``p_n`` at an SNR drawn from ``snr_levels``."""

    p_n: float = 0.25
    snr_levels: Tuple[float, ...] = SNR_LEVELS_DB
    n_sources: int = 30

    def __post_init__(self):
        if not 0.0 <= self.p_n <= 1.0:
            raise ConfigurationError(f"p_n must lie in [0, 1], got {self.p_n}")
        if self.n_sources < 1:
            raise ConfigurationError("n_sources must be positive")


# -------------------------------------------------------------------- mel
def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_band_edges(n_bins: int = N_MELS, f_lo: float = 0.0, f_hi: float = 8000.0) -> np.ndarray:
    """``n_bins + 2`` frequencies equally spaced on the mel scale; entries 1..n are filter centres."""
    return mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), n_bins + 2))


def mel_center_frequencies(n_bins: int = N_MELS, f_lo: float = 0.0, f_hi: float = 8000.0) -> np.ndarray:
    return mel_band_edges(n_bins, f_lo, f_hi)[1:-1]


def mel_filterbank(n_bins: int = N_MELS, f_lo: float = 0.0, f_hi: float = 8000.0,
                   n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE) -> np.ndarray:
    """Triangular mel filters of peak height 1, shape ``[n_bins, n_fft//2 + 1]``."""
    n_freqs = n_fft // 2 + 1
    if f_hi > sample_rate / 2:
        raise ConfigurationError(f"f_hi={f_hi} exceeds Nyquist {sample_rate / 2}")
    if not 0 <= f_lo < f_hi:
        raise ConfigurationError(f"need 0 <= f_lo < f_hi, got {f_lo}, {f_hi}")
    if n_bins < 1 or n_bins > n_freqs:
        raise ConfigurationError(f"n_bins={n_bins} must be between 1 and {n_freqs} FFT bins")
    fft_freqs = np.arange(n_freqs) * sample_rate / n_fft
    edges = mel_band_edges(n_bins, f_lo, f_hi)
    lower, centre, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (fft_freqs[None] - lower) / (centre - lower)
    falling = (upper - fft_freqs[None]) / (upper - centre)
    return np.maximum(0.0, np.minimum(rising, falling))


_FILTERBANK_CACHE: dict = {}


def _default_filterbank() -> np.ndarray:
    if "fb" not in _FILTERBANK_CACHE:
        _FILTERBANK_CACHE["fb"] = mel_filterbank()
    return _FILTERBANK_CACHE["fb"]


def hann_window(n: int = WIN_LENGTH) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(samples: np.ndarray, n_frames: Optional[int] = None) -> np.ndarray:
    """|STFT| frames ``[n_frames, 321]`` with centred, reflect-padded framing.

    Without ``n_frames`` the count is ``ceil(len / hop)``; otherwise frames are
    trimmed or zero-padded to exactly ``n_frames``.
    """
    x = np.asarray(samples, dtype=np.float64)
    natural = -(-x.size // HOP_LENGTH)
    half = N_FFT // 2
    mode = "reflect" if x.size > half else "constant"
    xp = np.pad(x, (half, half), mode=mode)
    count = natural if n_frames is None else min(natural, n_frames)
    if count > 0:
        frames = np.lib.stride_tricks.sliding_window_view(xp, WIN_LENGTH)[::HOP_LENGTH][:count]
        mag = np.abs(np.fft.rfft(frames * hann_window(), n=N_FFT, axis=1))
    else:
        mag = np.zeros((0, N_FFT // 2 + 1))
    if n_frames is not None and mag.shape[0] < n_frames:
        mag = np.concatenate([mag, np.zeros((n_frames - mag.shape[0], mag.shape[1]))])
    return mag


def stft_mel(w: Waveform, n_video_frames: Optional[int] = None,
             filterbank: Optional[np.ndarray] = None) -> np.ndarray:
    """Mel magnitude spectrogram ``[4T, 80]`` for a clip paired with ``T`` video frames.

    When ``n_video_frames`` is omitted, ``T`` is derived from the duration at
    25 fps (rounded up).
    """
    if not isinstance(w, Waveform):
        raise FormatError("stft_mel expects a Waveform")
    if n_video_frames is None:
        n_video_frames = -(-len(w) * VIDEO_FPS // SAMPLE_RATE)
    fb = _default_filterbank() if filterbank is None else filterbank
    mag = stft_magnitude(w.samples, FRAMES_PER_VIDEO_FRAME * n_video_frames)
    return mag @ fb.T


# ------------------------------------------------------------------- noise
def synth_babble(sources: Sequence[Waveform], length: int, rng: np.random.Generator,
                 n_sources: int = 30) -> Waveform:
    """Sum ``n_sources`` randomly offset segments and scale to unit RMS.

    Sources shorter than ``length`` wrap around.  An all-silent mixture is
    returned unscaled (zeros).
    """
    if len(sources) < n_sources:
        raise ConfigurationError(f"babble needs {n_sources} sources, got {len(sources)}")
    chosen = rng.choice(len(sources), size=n_sources, replace=False)
    mix = np.zeros(length)
    for i in chosen:
        src = sources[int(i)].samples
        if src.size == 0:
            continue
        offset = int(rng.integers(0, src.size))
        idx = (offset + np.arange(length)) % src.size
        mix += src[idx]
    rms = np.sqrt(np.mean(mix ** 2)) if length else 0.0
    if rms > 0:
        mix = mix / rms
    return Waveform(mix)


def noise_scale(clean: Waveform, noise: Waveform, snr_db: float) -> float:
    """Factor applied to ``noise`` so that the mixture has the requested SNR."""
    p_clean, p_noise = clean.power, noise.power
    if p_clean == 0.0 or p_noise == 0.0:
        raise DegenerateInputError("SNR mixing needs non-silent clean and noise signals")
    return float(np.sqrt(p_clean / (p_noise * 10.0 ** (snr_db / 10.0))))


def mix_at_snr(clean: Waveform, noise: Waveform, snr_db: float) -> Waveform:
    if len(clean) != len(noise):
        raise FormatError(f"clean ({len(clean)}) and noise ({len(noise)}) lengths differ")
    return Waveform(clean.samples + noise_scale(clean, noise, snr_db) * noise.samples)


def maybe_add_noise(clean: Waveform, babble_pool: Sequence[Waveform], spec: NoiseSpec,
                    rng: np.random.Generator) -> Tuple[Waveform, Optional[float]]:
    """Apply babble with probability ``p_n``; returns the waveform and the SNR used (or None)."""
    if rng.random() >= spec.p_n or clean.power == 0.0:
        return clean, None
    snr = float(rng.choice(spec.snr_levels))
    noise = synth_babble(babble_pool, len(clean), rng, spec.n_sources)
    return mix_at_snr(clean, noise, snr), snr


# --------------------------------------------------------------------- WAV
def read_wav(path: Union[str, Path]) -> Waveform:
    """Read 16-bit PCM mono 16 kHz RIFF audio, scaled to [-1, 1)."""
    try:
        with wave.open(str(path), "rb") as fh:
            if fh.getnchannels() != 1 or fh.getsampwidth() != 2:
                raise FormatError(f"{path}: expected 16-bit mono PCM")
            rate = fh.getframerate()
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise FormatError(f"{path}: {exc}") from exc
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return Waveform(data, rate)


def write_wav(path: Union[str, Path], w: Waveform) -> None:
    pcm = np.clip(np.round(w.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(w.sample_rate)
        fh.writeframes(pcm.tobytes())
