"""Utterance container, word-window cropping and batch collation."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .errors import AlignmentError, ContractError


@dataclass
class Utterance:
    """One aligned sample.

    ``video`` holds per-frame visual features ``[T, Cv]`` and ``audio`` the
    mel magnitudes ``[4T, F]`` fed to the networks.  ``clean`` optionally
    keeps the clean magnitudes when ``audio`` is noisy.  ``spans`` are per
    word ``[start, end)`` video-frame intervals.
    """

    video: np.ndarray
    audio: np.ndarray
    transcript: str
    spans: Optional[List[Tuple[int, int]]] = None
    clean: Optional[np.ndarray] = None
    uid: str = ""

    def __post_init__(self):
        if self.audio.shape[0] != 4 * self.video.shape[0]:
            raise AlignmentError(
                f"{self.uid or 'utterance'}: {self.audio.shape[0]} audio frames for "
                f"{self.video.shape[0]} video frames")
        if self.spans is not None and len(self.spans) != len(self.words):
            raise AlignmentError(f"{len(self.spans)} spans for {len(self.words)} words")

    @property
    def words(self) -> List[str]:
        return self.transcript.split()

    @property
    def n_frames(self) -> int:
        return self.video.shape[0]

    def with_audio(self, audio: np.ndarray) -> "Utterance":
        return replace(self, audio=audio)


def crop_words(u: Utterance, start: int, k: int, margin: int = 1) -> Utterance:
    """Keep words ``start .. start+k-1`` plus ``margin`` frames of context on both sides."""
    if u.spans is None:
        raise ContractError("cropping needs word spans")
    n = len(u.spans)
    if not (0 <= start < n and 1 <= k and start + k <= n):
        raise ContractError(f"word window [{start}, {start + k}) outside 0..{n}")
    lo = max(0, u.spans[start][0] - margin)
    hi = min(u.n_frames, u.spans[start + k - 1][1] + margin)
    spans = [(s - lo, e - lo) for s, e in u.spans[start:start + k]]
    return Utterance(
        video=u.video[lo:hi], audio=u.audio[4 * lo:4 * hi],
        transcript=" ".join(u.words[start:start + k]), spans=spans,
        clean=None if u.clean is None else u.clean[4 * lo:4 * hi], uid=u.uid)


def pad_stack(arrays: Sequence[np.ndarray], length: Optional[int] = None) -> np.ndarray:
    """Zero-pad ``[L_i, ...]`` arrays along axis 0 and stack them."""
    length = length or max(a.shape[0] for a in arrays)
    out = np.zeros((len(arrays), length) + arrays[0].shape[1:])
    for i, a in enumerate(arrays):
        out[i, :a.shape[0]] = a
    return out


@dataclass
class AVBatch:
    video: np.ndarray
    audio: np.ndarray
    lengths: np.ndarray
    clean: Optional[np.ndarray] = None


def collate(utts: Sequence[Utterance]) -> AVBatch:
    if not utts:
        raise ContractError("cannot collate an empty batch")
    lengths = np.array([u.n_frames for u in utts])
    T = int(lengths.max())
    clean = None
    if all(u.clean is not None for u in utts):
        clean = pad_stack([u.clean for u in utts], 4 * T)
    return AVBatch(pad_stack([u.video for u in utts], T), pad_stack([u.audio for u in utts], 4 * T),
                   lengths, clean)
