"""Multi-modality sequence-to-sequence character recognizer.

Audio path: 1x1 projection, a stride-2 1D-ResNet block, one EleAtt-GRU
encoder layer, another stride-2 block and a second encoder layer, so ``4T``
magnitude frames end up as ``T`` encoder steps.  Video features go through a
two-layer EleAtt-GRU encoder.  Each modality has its own decoder whose input at
every step is the previous-token embedding concatenated with that modality's
final encoder state (which is also the decoder's initial state).  The two
decoder outputs are concatenated and fed to a fusion decoder whose output is
projected to the 41 characters.  An absent modality contributes zeros.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autograd import Conv1d, Embedding, Linear, Module, Tensor, no_grad, ops
from .autograd.optim import Adam
from .autograd.tensor import as_tensor
from .data import Utterance, collate, crop_words
from .eleatt_gru import EleAttGRUStack, cell_step
from .errors import (AlignmentError, ConfigurationError, ContractError, SchedulingError,
                     TrainingDivergenceError)
from .temporal import ResNet1DBlock

MODES = ("A", "V", "AV", "VA", "VAV")


class Vocab:
    """41 output symbols: four specials, 26 letters, 10 digits and the apostrophe."""

    SPECIALS = ("[PAD]", "[BOS]", "[EOS]", "[SPACE]")
    PAD, BOS, EOS, SPACE = 0, 1, 2, 3

    def __init__(self):
        chars = "abcdefghijklmnopqrstuvwxyz0123456789'"
        self.symbols: Tuple[str, ...] = self.SPECIALS + tuple(chars)
        self.index: Dict[str, int] = {s: i for i, s in enumerate(self.symbols)}

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> List[int]:
        """Lower-cased characters to ids; spaces become ``[SPACE]``."""
        ids = []
        for ch in " ".join(text.lower().split()):
            if ch == " ":
                ids.append(self.SPACE)
            elif ch in self.index and len(ch) == 1:
                ids.append(self.index[ch])
            else:
                raise ContractError(f"character {ch!r} is not in the vocabulary")
        return ids

    def decode(self, ids: Sequence[int]) -> str:
        """Ids to text, stopping at ``[EOS]`` and skipping ``[PAD]``/``[BOS]``."""
        out = []
        for i in ids:
            i = int(i)
            if i == self.EOS:
                break
            if i in (self.PAD, self.BOS):
                continue
            out.append(" " if i == self.SPACE else self.symbols[i])
        return " ".join("".join(out).split())


VOCAB = Vocab()


@dataclass
class MSRConfig:
    n_mels: int = 80
    video_in: int = 512
    audio_channels: int = 256
    units: int = 128
    embed_dim: int = 64
    label_smoothing: float = 0.1
    input_scale: float = 1.0
    modality_dropout: float = 0.0

    @classmethod
    def desk(cls, video_in: int = 64, **overrides) -> "MSRConfig":
        params = dict(video_in=video_in, audio_channels=64, units=64, embed_dim=16)
        params.update(overrides)
        return cls(**params)

    def to_dict(self) -> dict:
        return asdict(self)


def teacher_forcing(targets: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    """Decoder inputs ``[BOS] + ids`` and outputs ``ids + [EOS]``, PAD-filled to a common length."""
    L = max(len(t) for t in targets) + 1
    dec_in = np.full((len(targets), L), Vocab.PAD, dtype=np.int64)
    dec_out = np.full((len(targets), L), Vocab.PAD, dtype=np.int64)
    for i, t in enumerate(targets):
        dec_in[i, 0] = Vocab.BOS
        dec_in[i, 1:len(t) + 1] = t
        dec_out[i, :len(t)] = t
        dec_out[i, len(t)] = Vocab.EOS
    return dec_in, dec_out


class MSRModel(Module):
    def __init__(self, cfg: MSRConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        C, N, E = cfg.audio_channels, cfg.units, cfg.embed_dim
        self.audio_fc0 = Conv1d(cfg.n_mels, C, 1, rng, padding=0)
        self.audio_down1 = ResNet1DBlock(C, rng, kernel=5, stride=2)
        self.audio_encoder1 = EleAttGRUStack(C, N, 1, rng)
        self.audio_down2 = ResNet1DBlock(N, rng, kernel=5, stride=2)
        self.audio_encoder2 = EleAttGRUStack(N, N, 1, rng)
        self.video_encoder = EleAttGRUStack(cfg.video_in, N, 2, rng)
        self.embed = Embedding(len(VOCAB), E, rng)
        self.audio_decoder = EleAttGRUStack(E + N, N, 1, rng)
        self.video_decoder = EleAttGRUStack(E + N, N, 1, rng)
        self.fusion_decoder = EleAttGRUStack(2 * N, N, 1, rng)
        self.out = Linear(N, len(VOCAB), rng)
        self._rng = rng

    # ------------------------------------------------------------ encoders
    def audio_path(self, audio, lengths: Optional[np.ndarray] = None) -> Tensor:
        """``[B, 4T, F]`` magnitudes to ``[B, T, N]`` encoder states."""
        a = as_tensor(audio)
        if a.shape[1] % 4:
            raise AlignmentError(f"audio length {a.shape[1]} is not a multiple of 4")
        if self.cfg.input_scale != 1.0:
            a = ops.mul(a, self.cfg.input_scale)
        # padded frames are zeroed before every convolution so a batched
        # utterance sees the same zero padding as when processed alone
        h = ops.transpose(a, (0, 2, 1))
        h = self.audio_fc0(h)
        if lengths is not None:
            h = ops.length_mask(h, 4 * lengths, axis=2)
        h = self.audio_down1(h)
        l2 = None if lengths is None else 2 * lengths
        h = self.audio_encoder1(ops.transpose(h, (0, 2, 1)), lengths=l2)
        if lengths is not None:
            h = ops.length_mask(h, l2, axis=1)
        h = self.audio_down2(ops.transpose(h, (0, 2, 1)))
        return self.audio_encoder2(ops.transpose(h, (0, 2, 1)), lengths=lengths)

    def encode(self, audio, video, lengths=None):
        """Final encoder states ``(ctx_a, ctx_v)``; ``None`` for an absent modality."""
        if audio is None and video is None:
            raise ContractError("at least one modality must be present")
        lengths = None if lengths is None else np.asarray(lengths)
        ctx_a = ctx_v = None
        T = None
        if audio is not None:
            enc = self.audio_path(audio, lengths)
            T = enc.shape[1]
            ctx_a = ops.getitem(enc, (slice(None), -1))
        if video is not None:
            video = as_tensor(video)
            if T is not None and video.shape[1] != T:
                raise AlignmentError(f"audio path gives {T} steps but video has {video.shape[1]}")
            enc = self.video_encoder(video, lengths=lengths)
            ctx_v = ops.getitem(enc, (slice(None), -1))
        return ctx_a, ctx_v

    # ------------------------------------------------------------ decoders
    def _presence(self, B: int, ctx_a, ctx_v, presence) -> np.ndarray:
        p = np.ones((B, 2)) if presence is None else np.asarray(presence, dtype=np.float64)
        if ctx_a is None:
            p[:, 0] = 0.0
        if ctx_v is None:
            p[:, 1] = 0.0
        return p

    def decode_teacher(self, ctx_a, ctx_v, dec_in: np.ndarray, presence=None) -> Tensor:
        B, L = dec_in.shape
        N = self.cfg.units
        p = self._presence(B, ctx_a, ctx_v, presence)
        emb = self.embed(dec_in)
        outs = []
        for ctx, decoder, col in ((ctx_a, self.audio_decoder, 0), (ctx_v, self.video_decoder, 1)):
            if ctx is None:
                outs.append(Tensor._wrap(np.zeros((B, L, N))))
                continue
            rep = ops.repeat(ops.reshape(ctx, (B, 1, N)), L, axis=1)
            h = decoder(ops.concat([emb, rep], axis=2), h0=[ctx])
            outs.append(ops.mul(h, p[:, col].reshape(B, 1, 1)))
        fused = self.fusion_decoder(ops.concat(outs, axis=2))
        return self.out(fused)

    def forward(self, audio, video, dec_in, lengths=None, presence=None) -> Tensor:
        """Teacher-forced logits ``[B, L, 41]``."""
        ctx_a, ctx_v = self.encode(audio, video, lengths)
        return self.decode_teacher(ctx_a, ctx_v, np.asarray(dec_in, dtype=np.int64), presence)

    def decode_greedy(self, audio, video, lengths=None, max_len: int = 64,
                      return_logits: bool = False):
        """Free-running argmax decoding; returns one id list per sample (without EOS)."""
        with no_grad():
            ctx_a, ctx_v = self.encode(audio, video, lengths)
            ref = ctx_a if ctx_a is not None else ctx_v
            B, N = ref.shape
            p = self._presence(B, ctx_a, ctx_v, None)
            h_a, h_v = ctx_a, ctx_v
            h_f = np.zeros((B, N))
            tok = np.full(B, Vocab.BOS, dtype=np.int64)
            done = np.zeros(B, dtype=bool)
            seqs: List[List[int]] = [[] for _ in range(B)]
            all_logits = []
            for _ in range(max_len):
                emb = self.embed(tok)
                outs = []
                if h_a is not None:
                    h_a = cell_step(self.audio_decoder.layers[0], ops.concat([emb, ctx_a], axis=1), h_a)
                    outs.append(h_a.data * p[:, :1])
                else:
                    outs.append(np.zeros((B, N)))
                if h_v is not None:
                    h_v = cell_step(self.video_decoder.layers[0], ops.concat([emb, ctx_v], axis=1), h_v)
                    outs.append(h_v.data * p[:, 1:])
                else:
                    outs.append(np.zeros((B, N)))
                h_f = cell_step(self.fusion_decoder.layers[0], np.concatenate(outs, axis=1), h_f).data
                logits = self.out(Tensor._wrap(h_f)).data
                all_logits.append(logits)
                tok = logits.argmax(axis=1)
                for b in range(B):
                    if done[b]:
                        continue
                    if tok[b] == Vocab.EOS:
                        done[b] = True
                    else:
                        seqs[b].append(int(tok[b]))
                if done.all():
                    break
        if return_logits:
            return seqs, np.stack(all_logits, axis=1)
        return seqs


# ------------------------------------------------------------------ API
def _batched(x):
    if x is None:
        return None
    x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    return x[None]


def msr_forward(a, v, targets: Optional[Sequence[int]], model: MSRModel, max_len: int = 64) -> Tensor:
    """Logits ``[L_out, 41]`` for one utterance.

    With ``targets`` the decoder is teacher-forced (``L_out = len(targets) + 1``);
    without, it runs free until ``[EOS]`` or ``max_len``.
    """
    if a is None and v is None:
        raise ContractError("at least one modality must be present")
    if targets is None:
        _, logits = model.decode_greedy(_batched(a), _batched(v), max_len=max_len, return_logits=True)
        return Tensor._wrap(logits[0])
    dec_in, _ = teacher_forcing([list(targets)])
    a_in = None if a is None else ops.reshape(as_tensor(a), (1,) + as_tensor(a).shape)
    v_in = None if v is None else ops.reshape(as_tensor(v), (1,) + as_tensor(v).shape)
    logits = model(a_in, v_in, dec_in)
    return ops.reshape(logits, logits.shape[1:])


def msr_loss(model: MSRModel, audio, video, targets: Sequence[Sequence[int]], lengths=None,
             presence=None, label_smoothing: Optional[float] = None) -> Tensor:
    """Teacher-forced label-smoothed cross entropy over non-PAD positions."""
    eps = model.cfg.label_smoothing if label_smoothing is None else label_smoothing
    dec_in, dec_out = teacher_forcing(targets)
    logits = model(audio, video, dec_in, lengths, presence)
    B, L, V = logits.shape
    return ops.cross_entropy(ops.reshape(logits, (B * L, V)), dec_out.reshape(-1), eps, Vocab.PAD)


def curriculum_batch(batch: Sequence[Utterance], curriculum_len: int,
                     rng: Optional[np.random.Generator] = None) -> List[Utterance]:
    """Limit every utterance to at most ``curriculum_len`` words.

    Utterances with word spans are cropped to a window of consecutive words
    (random start when ``rng`` is given); those without spans are dropped when
    too long.  An empty result raises :class:`SchedulingError`.
    """
    if curriculum_len < 1:
        raise SchedulingError(f"curriculum length must be at least 1, got {curriculum_len}")
    kept = []
    for u in batch:
        n = len(u.words)
        if n == 0:
            continue
        if n <= curriculum_len:
            kept.append(u)
        elif u.spans is not None:
            start = int(rng.integers(0, n - curriculum_len + 1)) if rng is not None else 0
            kept.append(crop_words(u, start, curriculum_len))
    if not kept:
        raise SchedulingError(f"no utterance fits a curriculum of {curriculum_len} words")
    return kept


def sample_presence(B: int, p_drop: float, rng: np.random.Generator) -> np.ndarray:
    """Per-sample modality keep flags; with prob ``p_drop`` each one loses audio or video."""
    presence = np.ones((B, 2))
    drop = rng.random(B) < p_drop
    which = rng.integers(0, 2, size=B)
    presence[drop, which[drop]] = 0.0
    return presence


def msr_train_step(batch: Sequence[Utterance], model: MSRModel, optimizer: Adam,
                   curriculum_len: int, rng: Optional[np.random.Generator] = None,
                   use_audio: bool = True, use_video: bool = True) -> float:
    """One teacher-forced Adam step; returns the loss."""
    utts = curriculum_batch(batch, curriculum_len, rng)
    b = collate(utts)
    targets = [VOCAB.encode(u.transcript) for u in utts]
    presence = None
    if model.cfg.modality_dropout > 0 and use_audio and use_video:
        presence = sample_presence(len(utts), model.cfg.modality_dropout, rng or model._rng)
    model.train()
    optimizer.zero_grad()
    loss = msr_loss(model, b.audio if use_audio else None, b.video if use_video else None,
                    targets, b.lengths, presence)
    value = loss.item()
    if not np.isfinite(value):
        raise TrainingDivergenceError(f"MSR loss became {value}; lr={optimizer.lr}")
    loss.backward()
    optimizer.step()
    return value


def greedy_decode(a, v, model: MSRModel, max_len: int = 64) -> List[int]:
    """Argmax decoding of one utterance; the result never exceeds ``max_len`` ids."""
    if a is None and v is None:
        raise ContractError("at least one modality must be present")
    return model.decode_greedy(_batched(a), _batched(v), max_len=max_len)[0]


# ------------------------------------------------------------------ modes
def mode_inputs(mode: str, video, noisy, ae_model=None, lengths=None):
    """Return the ``(audio, video)`` pair the recognizer sees in ``mode``.

    ``video`` and ``noisy`` are batched ``[B, T, Cv]`` / ``[B, 4T, F]`` arrays.
    """
    if mode not in MODES:
        raise ConfigurationError(f"mode must be one of {MODES}, got {mode!r}")
    if mode in ("VA", "VAV"):
        if ae_model is None:
            raise ConfigurationError(f"mode {mode} needs an enhancement model")
        ae_model.eval()
        with no_grad():
            _, enhanced = ae_model(video, noisy, lengths)
        audio = enhanced.data
        return audio, (video if mode == "VAV" else None)
    if mode == "A":
        return noisy, None
    if mode == "V":
        return None, video
    return noisy, video


def decode_batch(mode: str, utts: Sequence[Utterance], msr_model: MSRModel, ae_model=None,
                 max_len: int = 64) -> List[str]:
    """Transcripts for a batch of utterances whose ``audio`` holds the (noisy) magnitudes."""
    b = collate(utts)
    audio, video = mode_inputs(mode, b.video, b.audio, ae_model, b.lengths)
    msr_model.eval()
    seqs = msr_model.decode_greedy(audio, video, b.lengths, max_len=max_len)
    return [VOCAB.decode(s) for s in seqs]


def run_mode(mode: str, sample: Utterance, ae_model, msr_model: MSRModel, max_len: int = 64) -> str:
    return decode_batch(mode, [sample], msr_model, ae_model, max_len)[0]
