"""Training phases and evaluation over the synthetic corpus.

Phases follow the usual order: the visual front-end is trained on isolated
words and then frozen so per-frame features can be cached; the enhancement
network and the recognizer are trained independently; finally the recognizer
is fine-tuned on enhanced audio while the enhancement network stays frozen.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .ae import AEModel, ae_train_step, energy_error
from .autograd import no_grad, ops
from .autograd.optim import Adam, PlateauHalving
from .corpus import RawSample
from .data import Utterance, collate
from .errors import ConfigurationError
from .frontend import P3DConfig, VisualFrontend, WordClassifier
from .metrics import corpus_wer
from .msr import MODES, MSRModel, decode_batch, msr_train_step
from .signal import NoiseSpec, Waveform, mix_at_snr, stft_mel, synth_babble

log = logging.getLogger(__name__)


# ------------------------------------------------------------------ noise
def noise_rng(seed: int, index: int, snr) -> np.random.Generator:
    """Generator for one (sample, SNR) noise draw, independent of iteration order."""
    code = 1000 if snr is None else int(round(float(snr) * 10)) + 500
    return np.random.default_rng([seed, index, code])


def noisy_mel(sample: RawSample, babble: Sequence[Waveform], snr: Optional[float],
              rng: np.random.Generator, n_sources: int = 30) -> np.ndarray:
    """Mel magnitudes of ``sample`` with babble at ``snr`` dB (clean when ``snr`` is None)."""
    w = sample.waveform
    if snr is not None:
        noise = synth_babble(babble, len(w), rng, min(n_sources, len(babble)))
        w = mix_at_snr(w, noise, snr)
    return stft_mel(w, sample.n_frames)


# ------------------------------------------------------------------ front-end
def word_crops(samples: Sequence[RawSample], vocabulary: Sequence[str], margin: int = 1):
    """Isolated word clips (word span plus ``margin`` frames each side) with class labels."""
    clips, labels = [], []
    index = {w: i for i, w in enumerate(vocabulary)}
    for s in samples:
        for (a, b), w in zip(s.spans, s.words):
            lo, hi = max(0, a - margin), min(s.n_frames, b + margin)
            clip = s.frames[lo:hi]
            want = (b - a) + 2 * margin
            if clip.shape[0] < want:
                clip = np.concatenate([clip, np.repeat(clip[-1:], want - clip.shape[0], axis=0)])
            clips.append(clip)
            labels.append(index[w])
    return np.stack(clips), np.array(labels)


def train_frontend(samples: Sequence[RawSample], vocabulary: Sequence[str], cfg: P3DConfig,
                   steps: int, rng: np.random.Generator, lr: float = 1e-3, batch: int = 16,
                   on_step: Optional[Callable[[int, float], None]] = None) -> WordClassifier:
    """Word classification on isolated word crops; returns the classifier (front-end inside)."""
    clips, labels = word_crops(samples, vocabulary)
    model = WordClassifier(VisualFrontend(cfg, rng), len(vocabulary), rng)
    opt = Adam(model.named_parameters(), lr=lr)
    model.train()
    for step in range(steps):
        idx = rng.choice(len(labels), size=min(batch, len(labels)), replace=False)
        opt.zero_grad()
        loss = ops.cross_entropy(model(clips[idx]), labels[idx])
        loss.backward()
        opt.step()
        if on_step:
            on_step(step, loss.item())
    return model


def classify_words(model: WordClassifier, clips: np.ndarray, batch: int = 32) -> np.ndarray:
    model.eval()
    preds = []
    with no_grad():
        for i in range(0, len(clips), batch):
            preds.append(model(clips[i:i + batch]).data.argmax(axis=1))
    return np.concatenate(preds)


def extract_features(frontend: VisualFrontend, samples: Sequence[RawSample]) -> Dict[str, np.ndarray]:
    """Per-clip ``[T, width]`` features from the frozen front-end (eval mode)."""
    frontend.eval()
    feats = {}
    with no_grad():
        for s in samples:
            feats[s.uid] = frontend(s.frames[None]).data[0]
    return feats


# ------------------------------------------------------------------ utterances
def make_utterances(samples: Sequence[RawSample], feats: Dict[str, np.ndarray],
                    babble: Sequence[Waveform] = (), snr: Optional[float] = None,
                    seed: int = 0, n_sources: int = 30) -> List[Utterance]:
    """Utterances whose ``audio`` is mixed at ``snr`` (deterministic per sample) and ``clean`` is clean."""
    out = []
    for i, s in enumerate(samples):
        clean = stft_mel(s.waveform, s.n_frames)
        audio = clean if snr is None else noisy_mel(s, babble, snr, noise_rng(seed, i, snr), n_sources)
        out.append(Utterance(feats[s.uid], audio, s.transcript, list(s.spans), clean, s.uid))
    return out


class NoisyStream:
    """Draws fresh training batches, re-mixing babble on every draw.

    With an ``enhancer`` (a frozen AE), each drawn utterance is replaced by its
    enhanced magnitudes with probability ``p_enhance``, so a recognizer
    trained on the stream sees both raw and enhanced audio.
    """

    def __init__(self, samples: Sequence[RawSample], feats: Dict[str, np.ndarray],
                 babble: Sequence[Waveform], noise: NoiseSpec, rng: np.random.Generator,
                 enhancer: Optional[AEModel] = None, p_enhance: float = 0.0):
        if not samples:
            raise ConfigurationError("no training samples")
        if not 0.0 <= p_enhance <= 1.0:
            raise ConfigurationError(f"p_enhance must lie in [0, 1], got {p_enhance}")
        if p_enhance > 0 and enhancer is None:
            raise ConfigurationError("p_enhance > 0 needs an enhancer")
        self.samples, self.babble, self.noise, self.rng = list(samples), list(babble), noise, rng
        self.feats = feats
        self.enhancer, self.p_enhance = enhancer, p_enhance
        self.clean = [stft_mel(s.waveform, s.n_frames) for s in self.samples]

    def draw(self, batch: int) -> List[Utterance]:
        idx = self.rng.choice(len(self.samples), size=min(batch, len(self.samples)), replace=False)
        out = []
        for i in idx:
            s = self.samples[int(i)]
            audio = self.clean[int(i)]
            if self.babble and self.rng.random() < self.noise.p_n:
                snr = float(self.rng.choice(self.noise.snr_levels))
                audio = noisy_mel(s, self.babble, snr, self.rng, self.noise.n_sources)
            out.append(Utterance(self.feats[s.uid], audio, s.transcript, list(s.spans),
                                 self.clean[int(i)], s.uid))
        if self.enhancer is not None and self.p_enhance > 0:
            pick = [k for k in range(len(out)) if self.rng.random() < self.p_enhance]
            if pick:
                enhanced = enhance_utterances(self.enhancer, [out[k] for k in pick])
                for k, u in zip(pick, enhanced):
                    out[k] = u
        return out


# ------------------------------------------------------------------ AE / MSR loops
@dataclass
class TrainLog:
    losses: List[float] = field(default_factory=list)
    lrs: List[float] = field(default_factory=list)

    def smoothed(self, window: int = 50) -> np.ndarray:
        x = np.asarray(self.losses)
        n = len(x) // window
        return x[:n * window].reshape(n, window).mean(axis=1)


def _schedule_tick(opt: Adam, sched: Optional[PlateauHalving], log_: TrainLog, window: int) -> None:
    if sched is not None and len(log_.losses) % window == 0:
        opt.lr = sched.report(float(np.mean(log_.losses[-window:])))
    log_.lrs.append(opt.lr)


def train_ae(model: AEModel, stream: NoisyStream, steps: int, lr: float, batch: int,
             schedule_window: int = 50, floor: float = 5e-6) -> TrainLog:
    opt = Adam(model.named_parameters(), lr=lr)
    sched = PlateauHalving(lr=lr, floor=min(floor, lr))
    tl = TrainLog()
    for _ in range(steps):
        b = collate(stream.draw(batch))
        tl.losses.append(ae_train_step((b.video, b.audio, b.clean, b.lengths), model, opt))
        _schedule_tick(opt, sched, tl, schedule_window)
    return tl


def curriculum_length(step: int, steps: int, max_words: int, stages: Optional[int] = None) -> int:
    """Words allowed at ``step``: starts at one and grows to ``max_words`` in equal stages."""
    stages = stages or max_words
    stage = min(stages - 1, step * stages // max(steps, 1))
    return 1 + stage * (max_words - 1) // max(stages - 1, 1)


def train_msr(model: MSRModel, stream: NoisyStream, steps: int, lr: float, batch: int,
              max_words: int, ae_model: Optional[AEModel] = None, curriculum: bool = True,
              use_audio: bool = True, use_video: bool = True, schedule_window: int = 50,
              floor: float = 5e-6) -> TrainLog:
    """Teacher-forced training; with ``ae_model`` the audio is enhanced by the frozen AE first."""
    opt = Adam(model.named_parameters(), lr=lr)
    sched = PlateauHalving(lr=lr, floor=min(floor, lr))
    tl = TrainLog()
    if ae_model is not None:
        ae_model.freeze()
        ae_model.eval()
    k_prev = None
    for step in range(steps):
        utts = stream.draw(batch)
        if ae_model is not None:
            utts = enhance_utterances(ae_model, utts)
        k = curriculum_length(step, steps, max_words) if curriculum else max_words
        if k != k_prev:
            # losses of different curriculum stages are not comparable
            sched.reset()
            k_prev = k
        tl.losses.append(msr_train_step(utts, model, opt, k, stream.rng, use_audio, use_video))
        _schedule_tick(opt, sched, tl, schedule_window)
    return tl


def enhance_utterances(ae_model: AEModel, utts: Sequence[Utterance]) -> List[Utterance]:
    """Replace each utterance's audio by the AE's enhanced magnitudes."""
    b = collate(utts)
    ae_model.eval()
    with no_grad():
        _, enh = ae_model(b.video, b.audio, b.lengths)
    return [u.with_audio(enh.data[i, :4 * u.n_frames]) for i, u in enumerate(utts)]


# ------------------------------------------------------------------ evaluation
def mean_energy_error(ae_model: Optional[AEModel], utts: Sequence[Utterance]) -> float:
    """Mean ΔM of the enhanced (or, without a model, the noisy) magnitudes against clean."""
    if ae_model is not None:
        utts = enhance_utterances(ae_model, utts)
    return float(np.mean([energy_error(u.audio, u.clean) for u in utts]))


def evaluate_modes(msr_model: MSRModel, utts: Sequence[Utterance], modes: Sequence[str],
                   ae_model: Optional[AEModel] = None, batch: int = 32,
                   max_len: int = 64) -> Dict[str, float]:
    """Corpus WER per mode over utterances whose ``audio`` is the noisy input."""
    results = {}
    refs = [u.transcript for u in utts]
    for mode in modes:
        if mode not in MODES:
            raise ConfigurationError(f"unknown mode {mode!r}")
        hyps = []
        for i in range(0, len(utts), batch):
            hyps += decode_batch(mode, utts[i:i + batch], msr_model, ae_model, max_len)
        results[mode] = corpus_wer(refs, hyps)
    return results
