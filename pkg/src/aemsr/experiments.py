"""Desk-scale experiments on the synthetic corpus.

Each experiment is a pure function of its configuration (and seed) and
returns plain numbers, so the acceptance tests and the command line share
one implementation.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .ae import AEConfig, AEModel
from .corpus import CorpusConfig, RawSample, generate_corpus
from .frontend import P3DConfig
from .metrics import corpus_wer
from .msr import MSRConfig, MSRModel, decode_batch
from .signal import NoiseSpec
from .training import (NoisyStream, extract_features, make_utterances, mean_energy_error, train_ae,
                       train_frontend, train_msr, word_crops)

log = logging.getLogger(__name__)

INPUT_SCALE = 0.2  # synthetic mel magnitudes peak near 10; this brings them to O(1)


@dataclass
class Scale:
    """Step counts and sizes shared by the desk experiments."""

    frontend_steps: int = 60
    frontend_lr: float = 3e-3
    ae_steps: int = 300
    ae_lr: float = 1e-3
    msr_steps: int = 1500
    msr_lr: float = 1e-3
    batch: int = 16


def visual_features(samples: Sequence[RawSample], vocabulary: Sequence[str], seed: int,
                    steps: int, lr: float, train: Optional[Sequence[RawSample]] = None):
    """Train a desk front-end on word crops of ``train`` and return features for ``samples``."""
    rng = np.random.default_rng([seed, 1])
    clf = train_frontend(train if train is not None else samples, vocabulary, P3DConfig.desk(),
                         steps, rng, lr=lr)
    return clf, extract_features(clf.frontend, samples)


@dataclass
class DenoisingResult:
    unit: str
    noisy: float
    enhanced: float
    seconds: float
    losses: List[float] = field(default_factory=list)

    @property
    def relative_gain(self) -> float:
        return (self.noisy - self.enhanced) / self.noisy


def denoising_experiment(units: Sequence[str] = ("tcn", "1drn"), seed: int = 0, n_train: int = 50,
                         n_test: int = 10, snr: float = 0.0, scale: Scale = Scale()) -> List[DenoisingResult]:
    """Train each AE kind on ``n_train`` clips with babble at ``snr``; ΔM on ``n_test`` held-out clips."""
    cfg = CorpusConfig(n_sentences=n_train + n_test, seed=seed)
    samples, babble = generate_corpus(cfg)
    train, test = samples[:n_train], samples[n_train:]
    _, feats = visual_features(samples, cfg.words, seed, scale.frontend_steps, scale.frontend_lr, train)
    test_utts = make_utterances(test, feats, babble, snr, seed=seed + 1000)
    noisy = mean_energy_error(None, test_utts)
    results = []
    for unit in units:
        t0 = time.time()
        rng = np.random.default_rng([seed, 2])
        model = AEModel(AEConfig.desk(unit, input_scale=INPUT_SCALE), rng)
        stream = NoisyStream(train, feats, babble, NoiseSpec(p_n=1.0, snr_levels=(snr,)), rng)
        tl = train_ae(model, stream, scale.ae_steps, scale.ae_lr, scale.batch)
        enhanced = mean_energy_error(model, test_utts)
        results.append(DenoisingResult(unit, noisy, enhanced, time.time() - t0, tl.losses))
    return results


@dataclass
class OverfitResult:
    wer: float
    steps: int
    references: List[str]
    hypotheses: List[str]
    losses: List[float]


def overfit_experiment(seed: int = 0, n_sentences: int = 20, max_steps: int = 2000,
                       check_every: int = 100, target_wer: float = 0.05, lr: float = 2e-3,
                       label_smoothing: float = 0.0, batch: int = 20,
                       frontend_steps: int = 30) -> OverfitResult:
    """Memorize ``n_sentences`` clean sentences in mode AV; stop once train WER <= ``target_wer``."""
    cfg = CorpusConfig(n_sentences=n_sentences, seed=seed, n_babble=0)
    samples, _ = generate_corpus(cfg)
    _, feats = visual_features(samples, cfg.words, seed, frontend_steps, 3e-3)
    utts = make_utterances(samples, feats)
    rng = np.random.default_rng([seed, 3])
    model = MSRModel(MSRConfig.desk(input_scale=INPUT_SCALE, label_smoothing=label_smoothing), rng)
    stream = NoisyStream(samples, feats, [], NoiseSpec(p_n=0.0), rng)
    refs = [u.transcript for u in utts]
    losses: List[float] = []
    steps, hyps, wer = 0, [], 1.0
    from .autograd.optim import Adam
    from .msr import msr_train_step
    opt = Adam(model.named_parameters(), lr=lr)
    while steps < max_steps:
        for _ in range(check_every):
            losses.append(msr_train_step(stream.draw(batch), model, opt, cfg.max_words, rng))
        steps += check_every
        hyps = decode_batch("AV", utts, model)
        wer = corpus_wer(refs, hyps)
        if wer <= target_wer:
            break
    return OverfitResult(wer, steps, refs, hyps, losses)


@dataclass
class ModeOrderingResult:
    seed: int
    wer: Dict[str, float]
    energy_noisy: float
    energy_enhanced: float
    seconds: float


def mode_ordering_experiment(seed: int = 0, n_train: int = 150, n_test: int = 100, snr: float = 0.0,
                             modes: Sequence[str] = ("A", "AV", "VA", "VAV"),
                             scale: Scale = Scale(), p_noise: float = 0.5,
                             p_enhance: float = 0.5) -> ModeOrderingResult:
    """Train front-end, AE and MSR on one corpus; WER per mode on held-out sentences at ``snr``.

    All modes share one recognizer.  It trains on a stream where babble is
    mixed in with probability ``p_noise`` and the frozen AE's output replaces
    the raw magnitudes with probability ``p_enhance``.  At test time A/AV read
    the noisy magnitudes and VA/VAV the AE output.
    """
    t0 = time.time()
    cfg = CorpusConfig(n_sentences=n_train + n_test, seed=seed)
    samples, babble = generate_corpus(cfg)
    train, test = samples[:n_train], samples[n_train:]
    _, feats = visual_features(samples, cfg.words, seed, scale.frontend_steps, scale.frontend_lr, train)

    rng = np.random.default_rng([seed, 2])
    ae = AEModel(AEConfig.desk("tcn", input_scale=INPUT_SCALE), rng)
    train_ae(ae, NoisyStream(train, feats, babble, NoiseSpec(p_n=1.0), rng),
             scale.ae_steps, scale.ae_lr, scale.batch)
    ae.freeze()

    rng = np.random.default_rng([seed, 3])
    msr = MSRModel(MSRConfig.desk(input_scale=INPUT_SCALE, modality_dropout=0.2), rng)
    stream = NoisyStream(train, feats, babble, NoiseSpec(p_n=p_noise), rng, ae, p_enhance)
    train_msr(msr, stream, scale.msr_steps, scale.msr_lr, scale.batch, cfg.max_words)

    test_utts = make_utterances(test, feats, babble, snr, seed=seed + 1000)
    wer = {}
    refs = [u.transcript for u in test_utts]
    for mode in modes:
        hyps = []
        for i in range(0, len(test_utts), 32):
            hyps += decode_batch(mode, test_utts[i:i + 32], msr, ae)
        wer[mode] = corpus_wer(refs, hyps)
    return ModeOrderingResult(seed, wer, mean_energy_error(None, test_utts),
                              mean_energy_error(ae, test_utts), time.time() - t0)
