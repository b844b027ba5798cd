"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line; the lines are printed as they happen
(visible with ``-s``) and repeated in the terminal summary by ``conftest.py``.
Criteria 7 to 9 train real models and take most of the runtime.
"""

import itertools
import time

import numpy as np
from hypothesis import given, settings, strategies as st

from aemsr.ae import AEConfig, AEModel, energy_error
from aemsr.autograd import Tensor, check_gradients, no_grad
from aemsr.autograd.checkpoint import dumps, loads
from aemsr.cli import main
from aemsr.corpus import CorpusConfig, generate_corpus
from aemsr.eleatt_gru import EleAttGRULayer
from aemsr.experiments import denoising_experiment, mode_ordering_experiment, overfit_experiment
from aemsr.metrics import wer
from aemsr.msr import MSRConfig, MSRModel, teacher_forcing
from aemsr.signal import stft_mel
from aemsr.temporal import (TCNBlock, TemporalStream, audio_stream, audio_stream_spec, receptive_field,
                            video_stream, video_stream_spec)

from gradcases import ALL_CASES
from oracles import all_sentences, brute_force_wer, gru_weights, vanilla_gru

RESULTS = []


def record(number, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} [{number:2d}] {title}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


# ------------------------------------------------------------------ 1
def test_01_gradient_suite():
    t0 = time.time()
    worst, where = 0.0, None
    for name, build in ALL_CASES.items():
        for seed in range(20):
            fn, tensors = build(seed)
            errs = check_gradients(fn, tensors, max_entries=4, rng=np.random.default_rng(seed))
            err = max(errs.values())
            if err > worst:
                worst, where = err, f"{name} seed {seed}"
    seconds = time.time() - t0
    record(1, "gradient suite", worst < 1e-4 and seconds < 120,
           f"{len(ALL_CASES)} cases x 20 seeds, worst rel err {worst:.2e} ({where}), {seconds:.0f} s")


# ------------------------------------------------------------------ 2
def test_02_eleatt_gru_reduces_to_gru():
    rng = np.random.default_rng(2024)
    mismatches = 0
    for _ in range(100):
        D, N, L = (int(v) for v in rng.integers(1, 9, size=3))
        layer = EleAttGRULayer(D, N, rng)
        for p in layer.parameters():
            p.data += 0.3 * rng.standard_normal(p.shape)
        layer.force_attention_ones = True
        X = rng.standard_normal((1, L, D))
        h0 = rng.standard_normal((1, N))
        if layer(X, h0).data.tobytes() != vanilla_gru(X, h0, *gru_weights(layer)).tobytes():
            mismatches += 1
    record(2, "EleAtt-GRU with unit attention equals GRU", mismatches == 0,
           f"{100 - mismatches}/100 sequences bit-identical")


# ------------------------------------------------------------------ 3
def _tcn_stack(rng, channels=4):
    stack = [TCNBlock(channels, 2 ** i, rng, kernel=3) for i in range(3)]
    for block in stack:
        block.eval()
        for p in block.parameters():
            p.data += 0.2 * rng.standard_normal(p.shape)
    return stack


def _run(stack, x):
    h = Tensor(x)
    with no_grad():
        for block in stack:
            h = block(h)
    return h.data


def test_03_tcn_causality_and_receptive_field():
    rng = np.random.default_rng(3)
    leaks = 0
    for _ in range(20):
        stack = _tcn_stack(rng)
        x = rng.standard_normal((2, 4, 40))
        t = int(rng.integers(1, 40))
        y = x.copy()
        y[:, :, t:] += rng.standard_normal((2, 4, 40 - t))
        if _run(stack, x)[:, :, :t].tobytes() != _run(stack, y)[:, :, :t].tobytes():
            leaks += 1
    stack = _tcn_stack(rng)
    base = np.zeros((1, 4, 80))
    probe = base.copy()
    probe[0, :, 10] = 1.0
    diff = np.abs(_run(stack, probe) - _run(stack, base)).max(axis=1)[0]
    support = np.nonzero(diff)[0]
    last_lag = int(support.max()) - 10
    ok = leaks == 0 and receptive_field(3, [1, 2, 4]) == 29 and support.min() >= 10 and last_lag <= 28
    record(3, "TCN causality and receptive field", ok,
           f"{20 - leaks}/20 perturbations leak nothing, impulse support lags 0..{last_lag}")


# ------------------------------------------------------------------ 4
def test_04_alignment_contract():
    samples, _ = generate_corpus(CorpusConfig(n_sentences=20, n_babble=0, seed=4))
    rng = np.random.default_rng(4)
    streams = {unit: TemporalStream(video_stream_spec(unit, width=8, out_width=5), 6, rng)
               for unit in ("tcn", "1drn")}
    audio = {unit: TemporalStream(audio_stream_spec(unit, width=8, out_width=5), 80, rng)
             for unit in ("tcn", "1drn")}
    msr = MSRModel(MSRConfig.desk(video_in=6), rng)
    bad = []
    with no_grad():
        for s in samples:
            T = s.n_frames
            mel = stft_mel(s.waveform, T)
            video = rng.standard_normal((1, T, 6))
            shapes = [mel.shape[0] == 4 * T, msr.audio_path(mel[None]).shape[1] == T]
            for unit in ("tcn", "1drn"):
                shapes.append(video_stream(video, streams[unit]).shape[1] == 4 * T)
                shapes.append(audio_stream(mel[None], audio[unit], T).shape[1] == 4 * T)
            if not all(shapes):
                bad.append(s.uid)
    record(4, "alignment contract", not bad,
           f"{len(samples) - len(bad)}/{len(samples)} clips give 4T mel frames, 4T stream outputs, T MSR audio frames")


# ------------------------------------------------------------------ 5
def test_05_wer_matches_enumeration():
    vocab = ("a", "b", "c", "d", "e")
    cases = mismatches = 0
    sentences = list(all_sentences(vocab, 3))
    for ref, hyp in itertools.product(sentences, sentences):
        if not ref:
            continue
        r = wer(list(ref), list(hyp))
        cases += 1
        mismatches += (r.S, r.D, r.I) != brute_force_wer(ref, hyp)
    rng = np.random.default_rng(5)
    for _ in range(2000):
        ref = list(rng.choice(vocab, size=int(rng.integers(1, 7))))
        hyp = list(rng.choice(vocab, size=int(rng.integers(0, 7))))
        r = wer(ref, hyp)
        cases += 1
        mismatches += (r.S, r.D, r.I) != brute_force_wer(ref, hyp)
    record(5, "WER DP equals exhaustive alignment", mismatches == 0 and cases >= 10_000,
           f"{cases - mismatches}/{cases} pairs agree (all up to 3 words, random up to 6)")


# ------------------------------------------------------------------ 6
def test_06_energy_error_identities():
    worst = 0.0
    for seed in range(20):
        M = np.abs(np.random.default_rng(seed).standard_normal((40, 80))) + 1e-3
        worst = max(worst, abs(energy_error(M, M)), abs(energy_error(2 * M, M) - 1.0),
                    abs(energy_error(np.zeros_like(M), M) - 1.0))
    record(6, "energy-error identities", worst <= 1e-12, f"largest deviation {worst:.1e} over 20 spectrograms")


# ------------------------------------------------------------------ 7
def test_07_denoising_efficacy():
    t0 = time.time()
    results = denoising_experiment(units=("tcn", "1drn"), seed=0, n_train=50, n_test=10, snr=0.0)
    seconds = time.time() - t0
    ok = all(r.relative_gain >= 0.2 for r in results) and seconds < 1800
    detail = ", ".join(f"{r.unit} {r.noisy:.3f} -> {r.enhanced:.3f} ({100 * r.relative_gain:.0f}% lower)"
                       for r in results)
    record(7, "denoising efficacy at 0 dB", ok, f"{detail}, {seconds:.0f} s")


# ------------------------------------------------------------------ 8
def test_08_recognition_overfit():
    r = overfit_experiment(seed=0, n_sentences=20, max_steps=2000, target_wer=0.0)
    exact = sum(h == ref for h, ref in zip(r.hypotheses, r.references))
    ok = r.wer <= 0.05 and r.steps <= 2000
    record(8, "recognition overfit in mode AV", ok,
           f"train WER {100 * r.wer:.1f}% after {r.steps} steps, {exact}/{len(r.references)} transcripts exact")


# ------------------------------------------------------------------ 9
def test_09_mode_ordering():
    runs = [mode_ordering_experiment(seed) for seed in range(3)]
    vav_margin = float(np.mean([r.wer["AV"] - r.wer["VAV"] for r in runs]))
    va_margin = float(np.mean([r.wer["A"] - r.wer["VA"] for r in runs]))
    per_seed = "; ".join(" ".join(f"{m} {100 * r.wer[m]:.1f}" for m in ("A", "AV", "VA", "VAV")) for r in runs)
    record(9, "mode ordering at 0 dB", vav_margin > 0 and va_margin > 0,
           f"mean WER(AV)-WER(VAV) {100 * vav_margin:+.2f} pts, WER(A)-WER(VA) {100 * va_margin:+.2f} pts [{per_seed}]")


# ------------------------------------------------------------------ 10
MASK_FAILURES = []


@given(unit=st.sampled_from(["tcn", "1drn"]), seed=st.integers(0, 2 ** 16), T=st.integers(1, 6),
       scale=st.floats(0.0, 50.0))
@settings(max_examples=1000, deadline=None, database=None)
def _mask_case(unit, seed, T, scale):
    rng = np.random.default_rng(seed)
    cfg = AEConfig.desk(unit, video_in=6, n_mels=8, stream_width=8, stream_out=4, gru_units=6, fc_units=6)
    model = AEModel(cfg, rng)
    model.eval()
    for p in model.parameters():
        p.data += 0.5 * rng.standard_normal(p.shape)
    video = rng.standard_normal((1, T, 6))
    noisy = scale * np.abs(rng.standard_normal((1, 4 * T, 8)))
    with no_grad():
        mask, enhanced = model(video, noisy)
    if not (np.all((mask.data > 0) & (mask.data < 1)) and np.all(enhanced.data <= noisy)):
        MASK_FAILURES.append((unit, seed, T, scale))


def test_10_mask_bounds():
    MASK_FAILURES.clear()
    _mask_case()
    record(10, "mask bounds and attenuation", not MASK_FAILURES,
           f"{len(MASK_FAILURES)} violations in 1000 random models and inputs")


# ------------------------------------------------------------------ 11
def test_11_determinism_and_checkpoint_roundtrip(tmp_path):
    data = tmp_path / "data"
    assert main(["synth-corpus", "--out", str(data), "--n-sentences", "10", "--n-babble", "30"]) == 0
    tables = []
    for run in ("a", "b"):
        base = ["--data-root", str(data), "--work-dir", str(tmp_path / run), "--seed", "7"]
        cfg = tmp_path / "cfg.json"
        cfg.write_text('{"n_test": 3, "frontend_steps": 3, "ae_steps": 5, "msr_steps": 5, "joint_steps": 3, '
                       '"batch": 4}')
        for phase in ("frontend", "ae", "msr", "joint"):
            assert main(["train", "--config", str(cfg), "--phase", phase, *base]) == 0
        out = tmp_path / f"{run}.csv"
        assert main(["eval", "--config", str(cfg), "--snrs", "clean,0", "--csv", str(out), *base]) == 0
        tables.append(out.read_bytes())

    rng = np.random.default_rng(11)
    model = MSRModel(MSRConfig.desk(video_in=6), rng)
    audio, video = np.abs(rng.standard_normal((2, 20, 80))), rng.standard_normal((2, 5, 6))
    dec_in, _ = teacher_forcing([[5, 6, 7], [8]])
    with no_grad():
        before = model(audio, video, dec_in).data
    tensors, meta = loads(dumps(model.state_dict(), {"step": 1}))
    restored = MSRModel(MSRConfig.desk(video_in=6), np.random.default_rng(99))
    restored.load_state_dict(tensors)
    with no_grad():
        after = restored(audio, video, dec_in).data
    same_table = tables[0] == tables[1]
    same_logits = before.tobytes() == after.tobytes() and meta == {"step": 1}
    record(11, "determinism and checkpoint round trip", same_table and same_logits,
           f"metrics tables {'identical' if same_table else 'differ'}, "
           f"reloaded logits {'bit-identical' if same_logits else 'differ'}")
