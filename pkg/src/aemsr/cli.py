"""Command line entry point.

Subcommands::

    synth-corpus   write a synthetic audio-visual corpus
    train          run one training phase: frontend, ae, msr or joint
    eval           WER table over recognition modes and SNR levels
    enhance        dump the mask and magnitudes of one utterance
    decode         transcribe one utterance

Phases communicate through files in the work directory: ``frontend.ckpt``
and the feature cache ``features.npz`` (per-clip ``[T, width]`` arrays),
``ae.ckpt``, ``msr.ckpt`` and ``msr_joint.ckpt``.  Each checkpoint carries
its phase, step count and an architecture hash; loading a checkpoint into a
model built from a different architecture raises :class:`VersionError`.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ae import AEModel
from .autograd import Module, no_grad
from .autograd.checkpoint import load, save_module
from .config import DATA_ROOT_ENV, RunConfig, architecture_hash, load_config
from .corpus import CorpusConfig, RawSample, load_corpus, read_clip, read_manifest, write_corpus
from .data import Utterance
from .errors import (AlignmentError, ConfigurationError, DataError, DegenerateInputError,
                     SchedulingError, VersionError)
from .frontend import VisualFrontend, WordClassifier
from .metrics import SNR_ROWS, format_table, report_table, table_to_csv, word_accuracy
from .msr import MODES, MSRModel, run_mode
from .signal import SAMPLE_RATE, VIDEO_FPS, NoiseSpec, read_wav, stft_mel
from .training import (NoisyStream, TrainLog, classify_words, evaluate_modes,
                       extract_features, make_utterances, noisy_mel, noise_rng, train_ae,
                       train_frontend, train_msr, word_crops)

log = logging.getLogger("aemsr")

FRONTEND_CKPT = "frontend.ckpt"
FEATURES = "features.npz"
AE_CKPT = "ae.ckpt"
MSR_CKPT = "msr.ckpt"
JOINT_CKPT = "msr_joint.ckpt"
PHASES = ("frontend", "ae", "msr", "joint")
PRODUCED_BY = {FRONTEND_CKPT: "frontend", AE_CKPT: "ae", MSR_CKPT: "msr", JOINT_CKPT: "joint"}
EVAL_SEED_OFFSET = 1000


# ------------------------------------------------------------------ checkpoints
def save_checkpoint(path: Path, module: Module, phase: str, step: int, model_cfg, cfg: RunConfig) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = {"phase": phase, "step": int(step), "config_hash": architecture_hash(model_cfg),
            "model_config": asdict(model_cfg), "run_config": cfg.to_dict()}
    save_module(path, module, meta)


def load_checkpoint(path: Path, module: Module, model_cfg) -> dict:
    """Load ``path`` into ``module`` after checking the architecture hash."""
    if not path.exists():
        phase = PRODUCED_BY.get(path.name, "?")
        raise ConfigurationError(f"missing checkpoint {path}; run train --phase {phase} first")
    tensors, meta = load(path)
    expected = architecture_hash(model_cfg)
    if meta.get("config_hash") != expected:
        raise VersionError(f"{path} was written for architecture {meta.get('config_hash')}, "
                           f"the current configuration gives {expected}")
    module.load_state_dict(tensors)
    return meta


class Workspace:
    """Corpus and work-directory access for one run configuration."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.data_root = cfg.resolve_data_root()
        self.work = Path(cfg.work_dir)
        self._corpus: Optional[Tuple[List[RawSample], list]] = None

    def path(self, name: str) -> Path:
        return self.work / name

    @property
    def corpus(self):
        if self._corpus is None:
            self._corpus = load_corpus(self.data_root)
        return self._corpus

    @property
    def vocabulary(self) -> List[str]:
        return list(read_manifest(self.data_root)["config"]["words"])

    def split(self) -> Tuple[List[RawSample], List[RawSample]]:
        samples = self.corpus[0]
        n_test = self.cfg.n_test
        if n_test >= len(samples):
            raise ConfigurationError(f"n_test={n_test} leaves no training data out of {len(samples)} sentences")
        return (samples[:len(samples) - n_test], samples[len(samples) - n_test:])

    def features(self) -> Dict[str, np.ndarray]:
        path = self.path(FEATURES)
        if not path.exists():
            raise ConfigurationError(f"no feature cache at {path}; run train --phase frontend first")
        with np.load(path) as data:
            feats = {k: data[k] for k in data.files}
        missing = [s.uid for s in self.corpus[0] if s.uid not in feats]
        if missing:
            raise DataError(f"feature cache lacks {len(missing)} clips (e.g. {missing[0]}); rerun the frontend phase")
        return feats

    def frontend(self) -> WordClassifier:
        fcfg = self.cfg.frontend_config()
        rng = np.random.default_rng(0)
        clf = WordClassifier(VisualFrontend(fcfg, rng), len(self.vocabulary), rng)
        load_checkpoint(self.path(FRONTEND_CKPT), clf, fcfg)
        clf.eval()
        return clf

    def ae(self, required: bool = True) -> Optional[AEModel]:
        if not self.path(AE_CKPT).exists() and not required:
            return None
        acfg = self.cfg.ae_config()
        model = AEModel(acfg, np.random.default_rng(0))
        load_checkpoint(self.path(AE_CKPT), model, acfg)
        model.freeze()
        model.eval()
        return model

    def msr(self, prefer_joint: bool = True) -> MSRModel:
        mcfg = self.cfg.msr_config()
        model = MSRModel(mcfg, np.random.default_rng(0))
        name = JOINT_CKPT if prefer_joint and self.path(JOINT_CKPT).exists() else MSR_CKPT
        load_checkpoint(self.path(name), model, mcfg)
        model.eval()
        return model


def _write_log(path: Path, tl: TrainLog) -> None:
    path.write_text(json.dumps({"losses": tl.losses, "lrs": tl.lrs}), encoding="utf-8")


# ------------------------------------------------------------------ phases
def phase_frontend(ws: Workspace) -> WordClassifier:
    """Train the word classifier on word crops, then cache features for every clip."""
    cfg = ws.cfg
    train, test = ws.split()
    vocab = ws.vocabulary
    rng = np.random.default_rng([cfg.seed, 1])
    tl = TrainLog()
    clf = train_frontend(train, vocab, cfg.frontend_config(), cfg.frontend_steps, rng, lr=cfg.frontend_lr,
                         batch=cfg.batch, on_step=lambda step, loss: tl.losses.append(loss))
    if test:
        clips, labels = word_crops(test, vocab)
        log.info("held-out word accuracy %.3f", word_accuracy(classify_words(clf, clips), labels))
    ws.work.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ws.path(FRONTEND_CKPT), clf, "frontend", cfg.frontend_steps, cfg.frontend_config(), cfg)
    feats = extract_features(clf.frontend, ws.corpus[0])
    np.savez(ws.path(FEATURES), **feats)
    _write_log(ws.path("frontend_log.json"), tl)
    return clf


def phase_ae(ws: Workspace) -> Tuple[AEModel, TrainLog]:
    cfg = ws.cfg
    feats = ws.features()
    train, _ = ws.split()
    rng = np.random.default_rng([cfg.seed, 2])
    model = AEModel(cfg.ae_config(), rng)
    # the enhancer always sees noisy input; clean pairs teach it nothing
    noise = NoiseSpec(p_n=1.0, snr_levels=cfg.snr_levels, n_sources=cfg.n_sources)
    stream = NoisyStream(train, feats, ws.corpus[1], noise, rng)
    tl = train_ae(model, stream, cfg.ae_steps, cfg.ae_lr, cfg.batch, cfg.plateau_window, cfg.lr_floor)
    save_checkpoint(ws.path(AE_CKPT), model, "ae", cfg.ae_steps, cfg.ae_config(), cfg)
    _write_log(ws.path("ae_log.json"), tl)
    return model, tl


def phase_msr(ws: Workspace) -> Tuple[MSRModel, TrainLog]:
    cfg = ws.cfg
    feats = ws.features()
    train, _ = ws.split()
    rng = np.random.default_rng([cfg.seed, 3])
    model = MSRModel(cfg.msr_config(), rng)
    stream = NoisyStream(train, feats, ws.corpus[1], cfg.noise_spec(), rng)
    max_words = max(len(s.words) for s in train)
    tl = train_msr(model, stream, cfg.msr_steps, cfg.msr_lr, cfg.batch, max_words,
                   curriculum=cfg.curriculum, schedule_window=cfg.plateau_window, floor=cfg.lr_floor)
    save_checkpoint(ws.path(MSR_CKPT), model, "msr", cfg.msr_steps, cfg.msr_config(), cfg)
    _write_log(ws.path("msr_log.json"), tl)
    return model, tl


def phase_joint(ws: Workspace) -> Tuple[AEModel, MSRModel, TrainLog]:
    """Fine-tune the recognizer on enhanced audio while the AE stays frozen."""
    cfg = ws.cfg
    feats = ws.features()
    ae = ws.ae(required=True)
    msr = ws.msr(prefer_joint=False)
    train, _ = ws.split()
    rng = np.random.default_rng([cfg.seed, 4])
    stream = NoisyStream(train, feats, ws.corpus[1], cfg.noise_spec(), rng, enhancer=ae,
                         p_enhance=cfg.p_enhance)
    max_words = max(len(s.words) for s in train)
    tl = train_msr(msr, stream, cfg.joint_steps, cfg.joint_lr, cfg.batch, max_words, curriculum=False,
                   schedule_window=cfg.plateau_window, floor=cfg.lr_floor)
    save_checkpoint(ws.path(JOINT_CKPT), msr, "joint", cfg.joint_steps, cfg.msr_config(), cfg)
    _write_log(ws.path("joint_log.json"), tl)
    return ae, msr, tl


# ------------------------------------------------------------------ commands
def parse_snrs(text: str) -> List[object]:
    out: List[object] = []
    for item in text.split(","):
        item = item.strip().lower()
        if item == "clean":
            out.append("clean")
            continue
        try:
            value = int(float(item))
        except ValueError as exc:
            raise ConfigurationError(f"bad SNR {item!r}") from exc
        if value not in SNR_ROWS:
            raise ConfigurationError(f"SNR {value} is not one of {SNR_ROWS}")
        out.append(value)
    return out


def parse_modes(text: str) -> List[str]:
    modes = [m.strip().upper() for m in text.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise ConfigurationError(f"modes must be drawn from {MODES}, got {text!r}")
    return modes


def cmd_synth_corpus(cfg: RunConfig, args) -> int:
    root = args.out or cfg.data_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise ConfigurationError(f"no output directory: pass --out or set ${DATA_ROOT_ENV}")
    ccfg = CorpusConfig(n_sentences=args.n_sentences, n_babble=args.n_babble, max_words=args.max_words,
                        seed=cfg.seed)
    write_corpus(root, ccfg)
    print(f"wrote {args.n_sentences} sentences and {args.n_babble} babble sources to {root}")
    return 0


def cmd_train(cfg: RunConfig, args) -> int:
    ws = Workspace(cfg)
    phase = args.phase
    if phase == "frontend":
        phase_frontend(ws)
        print(f"front-end checkpoint and feature cache written to {ws.work}")
        return 0
    if phase == "ae":
        _, tl = phase_ae(ws)
    elif phase == "msr":
        _, tl = phase_msr(ws)
    else:
        _, _, tl = phase_joint(ws)
    tail = np.mean(tl.losses[-cfg.plateau_window:]) if tl.losses else float("nan")
    print(f"{phase}: {len(tl.losses)} steps, final loss {tail:.4f}")
    return 0


def evaluation_table(ws: Workspace, modes: Sequence[str], snrs: Sequence[object], split: str = "test",
                     prefer_joint: bool = True) -> Dict[Tuple[object, str], float]:
    cfg = ws.cfg
    feats = ws.features()
    train, test = ws.split()
    src = test if split == "test" else train
    if not src:
        raise ConfigurationError(f"the {split} split is empty")
    msr = ws.msr(prefer_joint)
    needs_ae = any(m in ("VA", "VAV") for m in modes)
    ae = ws.ae(required=needs_ae)
    results = {}
    for snr in snrs:
        level = None if snr == "clean" else float(snr)
        utts = make_utterances(src, feats, ws.corpus[1], level, seed=cfg.seed + EVAL_SEED_OFFSET,
                               n_sources=cfg.n_sources)
        for mode, value in evaluate_modes(msr, utts, modes, ae, max_len=cfg.max_len).items():
            results[(snr, mode)] = value
    return results


def cmd_eval(cfg: RunConfig, args) -> int:
    ws = Workspace(cfg)
    results = evaluation_table(ws, parse_modes(args.modes), parse_snrs(args.snrs), args.split,
                               not args.no_joint)
    table = report_table(results)
    print(format_table(table))
    if args.csv:
        Path(args.csv).write_text(table_to_csv(table), encoding="utf-8")
    return 0


def _single_utterance(ws: Workspace, args) -> Utterance:
    """The utterance named by ``--uid`` or read from ``--clip``/``--wav``, mixed at ``--snr``."""
    cfg = ws.cfg
    snr = parse_snrs(args.snr)[0]
    level = None if snr == "clean" else float(snr)
    if args.uid:
        samples, babble = ws.corpus
        index = {s.uid: i for i, s in enumerate(samples)}
        if args.uid not in index:
            raise DataError(f"no utterance {args.uid!r} in {ws.data_root}")
        i = index[args.uid]
        return make_utterances([samples[i]], ws.features(), babble, level,
                               seed=cfg.seed + EVAL_SEED_OFFSET + i, n_sources=cfg.n_sources)[0]
    if not (args.clip and args.wav):
        raise ConfigurationError("pass --uid or both --clip and --wav")
    frames = read_clip(args.clip)
    wave_ = read_wav(args.wav)
    T = frames.shape[0]
    expected = T * SAMPLE_RATE // VIDEO_FPS
    if abs(len(wave_) - expected) > SAMPLE_RATE // VIDEO_FPS:
        raise AlignmentError(f"{args.wav} has {len(wave_)} samples, {T} frames need about {expected}")
    clf = ws.frontend()
    with no_grad():
        video = clf.frontend(frames[None]).data[0]
    sample = RawSample("input", "", frames, wave_, [])
    clean = stft_mel(wave_, T)
    audio = clean if level is None else noisy_mel(sample, ws.corpus[1], level, noise_rng(cfg.seed, 0, level),
                                                   cfg.n_sources)
    return Utterance(video, audio, "", None, clean, "input")


def cmd_enhance(cfg: RunConfig, args) -> int:
    ws = Workspace(cfg)
    u = _single_utterance(ws, args)
    ae = ws.ae(required=True)
    with no_grad():
        mask, enhanced = ae(u.video, u.audio)
    np.savez(args.out, mask=mask.data, noisy=u.audio, enhanced=enhanced.data, clean=u.clean)
    print(f"wrote mask and magnitudes [{u.audio.shape[0]} x {u.audio.shape[1]}] to {args.out}")
    return 0


def cmd_decode(cfg: RunConfig, args) -> int:
    ws = Workspace(cfg)
    mode = parse_modes(args.mode)[0]
    u = _single_utterance(ws, args)
    ae = ws.ae(required=mode in ("VA", "VAV"))
    print(run_mode(mode, u, ae, ws.msr(not args.no_joint), cfg.max_len))
    return 0


# ------------------------------------------------------------------ parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--data-root", help=f"corpus directory (default ${DATA_ROOT_ENV})")
    common.add_argument("--work-dir", help="checkpoint and cache directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--unit", choices=("tcn", "1drn"))
    common.add_argument("--scale", choices=("desk", "full"))
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="aemsr", description="Visually guided speech enhancement and recognition.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-corpus", parents=[common], help="write a synthetic corpus")
    s.add_argument("--out", help="output directory (default: the data root)")
    s.add_argument("--n-sentences", type=int, default=20)
    s.add_argument("--n-babble", type=int, default=40)
    s.add_argument("--max-words", type=int, default=4)
    s.set_defaults(func=cmd_synth_corpus)

    t = sub.add_parser("train", parents=[common], help="run one training phase")
    t.add_argument("--phase", choices=PHASES, required=True)
    t.add_argument("--steps", type=int, help="step count for this phase")
    t.add_argument("--lr", type=float, help="initial learning rate for this phase")
    t.add_argument("--batch", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="WER table over modes and SNRs")
    e.add_argument("--modes", default="A,V,AV,VA,VAV")
    e.add_argument("--snrs", default="clean,10,5,0,-5,-10")
    e.add_argument("--split", choices=("test", "train"), default="test")
    e.add_argument("--no-joint", action="store_true", help="use msr.ckpt even if msr_joint.ckpt exists")
    e.add_argument("--csv", help="also write the table as CSV")
    e.set_defaults(func=cmd_eval)

    for name, func, helptext in (("enhance", cmd_enhance, "dump mask and magnitudes"),
                                 ("decode", cmd_decode, "transcribe one utterance")):
        c = sub.add_parser(name, parents=[common], help=helptext)
        c.add_argument("--uid", help="utterance id in the corpus")
        c.add_argument("--clip", help="frame file of an external utterance")
        c.add_argument("--wav", help="16 kHz mono WAV of an external utterance")
        c.add_argument("--snr", default="clean", help="babble level in dB or 'clean'")
        if name == "enhance":
            c.add_argument("--out", required=True, help="output .npz")
        else:
            c.add_argument("--mode", default="AV")
            c.add_argument("--no-joint", action="store_true")
        c.set_defaults(func=func)
    return p


def config_from_args(args) -> RunConfig:
    overrides = {"data_root": args.data_root, "work_dir": args.work_dir, "seed": args.seed,
                 "unit": args.unit, "scale": args.scale}
    if args.command == "train":
        overrides.update({"batch": args.batch, f"{args.phase}_steps": args.steps,
                          f"{args.phase}_lr": args.lr})
    return load_config(args.config, overrides)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s",
                        stream=sys.stderr)
    try:
        cfg = config_from_args(args)
        return args.func(cfg, args)
    except (ConfigurationError, SchedulingError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (DataError, DegenerateInputError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
