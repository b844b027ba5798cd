"""Synthetic audio-visual corpus.

Each toy word is spoken as two voiced segments (an onset and a vowel), each a
harmonic complex shaped by two formant peaks, and is shown as a mouth glyph
whose opening changes frame by frame.  Words come in viseme pairs such as
"bat"/"mat": both members share the vowel and the mouth movement and differ
only in the onset, so the video alone cannot tell them apart while it still
pins down the pair.  Babble noise is built from other sentences of the same
generator, which makes it speech-like.

On disk a corpus is a directory of ``<uid>.clip`` (frames), ``<uid>.wav``
(16-bit PCM) and ``<uid>.txt`` (transcript) triples, babble sources under
``babble/`` and a ``manifest.json`` with the word spans and the generating
configuration.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigurationError, FormatError, VersionError
from .frontend import FRAME_SIZE
from .signal import SAMPLE_RATE, VIDEO_FPS, Waveform, read_wav, write_wav

SAMPLES_PER_FRAME = SAMPLE_RATE // VIDEO_FPS
CLIP_MAGIC = b"AVCLIP\x00\x01"
MANIFEST_VERSION = 1

# word -> (viseme, onset formants, vowel formants), formants in Hz
LEXICON: Dict[str, Tuple[int, Tuple[float, float], Tuple[float, float]]] = {
    "bat": (0, (450, 1000), (750, 1250)),
    "mat": (0, (300, 1500), (750, 1250)),
    "pin": (1, (500, 1300), (320, 2300)),
    "bin": (1, (300, 900), (320, 2300)),
    "fan": (2, (400, 1700), (650, 1750)),
    "van": (2, (250, 1200), (650, 1750)),
    "tip": (3, (550, 1900), (380, 2000)),
    "dip": (3, (350, 1600), (380, 2000)),
    "cap": (4, (500, 2100), (600, 1050)),
    "gap": (4, (300, 2400), (600, 1050)),
}
WORDS: Tuple[str, ...] = tuple(LEXICON)

# per-viseme mouth (width, height, teeth) over the four frames of a word
VISEME_GLYPHS = (
    ((30, 3, 0), (36, 18, 0), (38, 26, 0), (34, 14, 0)),
    ((30, 3, 0), (30, 10, 0), (44, 8, 0), (40, 5, 0)),
    ((32, 6, 1), (32, 10, 1), (36, 20, 0), (34, 12, 0)),
    ((30, 9, 1), (28, 13, 1), (42, 9, 0), (38, 5, 0)),
    ((34, 14, 0), (30, 24, 0), (40, 22, 0), (32, 9, 0)),
)
REST_GLYPH = (30, 2, 0)


@dataclass
class CorpusConfig:
    n_sentences: int = 20
    min_words: int = 1
    max_words: int = 4
    word_frames: int = 4
    gap_frames: int = 1
    edge_frames: int = 1
    n_babble: int = 40
    rms: float = 0.05
    pixel_noise: float = 0.02
    seed: int = 0
    words: Tuple[str, ...] = WORDS

    def __post_init__(self):
        self.words = tuple(self.words)
        unknown = [w for w in self.words if w not in LEXICON]
        if unknown:
            raise ConfigurationError(f"words not in the lexicon: {unknown}")
        if not 1 <= self.min_words <= self.max_words:
            raise ConfigurationError("need 1 <= min_words <= max_words")
        if self.word_frames < 2 or self.word_frames % 2:
            raise ConfigurationError("word_frames must be an even number >= 2")
        if self.n_sentences < 0 or self.n_babble < 0:
            raise ConfigurationError("counts must be non-negative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["words"] = list(self.words)
        return d


@dataclass
class RawSample:
    """Raw generated (or loaded) triple with word spans in video frames."""

    uid: str
    transcript: str
    frames: np.ndarray
    waveform: Waveform
    spans: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def words(self) -> List[str]:
        return self.transcript.split()


# ------------------------------------------------------------------ audio
def _segment(formants: Tuple[float, float], f0: float, n: int, rng: np.random.Generator) -> np.ndarray:
    t = np.arange(n) / SAMPLE_RATE
    out = np.zeros(n)
    for k in range(1, int(4000 // f0) + 1):
        f = k * f0
        amp = sum(np.exp(-0.5 * ((f - F) / (60.0 + 0.08 * F)) ** 2) for F in formants) + 0.01
        out += amp * np.sin(2 * np.pi * f * t + rng.uniform(0, 2 * np.pi))
    ramp = min(n // 2, SAMPLE_RATE // 200)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[n - ramp:] = np.linspace(1.0, 0.0, ramp)
    return out * env


def synth_word_audio(word: str, n_frames: int, f0: float, shift: float,
                     rng: np.random.Generator) -> np.ndarray:
    """Onset segment then vowel segment, each half of the word's duration."""
    _, onset, vowel = LEXICON[word]
    half = n_frames // 2 * SAMPLES_PER_FRAME
    scale = lambda fs: tuple(shift * f for f in fs)  # noqa: E731 - speaker formant shift
    return np.concatenate([_segment(scale(onset), f0, half, rng), _segment(scale(vowel), f0, half, rng)])


# ------------------------------------------------------------------ video
_YY, _XX = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE].astype(np.float64)


def render_mouth(width: float, height: float, teeth: bool, cx: float, cy: float) -> np.ndarray:
    """Grey face patch with a dark soft-edged elliptical mouth and an optional teeth bar."""
    frame = np.full((FRAME_SIZE, FRAME_SIZE), 0.6)
    r = np.sqrt(((_XX - cx) / (width / 2.0)) ** 2 + ((_YY - cy) / max(height / 2.0, 0.5)) ** 2)
    inside = np.clip((1.15 - r) / 0.3, 0.0, 1.0)
    frame = frame * (1 - inside) + 0.1 * inside
    if teeth:
        bar = (np.abs(_XX - cx) < width / 3.0) & (_YY > cy - height / 2.0 - 3) & (_YY < cy - height / 2.0 + 1)
        frame[bar] = 0.95
    return frame


def glyph_sequence(viseme: int, n_frames: int) -> List[Tuple[int, int, int]]:
    table = VISEME_GLYPHS[viseme]
    return [table[i * len(table) // n_frames] for i in range(n_frames)]


# ------------------------------------------------------------------ sentences
def synth_sentence(words: Sequence[str], cfg: CorpusConfig, rng: np.random.Generator,
                   uid: str = "") -> RawSample:
    n = len(words)
    T = 2 * cfg.edge_frames + n * cfg.word_frames + (n - 1) * cfg.gap_frames
    f0 = rng.uniform(100.0, 180.0)
    shift = rng.uniform(0.95, 1.05)
    cx = FRAME_SIZE / 2 + rng.uniform(-4, 4)
    cy = FRAME_SIZE * 0.62 + rng.uniform(-4, 4)
    mouth_scale = rng.uniform(0.9, 1.1)
    glyphs = [REST_GLYPH] * T
    audio = np.zeros(T * SAMPLES_PER_FRAME)
    spans = []
    start = cfg.edge_frames
    for w in words:
        end = start + cfg.word_frames
        spans.append((start, end))
        glyphs[start:end] = glyph_sequence(LEXICON[w][0], cfg.word_frames)
        audio[start * SAMPLES_PER_FRAME:end * SAMPLES_PER_FRAME] = synth_word_audio(
            w, cfg.word_frames, f0, shift, rng)
        start = end + cfg.gap_frames
    rms = np.sqrt(np.mean(audio ** 2))
    audio *= cfg.rms / rms
    frames = np.stack([render_mouth(gw * mouth_scale, gh * mouth_scale, bool(teeth), cx, cy)
                       for gw, gh, teeth in glyphs])
    frames = np.clip(frames + cfg.pixel_noise * rng.standard_normal(frames.shape), 0.0, 1.0)
    # the on-disk payload is float32 and WAV is 16-bit; quantize now so that
    # in-memory and reloaded corpora are identical
    frames = frames.astype(np.float32).astype(np.float64)
    audio = np.round(np.clip(audio, -1.0, 32767 / 32768) * 32768.0) / 32768.0
    return RawSample(uid, " ".join(words), frames, Waveform(audio), spans)


def generate_corpus(cfg: CorpusConfig) -> Tuple[List[RawSample], List[Waveform]]:
    """Deterministic (sentences, babble sources) for ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    seeds = rng.integers(0, 2 ** 32, size=cfg.n_sentences + cfg.n_babble)
    samples, babble = [], []
    for i, seed in enumerate(seeds):
        r = np.random.default_rng(int(seed))
        n = int(r.integers(cfg.min_words, cfg.max_words + 1))
        words = [cfg.words[j] for j in r.integers(0, len(cfg.words), size=n)]
        if i < cfg.n_sentences:
            samples.append(synth_sentence(words, cfg, r, uid=f"s{i:05d}"))
        else:
            # babble talkers speak longer sentences so offsets rarely wrap
            words = [cfg.words[j] for j in r.integers(0, len(cfg.words), size=cfg.max_words + 2)]
            babble.append(synth_sentence(words, cfg, r).waveform)
    return samples, babble


# ------------------------------------------------------------------ clip I/O
def write_clip(path: Union[str, Path], frames: np.ndarray) -> None:
    """Header (magic, u32 T, H, W) then little-endian float32 pixels."""
    frames = np.asarray(frames)
    if frames.ndim != 3:
        raise FormatError(f"clip must be [T, H, W], got {frames.shape}")
    with open(path, "wb") as fh:
        fh.write(CLIP_MAGIC)
        fh.write(struct.pack("<3I", *frames.shape))
        fh.write(frames.astype("<f4").tobytes())


def read_clip(path: Union[str, Path]) -> np.ndarray:
    raw = Path(path).read_bytes()
    head = len(CLIP_MAGIC) + 12
    if len(raw) < head or raw[:len(CLIP_MAGIC)] != CLIP_MAGIC:
        raise FormatError(f"{path}: not a clip file")
    T, H, W = struct.unpack("<3I", raw[len(CLIP_MAGIC):head])
    if len(raw) - head != 4 * T * H * W:
        raise FormatError(f"{path}: payload has {len(raw) - head} bytes, header says {4 * T * H * W}")
    return np.frombuffer(raw[head:], dtype="<f4").reshape(T, H, W).astype(np.float64)


def read_pgm(path: Union[str, Path]) -> np.ndarray:
    """Binary 8-bit PGM (P5) frame scaled to [0, 1]."""
    raw = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise FormatError(f"{path}: only 8-bit binary PGM is supported")
    w, h = int(tokens[1]), int(tokens[2])
    data = np.frombuffer(raw[pos + 1:pos + 1 + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise FormatError(f"{path}: truncated PGM")
    return data.reshape(h, w).astype(np.float64) / 255.0


# ------------------------------------------------------------------ corpus I/O
def write_corpus(root: Union[str, Path], cfg: CorpusConfig) -> Path:
    root = Path(root)
    samples, babble = generate_corpus(cfg)
    (root / "babble").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in samples:
        write_clip(root / f"{s.uid}.clip", s.frames)
        write_wav(root / f"{s.uid}.wav", s.waveform)
        (root / f"{s.uid}.txt").write_text(s.transcript + "\n", encoding="utf-8")
        entries.append({"uid": s.uid, "transcript": s.transcript, "n_frames": s.n_frames,
                        "spans": [list(sp) for sp in s.spans]})
    names = []
    for i, w in enumerate(babble):
        name = f"babble/b{i:04d}.wav"
        write_wav(root / name, w)
        names.append(name)
    manifest = {"version": MANIFEST_VERSION, "config": cfg.to_dict(), "samples": entries,
                "babble": names}
    (root / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True), encoding="utf-8")
    return root


def read_manifest(root: Union[str, Path]) -> dict:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise FormatError(f"{root}: no manifest.json (not a corpus directory?)")
    try:
        manifest = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if manifest.get("version") != MANIFEST_VERSION:
        raise VersionError(f"{path}: manifest version {manifest.get('version')} != {MANIFEST_VERSION}")
    return manifest


def load_corpus(root: Union[str, Path]) -> Tuple[List[RawSample], List[Waveform]]:
    root = Path(root)
    manifest = read_manifest(root)
    samples = []
    for e in manifest["samples"]:
        frames = read_clip(root / f"{e['uid']}.clip")
        if frames.shape[0] != e["n_frames"]:
            raise FormatError(f"{e['uid']}: clip has {frames.shape[0]} frames, manifest says {e['n_frames']}")
        transcript = (root / f"{e['uid']}.txt").read_text(encoding="utf-8").strip()
        samples.append(RawSample(e["uid"], transcript, frames, read_wav(root / f"{e['uid']}.wav"),
                                 [tuple(sp) for sp in e["spans"]]))
    babble = [read_wav(root / name) for name in manifest["babble"]]
    return samples, babble
