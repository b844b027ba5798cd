"""Run configuration: a JSON file whose keys mirror :class:`RunConfig`.

Every field has a default, so a file only lists what it changes.  Command
line flags are applied on top of the file.  Unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from .ae import AEConfig
from .errors import ConfigurationError
from .frontend import P3DConfig
from .msr import MSRConfig
from .signal import SNR_LEVELS_DB, NoiseSpec

DATA_ROOT_ENV = "AEMSR_DATA_ROOT"
SCALES = ("desk", "full")


@dataclass
class RunConfig:
    # paths; ``data_root`` falls back to $AEMSR_DATA_ROOT
    data_root: Optional[str] = None
    work_dir: str = "aemsr-run"
    seed: int = 0
    # model sizes: "desk" shrinks every width, "full" uses the reference tables
    scale: str = "desk"
    unit: str = "tcn"
    frontend_width: float = 0.125
    input_scale: float = 0.2
    # data split: the last ``n_test`` sentences are held out
    n_test: int = 10
    # noise augmentation during AE / recognizer training
    p_noise: float = 0.5
    snr_levels: Tuple[float, ...] = SNR_LEVELS_DB
    n_sources: int = 30
    # optimisation; learning rates halve on a plateau of ``plateau_window`` steps
    batch: int = 16
    frontend_steps: int = 60
    frontend_lr: float = 3e-3
    ae_steps: int = 300
    ae_lr: float = 1e-3
    msr_steps: int = 1500
    msr_lr: float = 1e-3
    joint_steps: int = 300
    joint_lr: float = 5e-4
    lr_floor: float = 5e-6
    plateau_window: int = 50
    # recognizer
    label_smoothing: float = 0.1
    modality_dropout: float = 0.2
    curriculum: bool = True
    p_enhance: float = 0.5
    max_len: int = 64

    def __post_init__(self):
        self.snr_levels = tuple(float(s) for s in self.snr_levels)
        if self.scale not in SCALES:
            raise ConfigurationError(f"scale must be one of {SCALES}, got {self.scale!r}")
        if self.unit not in ("tcn", "1drn"):
            raise ConfigurationError(f"unit must be 'tcn' or '1drn', got {self.unit!r}")
        for name in ("frontend_lr", "ae_lr", "msr_lr", "joint_lr", "lr_floor"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        for name in ("batch", "plateau_window", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be at least 1")
        for name in ("frontend_steps", "ae_steps", "msr_steps", "joint_steps", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be non-negative")
        self.noise_spec()  # validates the probabilities

    # ------------------------------------------------------------ derived
    def noise_spec(self) -> NoiseSpec:
        return NoiseSpec(p_n=self.p_noise, snr_levels=self.snr_levels, n_sources=self.n_sources)

    def frontend_config(self) -> P3DConfig:
        return P3DConfig.full() if self.scale == "full" else P3DConfig.desk(self.frontend_width)

    def ae_config(self) -> AEConfig:
        video_in = self.frontend_config().out_width
        if self.scale == "full":
            return AEConfig(unit=self.unit, video_in=video_in, input_scale=self.input_scale)
        return AEConfig.desk(self.unit, video_in=video_in, input_scale=self.input_scale)

    def msr_config(self) -> MSRConfig:
        video_in = self.frontend_config().out_width
        extra = dict(input_scale=self.input_scale, label_smoothing=self.label_smoothing,
                     modality_dropout=self.modality_dropout)
        if self.scale == "full":
            return MSRConfig(video_in=video_in, **extra)
        return MSRConfig.desk(video_in=video_in, **extra)

    def resolve_data_root(self) -> Path:
        root = self.data_root or os.environ.get(DATA_ROOT_ENV)
        if not root:
            raise ConfigurationError(f"no data root: pass --data-root or set ${DATA_ROOT_ENV}")
        path = Path(root)
        if not path.is_dir():
            raise ConfigurationError(f"data root {path} does not exist")
        return path

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["snr_levels"] = list(self.snr_levels)
        return d


def load_config(path: Optional[str] = None, overrides: Optional[Mapping[str, Any]] = None) -> RunConfig:
    """Read ``path`` (JSON object) if given, then apply non-None ``overrides``."""
    values: Dict[str, Any] = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {p} does not exist")
        try:
            values = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{p}: invalid JSON ({exc})") from exc
        if not isinstance(values, dict):
            raise ConfigurationError(f"{p}: top level must be an object")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
    for key, value in (overrides or {}).items():
        if value is not None:
            if key not in known:
                raise ConfigurationError(f"unknown config key {key!r}")
            values[key] = value
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from exc


def architecture_hash(model_config) -> str:
    """Short digest of the fields that determine parameter shapes and the forward pass."""
    d = asdict(model_config)
    for training_only in ("label_smoothing", "modality_dropout", "dropout"):
        d.pop(training_only, None)
    blob = json.dumps(d, sort_keys=True, default=list).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]
