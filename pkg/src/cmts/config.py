"""Sectioned key = value configuration files.

Sections: [model], [train], [synthesize], [metrics], [predictor], [data].
Unknown keys are rejected so typos do not silently fall back to defaults.
"""
import configparser
import dataclasses

from .errors import InputError
from .metrics import DpgmmConfig
from .model import ModelConfig
from .predictor import PredictorConfig
from .training import LossWeights, TrainConfig


@dataclasses.dataclass
class SynthesizeConfig:
    lam: float = 0.3
    n: int = 256
    style_source: str = "random"


@dataclasses.dataclass
class DataConfig:
    T: int = 50
    dt: float = 0.1
    lines_T: int = 16
    perturb_magnitude: float = 2.0


@dataclasses.dataclass
class Settings:
    model: ModelConfig = dataclasses.field(default_factory=ModelConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    synthesize: SynthesizeConfig = dataclasses.field(default_factory=SynthesizeConfig)
    metrics: DpgmmConfig = dataclasses.field(default_factory=DpgmmConfig)
    predictor: PredictorConfig = dataclasses.field(default_factory=PredictorConfig)
    data: DataConfig = dataclasses.field(default_factory=DataConfig)


def _coerce(raw, default, key):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if default is None:
            if raw.lower() in ("", "none"):
                return None
            try:
                return int(raw)
            except ValueError:
                return float(raw)
    except ValueError:
        raise InputError(f"bad value for {key!r}: {raw!r}") from None
    return raw


def _apply(obj, section, items):
    names = {f.name for f in dataclasses.fields(obj)}
    updates = {}
    for key, raw in items:
        if key not in names:
            raise InputError(f"[{section}] unknown key {key!r}")
        updates[key] = _coerce(raw, getattr(obj, key), f"{section}.{key}")
    return dataclasses.replace(obj, **updates)


def load_settings(path=None):
    s = Settings()
    if not path:
        return s
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case-sensitive (D, H, C, T)
    try:
        with open(path, encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as exc:
        raise InputError(f"{path}: {exc}") from None
    for sec in cp.sections():
        items = list(cp.items(sec))
        if sec == "train":
            w = {k: v for k, v in items if k in ("alpha", "beta", "gamma")}
            rest = [(k, v) for k, v in items if k not in w]
            weights = _apply(s.train.weights, "train", w.items())
            s.train = dataclasses.replace(_apply(s.train, "train", rest), weights=weights)
        elif sec in ("model", "synthesize", "metrics", "predictor", "data"):
            setattr(s, sec, _apply(getattr(s, sec), sec, items))
        else:
            raise InputError(f"{path}: unknown section [{sec}]")
    return s


def dump_settings(s):
    """Render settings back into the file format."""
    lines = []
    for sec in ("model", "train", "synthesize", "metrics", "predictor", "data"):
        obj = getattr(s, sec)
        lines.append(f"[{sec}]")
        for f in dataclasses.fields(obj):
            val = getattr(obj, f.name)
            if isinstance(val, LossWeights):
                for k in ("alpha", "beta", "gamma"):
                    lines.append(f"{k} = {getattr(val, k)!r}")
                continue
            lines.append(f"{f.name} = {'none' if val is None else val}")
        lines.append("")
    return "\n".join(lines)
