"""Run configuration: an INI-style file with ``[model]``, ``[train]`` and
``[data]`` sections of ``key = value`` pairs.  Every key has a default;
unknown sections or keys are rejected.

``[model]``
    scale (4), channels (128), num_res_blocks (10), ghost_ratio (2),
    primary_kernel (3), cheap_kernel (3), ghost_trunk (false)
``[train]``
    epochs (70), steps_per_epoch (100), lr0 (1e-4), lr_decay (0.1),
    lr_decay_every (10), weight_decay (5e-4), beta1 (0.9), beta2 (0.999),
    eps (1e-8), clip_length (4), patch_size (64), batch (4), sigma (1.6),
    seed (0), init_seed (0)
``[data]``
    synth_kind (mixed; or one of the synthetic kinds), synth_clips (8),
    synth_frames (8), synth_size (64), synth_motion (mixed; or "dx,dy"),
    synth_seed (0), val_clips (0), val_seed (1000), data_dir (empty),
    val_dir (empty)
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .cell import GrnnConfig
from .errors import ConfigError
from .train import TrainConfig


@dataclass
class DataConfig:
    synth_kind: str = "mixed"
    synth_clips: int = 8
    synth_frames: int = 8
    synth_size: int = 64
    synth_motion: str = "mixed"
    synth_seed: int = 0
    val_clips: int = 0
    val_seed: int = 1000
    data_dir: str = ""
    val_dir: str = ""


@dataclass
class RunConfig:
    model: GrnnConfig = field(default_factory=GrnnConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    init_seed: int = 0


_SECTIONS = {"model": GrnnConfig, "train": TrainConfig, "data": DataConfig}
_EXTRA = {"train": {"init_seed": int}}
_HIDDEN = {"model": {"color_channels"}}


def _convert(section, key, raw, typ):
    try:
        if typ is bool:
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        return typ(raw.strip())
    except ValueError:
        raise ConfigError(f"[{section}] {key}: cannot parse {raw!r} as {typ.__name__}") from None


def _field_types(cls):
    hints = {"int": int, "float": float, "str": str, "bool": bool}
    return {f.name: hints.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
            for f in dataclasses.fields(cls)}


def parse_config(text, source="<string>"):
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}".replace("\n", " ")) from None
    values = {}
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        types = {k: t for k, t in _field_types(_SECTIONS[section]).items()
                 if k not in _HIDDEN.get(section, ())}
        types.update(_EXTRA.get(section, {}))
        kw = {}
        for key, raw in parser.items(section):
            if key not in types:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            kw[key] = _convert(section, key, raw, types[key])
        values[section] = kw
    init_seed = values.get("train", {}).pop("init_seed", 0)
    try:
        return RunConfig(GrnnConfig(**values.get("model", {})),
                         TrainConfig(**values.get("train", {})),
                         DataConfig(**values.get("data", {})), init_seed)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such config file: {path}")
    return parse_config(path.read_text(), str(path))


def dump_config(cfg: RunConfig):
    """Render ``cfg`` in the file format (round-trips through :func:`parse_config`)."""
    lines = []
    for section, obj in (("model", cfg.model), ("train", cfg.train), ("data", cfg.data)):
        lines.append(f"[{section}]")
        for f in dataclasses.fields(obj):
            if f.name in _HIDDEN.get(section, ()):
                continue
            v = getattr(obj, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        if section == "train":
            lines.append(f"init_seed = {cfg.init_seed}")
        lines.append("")
    return "\n".join(lines)
