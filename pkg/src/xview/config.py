"""Experiment configuration files (TOML) with strict validation.

Every section maps onto a dataclass; unknown sections or keys, wrong value
types and out-of-range values raise :class:`ConfigError` before any work
starts. ``preset:NAME`` loads one of the configs shipped in
``xview/presets``. Relative data paths resolve against the config file's
directory.
"""

import dataclasses
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional, Tuple

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .crossdomain import VARIANTS, ArchitectureConfig, LossWeights, SharingSpec
from .data import SynthConfig
from .errors import ConfigError
from .optim import OptimizerConfig
from .variational import LatentDims

DATA_FILES = {
    "source": "source.xvds",
    "target_train": "target_train.xvds",
    "target_dev": "target_dev.xvds",
    "target_test": "target_test.xvds",
}
LABELS_FILE = "labels.txt"


@dataclass
class ArchitectureSection:
    variant: str = "A_plus_C"
    shared_dim: int = 8
    private_x_dim: int = 4
    private_y_dim: int = 4
    target_private_dim: int = 4
    sharing: str = "full"
    split_index: int = 1
    encoder_hidden: Tuple[int, ...] = (128, 128)
    decoder_hidden: Tuple[int, ...] = (128, 128)
    dropout: float = 0.0
    adaptation_layers: bool = False
    frontend_dnn_layers: int = 0

    def build(self):
        split = self.split_index if self.sharing == "partial" else 0
        return ArchitectureConfig(
            variant=self.variant,
            latent=LatentDims(self.shared_dim, self.private_x_dim, self.private_y_dim),
            target_private_dim=self.target_private_dim,
            sharing=SharingSpec(self.sharing, split),
            encoder_hidden=self.encoder_hidden, decoder_hidden=self.decoder_hidden,
            dropout=self.dropout, adaptation_layers=self.adaptation_layers,
            frontend_dnn_layers=self.frontend_dnn_layers)


@dataclass
class WindowSection:
    x: int = 1
    y: int = 1


@dataclass
class LossSection:
    alpha: float = 0.5
    beta: float = 0.5
    ratio: float = 0.5
    n_samples: int = 1


@dataclass
class RecognizerSection:
    hidden: int = 32
    layers: int = 2
    dropout: float = 0.0
    frontend_width: int = 64
    frontend_dnn_layers: int = 0
    window: int = 1
    finetune: bool = False
    #: merged-data control: also train on the labelled source utterances
    include_source: bool = False
    dev_beam: int = 1


@dataclass
class JointSection:
    share_top: bool = True
    source_input: str = "raw"
    source_weight: float = 1.0
    target_weight: float = 1.0
    source_frontend_layers: int = 0
    source_finetune: bool = False
    adapter_hidden: Optional[int] = None


@dataclass
class DecodeSection:
    beam: int = 10


@dataclass
class DataSection:
    #: directory holding the files written by ``xview synth``
    dir: Optional[str] = None


@dataclass
class ExperimentConfig:
    seed: int = 0
    out: Optional[str] = None
    architecture: ArchitectureSection = field(default_factory=ArchitectureSection)
    windows: WindowSection = field(default_factory=WindowSection)
    loss: LossSection = field(default_factory=LossSection)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    recognizer: RecognizerSection = field(default_factory=RecognizerSection)
    joint: JointSection = field(default_factory=JointSection)
    decode: DecodeSection = field(default_factory=DecodeSection)
    data: DataSection = field(default_factory=DataSection)
    synth: SynthConfig = field(default_factory=SynthConfig)
    #: directory of the config file (for relative paths)
    base_dir: Path = field(default=Path("."), repr=False)

    def validate(self):
        self.architecture_config()
        LossWeights(self.loss.alpha, self.loss.beta)
        if not 0.0 < self.loss.ratio < 1.0:
            raise ConfigError("loss.ratio must lie in (0, 1)")
        if self.loss.n_samples < 1:
            raise ConfigError("loss.n_samples must be >= 1")
        for name, w in (("windows.x", self.windows.x), ("windows.y", self.windows.y),
                        ("recognizer.window", self.recognizer.window)):
            if w < 1 or w % 2 == 0:
                raise ConfigError(f"{name} must be odd and positive, got {w}")
        if self.recognizer.hidden < 1 or self.recognizer.layers < 1:
            raise ConfigError("recognizer hidden size and layers must be >= 1")
        if not 0.0 <= self.recognizer.dropout < 1.0:
            raise ConfigError("recognizer.dropout must lie in [0, 1)")
        if self.recognizer.dev_beam < 1 or self.decode.beam < 1:
            raise ConfigError("beam widths must be >= 1")
        if self.joint.source_input not in ("raw", "features"):
            raise ConfigError("joint.source_input must be 'raw' or 'features'")
        if self.joint.source_weight < 0 or self.joint.target_weight < 0:
            raise ConfigError("joint batch weights must be >= 0")
        if self.joint.adapter_hidden is not None and self.joint.adapter_hidden < 1:
            raise ConfigError("joint.adapter_hidden must be >= 1")
        return self

    def architecture_config(self):
        if self.architecture.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.architecture.variant!r}")
        return self.architecture.build()

    def data_dir(self, override=None):
        d = override if override is not None else self.data.dir
        if d is None:
            raise ConfigError("no data directory: set [data] dir or pass --data")
        path = Path(d)
        if override is None and not path.is_absolute():
            path = self.base_dir / path
        if not path.is_dir():
            raise ConfigError(f"data directory {str(path)!r} does not exist")
        return path


def _coerce(section, name, value, default):
    where = f"{section}.{name}" if section else name
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be a boolean")
        return value
    if isinstance(default, int):
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        raise ConfigError(f"{where} must be an integer")
    if isinstance(default, float):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
        raise ConfigError(f"{where} must be a number")
    if isinstance(default, tuple):
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool)
                                                  for v in value):
            raise ConfigError(f"{where} must be a list of integers")
        return tuple(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if default is None:
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise ConfigError(f"{where} must be an integer or string")
        return value
    raise ConfigError(f"{where}: unsupported value")


def _section(cls, section, table):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in table.items():
        if key not in known:
            raise ConfigError(f"unknown key {key!r} in [{section}]; expected one of "
                              f"{sorted(known)}")
        f = known[key]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        kwargs[key] = _coerce(section, key, value, default)
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from None


_TABLES = {
    "architecture": ArchitectureSection, "windows": WindowSection, "loss": LossSection,
    "optimizer": OptimizerConfig, "recognizer": RecognizerSection, "joint": JointSection,
    "decode": DecodeSection, "data": DataSection, "synth": SynthConfig,
}


def config_from_dict(doc, base_dir=Path(".")):
    kwargs = {}
    for key, value in doc.items():
        if key in _TABLES:
            kwargs[key] = _section(_TABLES[key], key, value)
        elif key == "seed":
            kwargs["seed"] = _coerce(None, "seed", value, 0)
        elif key == "out":
            kwargs["out"] = _coerce(None, "out", value, "")
        else:
            raise ConfigError(f"unknown top-level key {key!r}")
    if "seed" not in doc.get("synth", {}):
        synth = kwargs.get("synth", SynthConfig())
        kwargs["synth"] = dataclasses.replace(synth, seed=kwargs.get("seed", 0))
    cfg = ExperimentConfig(base_dir=Path(base_dir), **kwargs)
    return cfg.validate()


def preset_names():
    return sorted(p.name[:-5] for p in resources.files("xview.presets").iterdir()
                  if p.name.endswith(".toml"))


def load_config(spec):
    """Load ``spec``: a TOML file path or ``preset:NAME``."""
    spec = str(spec)
    if spec.startswith("preset:"):
        name = spec[len("preset:"):]
        res = resources.files("xview.presets") / f"{name}.toml"
        if not res.is_file():
            raise ConfigError(f"unknown preset {name!r}; available: {preset_names()}")
        text, base = res.read_text(encoding="utf-8"), Path(".")
    else:
        path = Path(spec)
        if not path.is_file():
            raise ConfigError(f"config file {spec!r} does not exist")
        text, base = path.read_text(encoding="utf-8"), path.parent
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse config {spec!r}: {exc}") from None
    return config_from_dict(doc, base)
