"""Run configuration: a flat ``section.key = value`` file plus flag overrides.

Every option is addressable as ``section.key`` in a config file and as
``--section-key`` on the command line (underscores become dashes).  Flags
win over file values, which win over the built-in defaults.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Callable

from .augment import AugmentConfig
from .backbone import BackboneConfig
from .errors import ConfigError
from .trainer import TrainConfig


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _optional_float(text: str):
    return None if str(text).lower() in ("none", "") else float(text)


def _path(text: str):
    return None if str(text) in ("", "none") else Path(text)


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Option:
    section: str
    key: str
    parse: Callable
    default: object
    help: str
    aliases: tuple = ()

    @property
    def name(self) -> str:
        return f"{self.section}.{self.key}"

    @property
    def flag(self) -> str:
        return f"--{self.section}-{self.key.replace('_', '-')}"

    @property
    def dest(self) -> str:
        return f"{self.section}__{self.key}"


_HELP = {
    "model.input_resolution": "side length images are resized to",
    "model.stage_channels": "channel width of each residual stage, comma separated",
    "model.blocks_per_stage": "residual blocks in each stage, comma separated",
    "model.embedding_dim": "length D of the embedding vector",
    "model.stem_kernel": "stem convolution kernel size (odd)",
    "model.stem_stride": "stem convolution stride",
    "train.P": "classes per batch",
    "train.K": "images per class in a batch",
    "train.lr": "SGD learning rate for pre-training",
    "train.momentum": "SGD momentum coefficient",
    "train.triplet_lr": "learning rate for triplet training ('none' reuses train.lr)",
    "train.pretrain_target_acc": "train top-1 accuracy that ends pre-training",
    "train.pretrain_max_epochs": "epoch budget for pre-training",
    "train.triplet_steps": "number of triplet training steps",
    "train.margin": "'soft' for the soft margin, or a positive number for a hard margin",
    "train.reduction": "'sum' or 'mean' over the mined triplets",
    "train.seed": "seed for batch sampling, augmentation and initialization",
    "train.eval_every": "validation EER interval in triplet steps (0 disables)",
    "augment.sigma": "Gaussian sigma of the sharpening filter",
    "augment.amount": "strength of the sharpening filter",
    "augment.p_train": "probability that a training image is augmented",
    "data.train": "training dataset directory (<root>/<class>/<image>)",
    "data.val": "optional validation dataset directory",
    "eval.metric": "'cosine' or 'l2'",
    "eval.far_target": "false accept rate at which FRR is reported",
}

_PARSERS = {int: int, float: float, str: str}
_SKIP = {("model", "num_classes")}
_ALIASES = {"train.seed": ("--seed",), "data.train": ("--data",), "eval.metric": ("--metric",),
            "eval.far_target": ("--far",)}


def _options_from(section: str, cls) -> list[Option]:
    out = []
    defaults = cls()
    for f in fields(cls):
        if (section, f.name) in _SKIP:
            continue
        value = getattr(defaults, f.name)
        if isinstance(value, tuple):
            parse = _int_list
        elif f.name == "triplet_lr":
            parse = _optional_float
        elif f.name == "margin":
            parse, value = str, str(value)
        else:
            parse = _PARSERS[type(value)]
        name = f"{section}.{f.name}"
        out.append(Option(section, f.name, parse, value, _HELP[name], _ALIASES.get(name, ())))
    return out


OPTIONS: list[Option] = (
    _options_from("model", BackboneConfig)
    + _options_from("train", TrainConfig)
    + _options_from("augment", AugmentConfig)
    + [
        Option("data", "train", _path, None, _HELP["data.train"], _ALIASES["data.train"]),
        Option("data", "val", _path, None, _HELP["data.val"]),
        Option("eval", "metric", str, "cosine", _HELP["eval.metric"], _ALIASES["eval.metric"]),
        Option("eval", "far_target", float, 0.001, _HELP["eval.far_target"], _ALIASES["eval.far_target"]),
    ]
)
BY_NAME = {o.name: o for o in OPTIONS}


def parse_config_text(text: str, origin: str = "<config>") -> dict:
    """Raw ``{"section.key": "value"}`` pairs; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{lineno}: expected 'section.key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in BY_NAME:
            raise ConfigError(f"{origin}:{lineno}: unknown option {key!r}")
        values[key] = value
    return values


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


@dataclass(frozen=True)
class RunConfig:
    model: BackboneConfig = field(default_factory=BackboneConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data_train: Path | None = None
    data_val: Path | None = None
    metric: str = "cosine"
    far_target: float = 0.001

    @classmethod
    def from_values(cls, raw: dict) -> "RunConfig":
        """Build from ``{"section.key": value}``; strings are parsed, missing keys defaulted."""
        typed = {o.name: o.default for o in OPTIONS}
        for name, value in raw.items():
            opt = BY_NAME.get(name)
            if opt is None:
                raise ConfigError(f"unknown option {name!r}")
            try:
                typed[name] = opt.parse(value) if isinstance(value, str) else value
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{name}: cannot parse {value!r} ({exc})") from None

        def section(name):
            return {o.key: typed[o.name] for o in OPTIONS if o.section == name}

        try:
            cfg = cls(
                model=BackboneConfig(**section("model")),
                train=TrainConfig(**section("train")),
                augment=AugmentConfig(**section("augment")),
                data_train=typed["data.train"],
                data_val=typed["data.val"],
                metric=typed["eval.metric"],
                far_target=typed["eval.far_target"],
            )
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if cfg.metric not in ("cosine", "l2"):
            raise ConfigError(f"eval.metric must be 'cosine' or 'l2', got {cfg.metric!r}")
        if not 0.0 < cfg.far_target < 1.0:
            raise ConfigError("eval.far_target must lie strictly between 0 and 1")
        return cfg

    def values(self) -> dict:
        """Effective ``{"section.key": value}`` for every option."""
        out = {}
        for o in OPTIONS:
            if o.section == "model":
                v = getattr(self.model, o.key)
            elif o.section == "train":
                v = getattr(self.train, o.key)
                v = str(v) if o.key == "margin" else v
            elif o.section == "augment":
                v = getattr(self.augment, o.key)
            elif o.name == "data.train":
                v = self.data_train
            elif o.name == "data.val":
                v = self.data_val
            elif o.name == "eval.metric":
                v = self.metric
            else:
                v = self.far_target
            out[o.name] = v
        return out

    def to_text(self, sections=None) -> str:
        """Config-file text that parses back to this configuration."""
        lines = [f"{k} = {_format(v)}" for k, v in self.values().items()
                 if sections is None or k.split(".")[0] in sections]
        return "\n".join(lines) + "\n"


def add_config_flags(parser: argparse.ArgumentParser, sections) -> None:
    """One ``--section-key`` flag (plus aliases) per option in the given sections."""
    parser.add_argument("--config", type=Path, default=None, metavar="FILE",
                        help="config file of 'section.key = value' lines; flags override it")
    for sec in sections:
        group = parser.add_argument_group(f"{sec} options")
        for o in OPTIONS:
            if o.section != sec:
                continue
            group.add_argument(o.flag, *o.aliases, dest=o.dest, default=None, metavar="VALUE",
                               help=f"{o.help} (config key {o.name}; default: {_format(o.default)})")


def resolve(args: argparse.Namespace, sections) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    raw = load_config_file(args.config) if getattr(args, "config", None) else {}
    for o in OPTIONS:
        if o.section in sections:
            flag_value = getattr(args, o.dest, None)
            if flag_value is not None:
                raw[o.name] = flag_value
    return RunConfig.from_values(raw)
