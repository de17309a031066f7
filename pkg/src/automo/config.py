"""Run configuration: one INI file with a section per stage.

Every key is optional; defaults are the desk-scale settings (MP 0.5 and
lambda 0.8 as published).  Unknown sections or keys are rejected so that a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .data import AugConfig, SynthSpec
from .fusion import FusionConfig
from .imia import ArchGrid
from .robustness import DEFAULT_EPSILONS


class ConfigError(ValueError):
    pass


@dataclass
class DataSection:
    train_manifest: str = ""
    test_manifest: str = ""
    side: int = 28
    train_per_class: int = 150
    test_per_class: int = 50
    imbalance_ratio: int = 3
    noise_sigma: float = 0.05
    label_noise: float = 0.0


@dataclass
class MixerSection:
    patch_size: int = 7
    base_c: int = 32


@dataclass
class ImiaSection:
    n: int = 20
    mp: float = 0.5
    sigma: float = 0.05
    max_iter: int = 30
    clone_budget: int = 20
    mutate_fraction: float = 0.1
    threshold: float = 0.5


@dataclass
class FusionSection:
    lam: float = 0.8
    t: int = 8
    flip_prob: float = 0.5
    max_shift: int = 2
    aug_noise: float = 0.02
    aug_ops: str = "flip-h,shift,gauss-noise"
    log_base: str = "e"


@dataclass
class AttackSection:
    epsilons: str = ",".join(str(e) for e in DEFAULT_EPSILONS)


@dataclass
class TuneSection:
    budget: int = 25
    validation_fraction: float = 0.2
    random_search: bool = False
    n: int = 20
    max_iter: int = 30


@dataclass
class EvaluateSection:
    repeats: int = 5


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    mixer: MixerSection = field(default_factory=MixerSection)
    imia: ImiaSection = field(default_factory=ImiaSection)
    fusion: FusionSection = field(default_factory=FusionSection)
    attack: AttackSection = field(default_factory=AttackSection)
    tune: TuneSection = field(default_factory=TuneSection)
    evaluate: EvaluateSection = field(default_factory=EvaluateSection)
    base_dir: Path = Path(".")

    # derived views -------------------------------------------------------

    def grid(self) -> ArchGrid:
        return ArchGrid.scaled(self.data.side, self.mixer.patch_size, self.mixer.base_c)

    def fusion_config(self, lam: float | None = None) -> FusionConfig:
        f = self.fusion
        base = {"e": math.e, "2": 2.0, "10": 10.0}.get(f.log_base)
        if base is None:
            raise ConfigError(f"fusion.log_base must be e, 2 or 10, got {f.log_base!r}")
        ops = tuple(op.strip() for op in f.aug_ops.split(",") if op.strip())
        aug = AugConfig(flip_prob=f.flip_prob, max_shift=f.max_shift, noise_sigma=f.aug_noise, ops=ops)
        return FusionConfig(lam=f.lam if lam is None else lam, T=f.t, aug=aug, log_base=base)

    def synth_spec(self, split: str) -> SynthSpec:
        n = self.data.train_per_class if split == "train" else self.data.test_per_class
        return SynthSpec(n, self.data.imbalance_ratio, self.data.noise_sigma, self.data.side)

    def epsilons(self) -> list[float]:
        try:
            eps = [float(e) for e in self.attack.epsilons.split(",") if e.strip()]
        except ValueError as exc:
            raise ConfigError(f"attack.epsilons: {exc}") from exc
        if eps != sorted(eps) or any(e < 0 or e > 1 for e in eps):
            raise ConfigError("attack.epsilons must be ascending values in [0, 1]")
        return eps

    def path(self, value: str, default: Path) -> Path:
        if not value:
            return default
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p


_SECTIONS = {
    "data": DataSection,
    "mixer": MixerSection,
    "imia": ImiaSection,
    "fusion": FusionSection,
    "attack": AttackSection,
    "tune": TuneSection,
    "evaluate": EvaluateSection,
}

_KEY_ALIASES = {"lambda": "lam"}


def _coerce(parser, section, key, kind):
    try:
        if kind is bool:
            return parser.getboolean(section, key)
        if kind is int:
            return parser.getint(section, key)
        if kind is float:
            return parser.getfloat(section, key)
        return parser.get(section, key)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}: {exc}") from exc


def parse_config(text: str, base_dir: Path = Path(".")) -> RunConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc).splitlines()[0]) from exc
    cfg = RunConfig(base_dir=base_dir)
    for section in parser.sections():
        if section == "run":
            for key in parser[section]:
                if key != "seed":
                    raise ConfigError(f"unknown key [run] {key}")
                cfg.seed = _coerce(parser, "run", "seed", int)
            continue
        if section not in _SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        target = getattr(cfg, section)
        kinds = {f.name: f.type for f in fields(target)}
        for key in parser[section]:
            name = _KEY_ALIASES.get(key, key)
            if name not in kinds:
                raise ConfigError(f"unknown key [{section}] {key}")
            kind = {"int": int, "float": float, "bool": bool, "str": str}[kinds[name]]
            setattr(target, name, _coerce(parser, section, key, kind))
    _validate(cfg)
    return cfg


def _validate(cfg: RunConfig) -> None:
    if cfg.imia.n < 2:
        raise ConfigError("imia.n must be >= 2")
    if not 0 <= cfg.imia.mp <= 1:
        raise ConfigError("imia.mp must lie in [0, 1]")
    if not 0 <= cfg.fusion.lam <= 1:
        raise ConfigError("fusion.lambda must lie in [0, 1]")
    if cfg.data.side % cfg.mixer.patch_size:
        raise ConfigError("mixer.patch_size must divide data.side")
    if cfg.evaluate.repeats < 1:
        raise ConfigError("evaluate.repeats must be >= 1")
    if not 0 <= cfg.data.label_noise < 1:
        raise ConfigError("data.label_noise must lie in [0, 1)")
    cfg.fusion_config()
    cfg.epsilons()


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    return parse_config(text, path.parent)


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for a named sub-stream of the master seed."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])
