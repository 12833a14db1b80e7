"""Experiment configuration: dataclasses plus a flat `key = value` file format.

One human-editable file describes a whole experiment (generation settings
included); command-line flags may only override keys that exist here, and
the effective configuration is echoed into every output file. Unknown keys
are rejected; missing keys fall back to the documented defaults.

Default training values follow the published CoNLL03-scale recipe
(lr 1e-5, batch 8, EMA 0.995, warmup 200, 50 self-training epochs after 1
pre-training epoch, confidence gate 0.9, uncertainty gate 0.01, 8 stochastic
passes, dropout 0.5, transfer ratio 0.3, refresh every 6000 steps). Desk
scale synthetic runs override most of them; see configs/.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field

from .distant_supervision import ConfigError, GeneratorConfig


@dataclass(frozen=True)
class ExperimentConfig:
    run_name: str = "run"
    seed: int = 0

    # data
    train_path: str = ""
    train_gold_path: str = ""  # optional clean reference for diagnostics
    dev_path: str = ""
    test_path: str = ""
    entity_types: tuple = ("PER", "LOC", "ORG", "MISC")
    output_dir: str = "runs/run"

    # optimization
    lr: float = 1e-5
    batch_size: int = 8
    ema_alpha: float = 0.995
    warmup_steps: int = 200
    total_epochs: int = 50      # self-training epochs
    pretrain_epochs: int = 1

    # pseudo-label selection
    sigma_co: float = 0.9
    sigma_ua: float = 0.01
    mc_passes: int = 8
    dropout_rate: float = 0.5

    # student-student transfer
    scl_delta: float = 0.3

    # periodic label-store refresh
    update_cycle: int = 6000

    # tagger architectures (two intentionally different views)
    embedding_dim: int = 16
    net1_hidden: int = 64
    net1_window: int = 2
    net2_hidden: int = 32
    net2_window: int = 1
    vocab_min_count: int = 1
    case_folding: bool = False

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0.0 <= self.ema_alpha <= 1.0:
            raise ConfigError("ema_alpha must be in [0, 1]")
        if self.total_epochs < 1 or self.pretrain_epochs < 1:
            raise ConfigError("epoch counts must be >= 1")
        if self.mc_passes < 2:
            raise ConfigError("mc_passes must be >= 2")
        if not 0.0 <= self.sigma_co <= 1.0:
            raise ConfigError("sigma_co must be in [0, 1]")
        if self.sigma_ua < 0.0:
            raise ConfigError("sigma_ua must be >= 0")
        if not 0.0 <= self.scl_delta <= 1.0:
            raise ConfigError("scl_delta must be in [0, 1]")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must be in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.warmup_steps < 0 or self.update_cycle < 0:
            raise ConfigError("warmup_steps and update_cycle must be >= 0")
        if min(self.embedding_dim, self.net1_hidden, self.net2_hidden) < 1:
            raise ConfigError("tagger dimensions must be >= 1")
        if min(self.net1_window, self.net2_window) < 0:
            raise ConfigError("window radii must be >= 0")
        if self.vocab_min_count < 1:
            raise ConfigError("vocab_min_count must be >= 1")

    def replace(self, **overrides) -> "ExperimentConfig":
        return dataclasses.replace(self, **overrides)

    def without_utl(self) -> "ExperimentConfig":
        """Disable uncertainty-aware selection: the gate passes everything."""
        return self.replace(sigma_ua=float("inf"), sigma_co=0.0)

    def without_scl(self) -> "ExperimentConfig":
        """Disable student-student transfer."""
        return self.replace(scl_delta=0.0)


@dataclass(frozen=True)
class ConfigFile:
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)

    def validate(self) -> None:
        self.experiment.validate()
        self.generator.validate()


# Shared keys feed both sections so one file stays internally consistent.
_SHARED_KEYS = ("seed", "entity_types")
_GEN_PREFIX = "gen_"


def _coerce(key: str, raw: str, typ):
    origin = typing.get_origin(typ)
    try:
        if typ is bool:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)  # accepts "inf"
        if typ is str:
            return raw
        if typ is tuple or origin is tuple:
            return tuple(part.strip() for part in raw.split(",") if part.strip())
    except ValueError:
        raise ConfigError(f"key {key!r}: cannot parse {raw!r} as {typ}") from None
    raise ConfigError(f"key {key!r} has unsupported type {typ}")


def _field_types(cls) -> dict:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


_EXP_TYPES = _field_types(ExperimentConfig)
_GEN_TYPES = _field_types(GeneratorConfig)


def parse_config_text(text: str) -> ConfigFile:
    exp_kw: dict = {}
    gen_kw: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"config line {lineno}: expected `key = value`")
        key, raw = (part.strip() for part in body.split("=", 1))
        if key in _SHARED_KEYS:
            exp_kw[key] = _coerce(key, raw, _EXP_TYPES[key])
            gen_kw[key] = _coerce(key, raw, _GEN_TYPES[key])
        elif key.startswith(_GEN_PREFIX) and key[len(_GEN_PREFIX):] in _GEN_TYPES:
            name = key[len(_GEN_PREFIX):]
            gen_kw[name] = _coerce(key, raw, _GEN_TYPES[name])
        elif key in _EXP_TYPES:
            exp_kw[key] = _coerce(key, raw, _EXP_TYPES[key])
        else:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
    cf = ConfigFile(experiment=ExperimentConfig(**exp_kw),
                    generator=GeneratorConfig(**gen_kw))
    cf.validate()
    return cf


def load_config(path) -> ConfigFile:
    with open(path, encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_to_flat_dict(cf: ConfigFile) -> dict:
    """The effective configuration in file-key form (echoed into outputs)."""
    flat: dict = {}
    for name in _EXP_TYPES:
        flat[name] = getattr(cf.experiment, name)
    for name in _GEN_TYPES:
        if name in _SHARED_KEYS:
            continue
        flat[_GEN_PREFIX + name] = getattr(cf.generator, name)
    for key, value in flat.items():
        if isinstance(value, tuple):
            flat[key] = list(value)
    return flat


def dump_config_text(cf: ConfigFile) -> str:
    lines = []
    for key, value in config_to_flat_dict(cf).items():
        if isinstance(value, list):
            value = ",".join(value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
