"""Run configuration: flat ``section.key = value`` files plus env overrides."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigurationError
from .network import ChannelConfig
from .som import SomConfig

ENV_PREFIX = "XMEXP_"


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple[int, ...]:
    return tuple(int(x) for x in text.split(",") if x.strip())


def _opt_float(text: str) -> float | None:
    return None if text.strip().lower() in ("", "auto", "none") else float(text)


# key -> (parser, default)
FIELDS: dict[str, tuple[Any, Any]] = {
    "seed": (int, 0),
    "data.synthetic": (_bool, True),
    "data.manifest": (str, ""),
    "synth.num_identities": (int, 4),
    "synth.samples_per_identity": (int, 10),
    "synth.image_noise": (float, 0.05),
    "synth.audio_noise": (float, 0.02),
    "synth.pitch_jitter": (float, 0.01),
    "synth.filter_spacing": (int, 3),
    "audio.sample_rate": (int, 16000),
    "audio.window_ms": (float, 25.0),
    "audio.hop_ms": (float, 10.0),
    "channel.image_size": (int, 64),
    "channel.latent_dim": (int, 128),
    "channel.visual_filters": (_ints, (16, 32, 64)),
    "channel.visual_kernels": (_ints, (5, 3, 3)),
    "channel.auditory_filters": (_ints, (16, 32, 64)),
    "channel.auditory_kernels": (_ints, (3, 3, 3)),
    "som.rows": (int, 10),
    "som.cols": (int, 10),
    "som.epochs": (int, 100),
    "som.lr_start": (float, 0.3),
    "som.lr_end": (float, 0.01),
    "som.sigma_start": (_opt_float, None),
    "som.sigma_end": (float, 0.5),
    "som.replay_capacity": (int, 50),
    "train.lr": (float, 0.5),
    "train.encoder_lr": (float, 0.02),
    "train.epochs": (int, 3),
    "train.split": (float, 0.7),
    "novel.identity": (str, ""),
    "novel.steps": (int, 6),
    "output.dir": (str, "runs"),
}


@dataclass
class RunConfig:
    values: dict[str, Any] = field(default_factory=lambda: {k: d for k, (_, d) in FIELDS.items()})

    def __getitem__(self, key: str) -> Any:
        return self.values[key]

    def set(self, key: str, text: str, where: str = "") -> None:
        if key not in FIELDS:
            raise ConfigurationError(f"{where}unknown config key {key!r}")
        parser = FIELDS[key][0]
        try:
            self.values[key] = parser(text.strip()) if parser is not str else text.strip()
        except ValueError as exc:
            raise ConfigurationError(f"{where}bad value for {key!r}: {exc}") from exc

    def visual_channel(self) -> ChannelConfig:
        size = self["channel.image_size"]
        return ChannelConfig(3, size, size, self["channel.visual_filters"],
                             self["channel.visual_kernels"], self["channel.latent_dim"])

    def auditory_channel(self) -> ChannelConfig:
        return ChannelConfig(1, 100, 40, self["channel.auditory_filters"],
                             self["channel.auditory_kernels"], self["channel.latent_dim"])

    def som(self) -> SomConfig:
        return SomConfig(rows=self["som.rows"], cols=self["som.cols"], dim=2 * self["channel.latent_dim"],
                         epochs=self["som.epochs"], lr_start=self["som.lr_start"], lr_end=self["som.lr_end"],
                         sigma_start=self["som.sigma_start"], sigma_end=self["som.sigma_end"])

    def model(self):
        from .trainer import ModelConfig
        return ModelConfig(self.visual_channel(), self.auditory_channel(), self.som(),
                           self["som.replay_capacity"], self["train.lr"], self["train.encoder_lr"])

    def synthetic(self):
        from .data import SyntheticSpec
        return SyntheticSpec(num_identities=self["synth.num_identities"],
                             samples_per_identity=self["synth.samples_per_identity"],
                             image_size=self["channel.image_size"],
                             image_noise=self["synth.image_noise"],
                             sample_rate=self["audio.sample_rate"],
                             filter_spacing=self["synth.filter_spacing"],
                             audio_noise=self["synth.audio_noise"],
                             pitch_jitter=self["synth.pitch_jitter"])

    def validate(self) -> None:
        if not self["data.synthetic"] and not self["data.manifest"]:
            raise ConfigurationError("data.manifest is required when data.synthetic = false")
        if not 0.0 < self["train.split"] < 1.0:
            raise ConfigurationError(f"train.split must be in (0, 1), got {self['train.split']}")
        if self["train.epochs"] < 1:
            raise ConfigurationError(f"train.epochs must be >= 1, got {self['train.epochs']}")
        if self["novel.steps"] < 1:
            raise ConfigurationError(f"novel.steps must be >= 1, got {self['novel.steps']}")
        if self["som.replay_capacity"] < 1:
            raise ConfigurationError("som.replay_capacity must be >= 1")
        self.model()
        self.synthetic()


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        cfg.set(key.strip(), value, f"{source}:{lineno}: ")
    return cfg


def env_key(name: str) -> str:
    """``XMEXP_SOM_LR_START`` -> ``som.lr_start``; ``XMEXP_SEED`` -> ``seed``."""
    rest = name[len(ENV_PREFIX):].lower()
    if rest in FIELDS:
        return rest
    section, _, key = rest.partition("_")
    return f"{section}.{key}"


def load_config(path: str | Path | None = None, env: Mapping[str, str] | None = None) -> RunConfig:
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
        cfg = parse_config(text, str(path))
    else:
        cfg = RunConfig()
    env = os.environ if env is None else env
    for name in sorted(env):
        if name.startswith(ENV_PREFIX):
            cfg.set(env_key(name), env[name], f"env {name}: ")
    return cfg


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for key in FIELDS:
        v = cfg[key]
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        elif isinstance(v, bool):
            v = str(v).lower()
        elif v is None:
            v = "auto"
        lines.append(f"{key} = {v}")
    return "\n".join(lines) + "\n"
