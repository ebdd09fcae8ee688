"""Perception (encoder) and expectation (decoder) columns for both modalities."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .kernel import (Conv2D, Crop, Dense, Flatten, MaxPool2x2, Parameter, ReLU,
                     Reshape, Sequential, Sigmoid, Upsample2x)

VISUAL = "visual"
AUDITORY = "auditory"
MODALITIES = (VISUAL, AUDITORY)


@dataclass(frozen=True)
class ChannelConfig:
    in_channels: int
    height: int
    width: int
    filters: tuple[int, ...] = (16, 32, 64)
    kernels: tuple[int, ...] = (3, 3, 3)
    latent_dim: int = 128

    def __post_init__(self):
        if len(self.filters) != len(self.kernels):
            raise ConfigurationError(
                f"filters {self.filters} and kernels {self.kernels} must have the same length")
        if min(self.height, self.width, self.in_channels, self.latent_dim) < 1:
            raise ConfigurationError(f"channel dims must be positive: {self}")

    @property
    def input_shape(self) -> tuple[int, int, int]:
        return (self.in_channels, self.height, self.width)

    @property
    def bottleneck(self) -> tuple[int, int, int]:
        h, w = self.height, self.width
        for _ in self.filters:
            h, w = -(-h // 2), -(-w // 2)
        return (self.filters[-1], h, w)


def visual_config(size: int = 64, latent_dim: int = 128) -> ChannelConfig:
    return ChannelConfig(3, size, size, (16, 32, 64), (5, 3, 3), latent_dim)


def auditory_config(frames: int = 100, mel: int = 40, latent_dim: int = 128) -> ChannelConfig:
    return ChannelConfig(1, frames, mel, (16, 32, 64), (3, 3, 3), latent_dim)


def build_encoder(cfg: ChannelConfig, rng: np.random.Generator) -> Sequential:
    """[conv same + relu + ceil maxpool] per stage, then flatten and dense to the latent."""
    layers = []
    c = cfg.in_channels
    for f, k in zip(cfg.filters, cfg.kernels):
        layers += [Conv2D(c, f, k, "same", rng), ReLU(), MaxPool2x2()]
        c = f
    flat = int(np.prod(cfg.bottleneck))
    layers += [Flatten(), Dense(flat, cfg.latent_dim, rng)]
    return Sequential(layers)


def build_decoder(cfg: ChannelConfig, rng: np.random.Generator) -> Sequential:
    """Mirror of the encoder with upsampling in place of pooling.

    dense -> reshape to the bottleneck -> [conv + relu + upsample] per stage ->
    crop to the stimulus size -> conv to the stimulus channels + sigmoid.
    """
    bottleneck = cfg.bottleneck
    layers = [Dense(cfg.latent_dim, int(np.prod(bottleneck)), rng), Reshape(bottleneck)]
    c = bottleneck[0]
    kernels = cfg.kernels[::-1]
    for f, k in zip(cfg.filters[::-1], kernels):
        layers += [Conv2D(c, f, k, "same", rng), ReLU(), Upsample2x()]
        c = f
    layers += [Crop(cfg.height, cfg.width), Conv2D(c, cfg.in_channels, 3, "same", rng), Sigmoid()]
    return Sequential(layers)


class Channel:
    """One modality: a perception column and an expectation column."""

    def __init__(self, modality: str, cfg: ChannelConfig, rng: np.random.Generator):
        if modality not in MODALITIES:
            raise UsageError(f"unknown modality {modality!r}")
        self.modality = modality
        self.config = cfg
        self.encoder = build_encoder(cfg, rng)
        self.decoder = build_decoder(cfg, rng)
        for prefix, seq in (("enc", self.encoder), ("dec", self.decoder)):
            for i, layer in enumerate(seq.param_layers()):
                layer.weight.name = f"{modality}.{prefix}{i}.{layer.kind}.w"
                layer.bias.name = f"{modality}.{prefix}{i}.{layer.kind}.b"

    def parameters(self) -> list[Parameter]:
        return self.encoder.parameters() + self.decoder.parameters()

    def check_stimulus(self, x: np.ndarray) -> None:
        if x.shape != self.config.input_shape:
            raise ConfigurationError(
                f"{self.modality} stimulus must have shape {self.config.input_shape}, got {x.shape}")

    def encode(self, x: np.ndarray) -> np.ndarray:
        self.check_stimulus(x)
        return self.encoder(x)

    def decode(self, latent: np.ndarray) -> np.ndarray:
        if latent.shape != (self.config.latent_dim,):
            raise ConfigurationError(f"{self.modality} latent must have shape ({self.config.latent_dim},)")
        return self.decoder(latent)

    def checksum(self) -> str:
        import hashlib
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(p.value.tobytes())
        return h.hexdigest()


class Latent(np.ndarray):
    """A latent vector tagged with its modality."""

    def __new__(cls, values, modality: str):
        if modality not in MODALITIES:
            raise UsageError(f"unknown modality {modality!r}")
        obj = np.asarray(values, dtype=np.float64).view(cls)
        obj.modality = modality
        return obj

    def __array_finalize__(self, obj):
        self.modality = getattr(obj, "modality", None)


class CrossmodalNet:
    """Visual and auditory channels side by side."""

    def __init__(self, visual: ChannelConfig, auditory: ChannelConfig, rng: np.random.Generator):
        self.visual = Channel(VISUAL, visual, rng)
        self.auditory = Channel(AUDITORY, auditory, rng)

    def channel(self, modality: str) -> Channel:
        if modality == VISUAL:
            return self.visual
        if modality == AUDITORY:
            return self.auditory
        raise UsageError(f"unknown modality {modality!r}")

    def parameters(self) -> list[Parameter]:
        return self.visual.parameters() + self.auditory.parameters()

    def encode_visual(self, frame: np.ndarray) -> Latent:
        return Latent(self.visual.encode(frame), VISUAL)

    def encode_auditory(self, spec: np.ndarray) -> Latent:
        return Latent(self.auditory.encode(spec), AUDITORY)

    def decode_visual(self, latent: np.ndarray) -> np.ndarray:
        _require_tag(latent, VISUAL)
        return self.visual.decode(np.asarray(latent))

    def decode_auditory(self, latent: np.ndarray) -> np.ndarray:
        _require_tag(latent, AUDITORY)
        return self.auditory.decode(np.asarray(latent))


def _require_tag(latent, modality: str) -> None:
    tag = getattr(latent, "modality", None)
    if tag is not None and tag != modality:
        raise UsageError(f"expected a {modality} latent, got a {tag} latent")
