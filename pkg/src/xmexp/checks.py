"""Finite-difference gradient checks over every layer type and a shrunken channel."""

from __future__ import annotations

import numpy as np

from .kernel import (Conv2D, Crop, Dense, Flatten, GradcheckReport, MaxPool2x2, ReLU, Reshape,
                     Sigmoid, Upsample2x, gradcheck, layer_gradcheck, zero_grads)
from .network import AUDITORY, VISUAL, Channel, ChannelConfig
from .trainer import mae_grad, mean_absolute_error

SHRUNKEN_VISUAL = ChannelConfig(3, 8, 8, (16, 32, 64), (5, 3, 3), 16)
SHRUNKEN_AUDITORY = ChannelConfig(1, 12, 6, (16, 32, 64), (3, 3, 3), 16)


def jitter_biases(params, rng: np.random.Generator, scale: float = 0.1) -> None:
    """Move zero-initialised biases off the ReLU kink so finite differences are meaningful."""
    for p in params:
        if p.value.ndim == 1:
            p.value += rng.normal(0.0, scale, size=p.value.shape)


def pool_gap(h: np.ndarray) -> float:
    """Smallest gap between the two largest entries of any 2x2 window with a positive max."""
    c, hh, ww = h.shape
    p = np.full((c, hh + hh % 2, ww + ww % 2), -np.inf)
    p[:, :hh, :ww] = h
    win = np.sort(p.reshape(c, p.shape[1] // 2, 2, p.shape[2] // 2, 2).transpose(0, 1, 3, 2, 4)
                  .reshape(-1, 4), axis=1)
    live = win[:, -1] > 0
    return float((win[live, -1] - win[live, -2]).min()) if live.any() else np.inf


def kink_margin(channel: Channel, x: np.ndarray) -> float:
    """Distance of the autoencoding path from its nearest non-differentiable point.

    Covers ReLU inputs, max-pool near-ties and the |recon - x| kink of the loss.
    """
    margin = np.inf
    h = x
    for seq in (channel.encoder, channel.decoder):
        for layer in seq.layers:
            if isinstance(layer, ReLU):
                margin = min(margin, float(np.abs(h).min()))
            elif isinstance(layer, MaxPool2x2):
                margin = min(margin, pool_gap(h))
            h = layer(h)
    return min(margin, float(np.abs(h - x).min()))


def generic_point(modality: str, cfg: ChannelConfig, rng: np.random.Generator, margin: float,
                  attempts: int = 100) -> tuple[Channel, np.ndarray]:
    """Draw a channel and input that sit at least ``margin`` from every kink.

    Central differences straddling a kink measure an average of two slopes,
    which says nothing about the backward pass.
    """
    for _ in range(attempts):
        channel = Channel(modality, cfg, rng)
        jitter_biases(channel.parameters(), rng)
        x = rng.uniform(0.0, 1.0, size=cfg.input_shape)
        if kink_margin(channel, x) >= margin:
            return channel, x
    raise RuntimeError(f"no kink-free point found for the {modality} channel in {attempts} draws")


def channel_gradcheck(channel: Channel, x: np.ndarray, eps: float = 1e-5, tolerance: float = 1e-4,
                      max_entries: int | None = 12, seed: int = 0) -> GradcheckReport:
    """Check ``mae(decode(encode(x)), x)`` w.r.t. every parameter block of the channel."""

    def loss_fn(with_grad: bool) -> float:
        lat, enc_cache = channel.encoder.forward(x)
        recon, dec_cache = channel.decoder.forward(lat)
        if with_grad:
            zero_grads(channel.parameters())
            dlat = channel.decoder.backward(dec_cache, mae_grad(recon, x))
            channel.encoder.backward(enc_cache, dlat)
        return mean_absolute_error(recon, x)

    blocks = [(p.name, p.value, lambda p=p: p.grad) for p in channel.parameters()]
    report = gradcheck(loss_fn, blocks, eps, tolerance, max_entries, seed)
    zero_grads(channel.parameters())
    return report


def layer_cases(rng: np.random.Generator):
    """(label, layer, input) for each layer type."""
    return [
        ("conv_same", Conv2D(2, 4, 3, "same", rng), rng.standard_normal((2, 8, 8))),
        ("conv_valid", Conv2D(2, 3, 2, "valid", rng), rng.standard_normal((2, 5, 5))),
        ("dense", Dense(16, 8, rng), rng.standard_normal(16)),
        ("maxpool", MaxPool2x2(), rng.standard_normal((2, 5, 7))),
        ("upsample", Upsample2x(), rng.standard_normal((2, 3, 4))),
        ("crop", Crop(3, 2), rng.standard_normal((2, 5, 4))),
        ("reshape", Reshape((4, 6)), rng.standard_normal((2, 3, 4))),
        ("flatten", Flatten(), rng.standard_normal((2, 3, 4))),
        ("relu", ReLU(), rng.standard_normal((3, 4, 4))),
        ("sigmoid", Sigmoid(), rng.standard_normal((3, 4, 4))),
    ]


def run_gradcheck_suite(eps: float = 1e-5, tolerance: float = 1e-4, seed: int = 0,
                        max_entries: int | None = 12) -> GradcheckReport:
    """All layer types plus a shrunken end-to-end channel per modality, in one report."""
    rng = np.random.default_rng(seed)
    report = GradcheckReport(tolerance)
    for label, layer, x in layer_cases(rng):
        sub = layer_gradcheck(layer, x, eps, tolerance, max_entries, seed, prefix=f"{label}.")
        report.errors.update(sub.errors)
    for modality, cfg in ((VISUAL, SHRUNKEN_VISUAL), (AUDITORY, SHRUNKEN_AUDITORY)):
        channel, x = generic_point(modality, cfg, rng, margin=5 * eps)
        sub = channel_gradcheck(channel, x, eps, tolerance, max_entries, seed)
        report.errors.update({f"e2e.{k}": v for k, v in sub.errors.items()})
    return report
