"""Paired audio-visual datasets: synthetic identities, PPM/WAV files, manifests."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .audio import (AudioClip, build_mel_filterbank, encode_wav, frame_length, log_mel_spectrogram,
                    next_pow2, read_wav, resample_linear)
from .errors import ConfigurationError, InputError
from .trainer import StimulusPair

MANIFEST_HEADER = ["identity", "image_path", "audio_path"]


@dataclass
class Recording:
    """One raw sample: an RGB frame in [0, 1] and one second of audio."""

    identity: str
    image: np.ndarray          # (3, H, W)
    clip: AudioClip
    source: str = ""


@dataclass(frozen=True)
class SyntheticSpec:
    num_identities: int = 4
    samples_per_identity: int = 10
    image_size: int = 64
    image_noise: float = 0.05
    pattern_components: int = 3
    min_pattern_distance: float = 0.1
    sample_rate: int = 16000
    first_filter: int = 4
    filter_spacing: int = 3
    harmonics: int = 3
    audio_noise: float = 0.02
    pitch_jitter: float = 0.01

    def __post_init__(self):
        if self.num_identities < 1 or self.samples_per_identity < 1:
            raise ConfigurationError("synthetic spec needs at least one identity and one sample each")
        if self.filter_spacing < 2:
            raise ConfigurationError(f"synth.filter_spacing must be >= 2, got {self.filter_spacing}")
        last = self.first_filter + self.filter_spacing * (self.num_identities - 1)
        if last >= 40:
            raise ConfigurationError(
                f"{self.num_identities} identities spaced {self.filter_spacing} filters apart do not fit in 40 Mel filters")


def identity_name(i: int) -> str:
    return f"id{i:02d}"


def _pattern(rng: np.random.Generator, size: int, components: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((3, size, size))
    for c in range(3):
        for _ in range(components):
            fy, fx = rng.uniform(0.5, 3.0, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            img[c] += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * (fy * yy + fx * xx) + phase)
    lo, hi = img.min(), img.max()
    return 0.15 + 0.7 * (img - lo) / (hi - lo)


def _filter_center_hz(index: int, rate: int) -> float:
    n = next_pow2(frame_length(rate, 25.0))
    bank = build_mel_filterbank(40, rate, n)
    return float(bank.bins[index + 1] * rate / n)


def quantize_image(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def quantize_audio(x: np.ndarray) -> np.ndarray:
    return np.clip(np.round(x * 32768.0), -32768, 32767) / 32768.0


def generate_synthetic(spec: SyntheticSpec, seed: int) -> list[Recording]:
    """Identities with distinct visual patterns and distinct pitch, plus per-sample noise.

    Values are quantized to 8-bit pixels and 16-bit PCM so that writing the
    set to disk and reading it back is lossless.
    """
    rng = np.random.default_rng([int(seed), 17])
    patterns: list[np.ndarray] = []
    while len(patterns) < spec.num_identities:
        cand = _pattern(rng, spec.image_size, spec.pattern_components)
        if all(np.sqrt(np.mean((cand - p) ** 2)) >= spec.min_pattern_distance for p in patterns):
            patterns.append(cand)
    rate = spec.sample_rate
    t = np.arange(rate) / rate
    out = []
    for i in range(spec.num_identities):
        f0 = _filter_center_hz(spec.first_filter + spec.filter_spacing * i, rate)
        amps = 0.5 ** np.arange(spec.harmonics)
        for j in range(spec.samples_per_identity):
            img = patterns[i] + rng.normal(0.0, spec.image_noise, size=patterns[i].shape)
            f = f0 * (1.0 + rng.uniform(-spec.pitch_jitter, spec.pitch_jitter))
            wave = np.zeros(rate)
            for h, a in enumerate(amps, start=1):
                if h * f < rate / 2:
                    wave += a * np.sin(2 * np.pi * h * f * t + rng.uniform(0, 2 * np.pi))
            wave = 0.4 * wave / amps.sum() + rng.normal(0.0, spec.audio_noise, size=rate)
            out.append(Recording(identity_name(i), quantize_image(img),
                                 AudioClip(quantize_audio(wave), rate), f"synthetic:{i}:{j}"))
    return out


def to_pair(rec: Recording, sample_rate: int = 16000, hop_ms: float = 10.0,
            window_ms: float = 25.0) -> StimulusPair:
    clip = resample_linear(rec.clip, sample_rate).to_one_second()
    spec = log_mel_spectrogram(clip, window_ms=window_ms, hop_ms=hop_ms)
    return StimulusPair(rec.image, spec, rec.identity, rec.source)


def to_pairs(recs: Sequence[Recording], **kw) -> list[StimulusPair]:
    return [to_pair(r, **kw) for r in recs]


# PPM

def encode_ppm(img: np.ndarray) -> bytes:
    """Binary P6 from a (3, H, W) array in [0, 1]."""
    c, h, w = img.shape
    pixels = np.round(np.clip(img, 0, 1) * 255.0).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{w} {h}\n255\n".encode() + pixels.tobytes()


def parse_ppm(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise InputError(f"{name}: truncated PPM header at offset {pos}")
        tokens.append(raw[start:pos])
    pos += 1
    if tokens[0] != b"P6":
        raise InputError(f"{name}: not a binary PPM (P6), got {tokens[0]!r}")
    try:
        w, h, maxval = (int(x) for x in tokens[1:])
    except ValueError as exc:
        raise InputError(f"{name}: bad PPM header {tokens!r}") from exc
    if not 0 < maxval < 256:
        raise InputError(f"{name}: only 8-bit PPM supported, maxval={maxval}")
    body = raw[pos:pos + 3 * w * h]
    if len(body) < 3 * w * h:
        raise InputError(f"{name}: PPM pixel data truncated at offset {pos + len(body)}")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3).transpose(2, 0, 1) / float(maxval)


def read_ppm(path: str | Path) -> np.ndarray:
    return parse_ppm(Path(path).read_bytes(), str(path))


def resize_nearest(img: np.ndarray, size: int) -> np.ndarray:
    _, h, w = img.shape
    if (h, w) == (size, size):
        return img
    rows = (np.arange(size) * h // size)
    cols = (np.arange(size) * w // size)
    return img[:, rows][:, :, cols]


# dataset on disk

def write_dataset(recs: Sequence[Recording], out_dir: str | Path) -> Path:
    """Write PPM + WAV files and a manifest; returns the manifest path."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "audio").mkdir(parents=True, exist_ok=True)
    rows = [MANIFEST_HEADER]
    for k, rec in enumerate(recs):
        img_rel = f"images/{rec.identity}_{k:04d}.ppm"
        wav_rel = f"audio/{rec.identity}_{k:04d}.wav"
        (out / img_rel).write_bytes(encode_ppm(rec.image))
        (out / wav_rel).write_bytes(encode_wav(rec.clip.samples, rec.clip.sample_rate))
        rows.append([rec.identity, img_rel, wav_rel])
    manifest = out / "manifest.csv"
    with open(manifest, "w", newline="") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)
    return manifest


def ingest_dataset(manifest: str | Path, image_size: int = 64, sample_rate: int = 16000) -> list[Recording]:
    """Load a manifest of ``identity,image_path,audio_path`` rows.

    Relative paths resolve against the manifest's directory. Images are
    resized by nearest neighbour; audio is resampled and cut or padded to 1 s.
    """
    manifest = Path(manifest)
    try:
        text = manifest.read_text()
    except OSError as exc:
        raise InputError(f"cannot read manifest {manifest}: {exc.strerror}") from exc
    base = manifest.parent
    recs = []
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or (lineno == 1 and row == MANIFEST_HEADER):
            continue
        if len(row) != 3 or not all(x.strip() for x in row):
            raise InputError(f"{manifest}:{lineno}: expected 'identity,image_path,audio_path', got {row!r}")
        ident, img_path, wav_path = (x.strip() for x in row)
        img_file, wav_file = base / img_path, base / wav_path
        try:
            img = resize_nearest(read_ppm(img_file), image_size)
        except OSError as exc:
            raise InputError(f"{manifest}:{lineno}: cannot read {img_file}") from exc
        try:
            clip = resample_linear(read_wav(wav_file), sample_rate).to_one_second()
        except OSError as exc:
            raise InputError(f"{manifest}:{lineno}: cannot read {wav_file}") from exc
        recs.append(Recording(ident, img, clip, f"{manifest.name}:{lineno}"))
    if not recs:
        raise InputError(f"{manifest}: no samples")
    return recs
