"""Log-Mel front end: 1 s of mono audio -> 100x40 spectrogram in [0, 1].

Also holds the PCM16 WAV reader/writer used for dataset files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, InputError

NUM_FRAMES = 100
NUM_MEL = 40
DEFAULT_RATE = 16000


@dataclass
class AudioClip:
    samples: np.ndarray
    sample_rate: int = DEFAULT_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).reshape(-1)

    def to_one_second(self) -> "AudioClip":
        """Trim to the first second or zero-pad the end up to it."""
        n = self.sample_rate
        s = self.samples[:n]
        if s.size < n:
            s = np.concatenate([s, np.zeros(n - s.size)])
        return AudioClip(s, self.sample_rate)


@dataclass
class MelFilterbank:
    weights: np.ndarray      # (num_filters, dft_size // 2 + 1)
    bins: np.ndarray         # (num_filters + 2,) start/peak/end bin indices
    sample_rate: int
    dft_size: int

    @property
    def centers_hz(self) -> np.ndarray:
        return self.bins[1:-1] * self.sample_rate / self.dft_size


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def frame_length(sample_rate: int, ms: float) -> int:
    return int(round(sample_rate * ms / 1000.0))


def next_pow2(n: int) -> int:
    return 1 << max(0, int(n) - 1).bit_length()


def frame_signal(clip: AudioClip, window_ms: float = 25.0, hop_ms: float = 10.0,
                 num_frames: int = NUM_FRAMES) -> np.ndarray:
    """Slice a clip into exactly ``num_frames`` frames of ``window_ms``.

    The signal is zero-padded (or centre-trimmed) symmetrically so the frame
    count is fixed whatever the hop.
    """
    if clip.samples.size == 0:
        raise InputError("empty audio clip")
    win = frame_length(clip.sample_rate, window_ms)
    hop = frame_length(clip.sample_rate, hop_ms)
    if not win >= hop > 0:
        raise ConfigurationError(f"need window >= hop > 0, got window={win} hop={hop} samples")
    x = clip.samples
    needed = (num_frames - 1) * hop + win
    extra = needed - x.size
    if extra >= 0:
        x = np.pad(x, (extra // 2, extra - extra // 2))
    else:
        start = (-extra) // 2
        x = x[start:start + needed]
    idx = np.arange(win)[None, :] + hop * np.arange(num_frames)[:, None]
    return x[idx]


def hamming_window(n: int) -> np.ndarray:
    if n < 2:
        raise ConfigurationError(f"hamming window needs length >= 2, got {n}")
    k = np.arange(n)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def hamming(frames: np.ndarray) -> np.ndarray:
    """Apply a Hamming window along the last axis."""
    frames = np.asarray(frames, dtype=np.float64)
    return frames * hamming_window(frames.shape[-1])


def fft_radix2(x: np.ndarray) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT along the last axis.

    The length must be a power of two; leading axes are transformed in batch.
    """
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n & (n - 1):
        raise ConfigurationError(f"radix-2 FFT needs a power-of-two length, got {n}")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((np.arange(n) >> b) & 1) << (bits - 1 - b)
    a = x[..., rev].copy()
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        a = a.reshape(*x.shape[:-1], n // size, size)
        even = a[..., :half].copy()
        odd = a[..., half:] * tw
        a[..., :half] = even + odd
        a[..., half:] = even - odd
        a = a.reshape(x.shape)
        size *= 2
    return a


def naive_dft(x: np.ndarray) -> np.ndarray:
    """Direct O(N^2) DFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    return x @ np.exp(-2j * np.pi * np.outer(k, k) / n).T


def dft_magnitude(frames: np.ndarray, dft_size: int | None = None) -> np.ndarray:
    """One-sided magnitude spectrum, bins ``0..N/2`` of the zero-padded frame."""
    frames = np.asarray(frames, dtype=np.float64)
    n = dft_size or next_pow2(frames.shape[-1])
    pad = [(0, 0)] * (frames.ndim - 1) + [(0, n - frames.shape[-1])]
    spec = fft_radix2(np.pad(frames, pad))
    return np.abs(spec[..., :n // 2 + 1])


def build_mel_filterbank(num_filters: int = NUM_MEL, sample_rate: int = DEFAULT_RATE,
                         dft_size: int = 512) -> MelFilterbank:
    """Triangular filters with centres equally spaced in mel between 0 and Nyquist."""
    if sample_rate < 8000:
        raise ConfigurationError(f"sample rate must be >= 8000 Hz, got {sample_rate}")
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate / 2.0), num_filters + 2))
    bins = np.floor((dft_size + 1) * edges_hz / sample_rate).astype(np.int64)
    bins = np.minimum(bins, dft_size // 2)
    if np.any(np.diff(bins) <= 0):
        bad = int(np.argmin(np.diff(bins) > 0))
        raise ConfigurationError(
            f"dft_size {dft_size} too small to separate mel points {bad} and {bad + 1} at {sample_rate} Hz")
    weights = np.zeros((num_filters, dft_size // 2 + 1))
    for m in range(num_filters):
        lo, peak, hi = bins[m], bins[m + 1], bins[m + 2]
        k = np.arange(lo, peak + 1)
        weights[m, lo:peak + 1] = (k - lo) / (peak - lo)
        k = np.arange(peak, hi + 1)
        weights[m, peak:hi + 1] = (hi - k) / (hi - peak)
    return MelFilterbank(weights, bins, sample_rate, dft_size)


def minmax_normalize(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi - lo <= 0:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


def log_mel_spectrogram(clip: AudioClip, window_ms: float = 25.0, hop_ms: float = 10.0,
                        num_filters: int = NUM_MEL, num_frames: int = NUM_FRAMES) -> np.ndarray:
    """Return a ``[1, num_frames, num_filters]`` log-Mel spectrogram in [0, 1]."""
    clip = clip.to_one_second()
    frames = hamming(frame_signal(clip, window_ms, hop_ms, num_frames))
    n = next_pow2(frames.shape[-1])
    bank = build_mel_filterbank(num_filters, clip.sample_rate, n)
    power = dft_magnitude(frames, n) ** 2
    energy = np.log1p(power @ bank.weights.T)
    return minmax_normalize(energy)[None, :, :]


# WAV I/O

def read_wav(path: str | Path) -> AudioClip:
    """Read a PCM16 WAV file; stereo is averaged down to mono."""
    raw = Path(path).read_bytes()
    return parse_wav(raw, str(path))


def parse_wav(raw: bytes, name: str = "<bytes>") -> AudioClip:
    if len(raw) < 12 or raw[0:4] != b"RIFF":
        raise InputError(f"{name}: missing RIFF header at offset 0")
    if raw[8:12] != b"WAVE":
        raise InputError(f"{name}: missing WAVE tag at offset 8")
    pos = 12
    fmt = None
    data = None
    while pos + 8 <= len(raw):
        cid = raw[pos:pos + 4]
        (size,) = struct.unpack("<I", raw[pos + 4:pos + 8])
        body = raw[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise InputError(f"{name}: chunk {cid!r} truncated at offset {pos}")
        if cid == b"fmt ":
            if size < 16:
                raise InputError(f"{name}: fmt chunk too short at offset {pos}")
            fmt = struct.unpack("<HHIIHH", body[:16]) + (pos,)
        elif cid == b"data":
            data = (body, pos)
        pos += 8 + size + (size & 1)
    if fmt is None:
        raise InputError(f"{name}: no fmt chunk found after offset 12")
    if data is None:
        raise InputError(f"{name}: no data chunk found after offset 12")
    audio_format, channels, rate, _, _, bits, fmt_pos = fmt
    if audio_format != 1 or bits != 16:
        raise InputError(f"{name}: only PCM16 supported (format={audio_format}, bits={bits}) at offset {fmt_pos + 8}")
    if channels < 1:
        raise InputError(f"{name}: zero channels at offset {fmt_pos + 10}")
    body, data_pos = data
    usable = len(body) // (2 * channels) * 2 * channels
    pcm = np.frombuffer(body[:usable], dtype="<i2").reshape(-1, channels).astype(np.float64)
    return AudioClip(pcm.mean(axis=1) / 32768.0, rate)


def pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def encode_wav(samples: np.ndarray, sample_rate: int = DEFAULT_RATE) -> bytes:
    pcm = pcm16(samples).tobytes()
    header = b"RIFF" + struct.pack("<I", 36 + len(pcm)) + b"WAVE"
    fmt = b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, sample_rate * 2, 2, 16)
    return header + fmt + b"data" + struct.pack("<I", len(pcm)) + pcm


def write_wav(path: str | Path, samples: np.ndarray, sample_rate: int = DEFAULT_RATE) -> None:
    Path(path).write_bytes(encode_wav(samples, sample_rate))


def resample_linear(clip: AudioClip, rate: int) -> AudioClip:
    if clip.sample_rate == rate:
        return clip
    n_out = int(round(clip.samples.size * rate / clip.sample_rate))
    t_out = np.arange(n_out) / rate
    t_in = np.arange(clip.samples.size) / clip.sample_rate
    return AudioClip(np.interp(t_out, t_in, clip.samples), rate)
