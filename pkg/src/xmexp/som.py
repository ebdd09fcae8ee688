"""Self-organizing co-occurrence layer and its replay memory."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ConfigurationError, UsageError


@dataclass
class ConcatLatent:
    """Visual half followed by auditory half; absent halves are zero-filled."""

    vector: np.ndarray
    visual_present: bool = True
    auditory_present: bool = True

    @classmethod
    def from_halves(cls, visual=None, auditory=None, half_dim: int | None = None) -> "ConcatLatent":
        if visual is None and auditory is None:
            raise UsageError("at least one modality must be present")
        half = half_dim or len(visual if visual is not None else auditory)
        v = np.zeros(half) if visual is None else np.asarray(visual, dtype=np.float64)
        a = np.zeros(half) if auditory is None else np.asarray(auditory, dtype=np.float64)
        if v.shape != (half,) or a.shape != (half,):
            raise UsageError(f"latent halves must both have dim {half}, got {v.shape} and {a.shape}")
        return cls(np.concatenate([v, a]), visual is not None, auditory is not None)

    @property
    def full(self) -> bool:
        return self.visual_present and self.auditory_present

    def mask(self) -> np.ndarray:
        half = self.vector.size // 2
        return np.concatenate([np.full(half, self.visual_present), np.full(half, self.auditory_present)])


class ReplayMemory:
    """FIFO of the most recent co-occurrences; the oldest entry is evicted first."""

    def __init__(self, capacity: int = 50):
        if capacity < 1:
            raise ConfigurationError(f"replay capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self._items: deque[np.ndarray] = deque(maxlen=capacity)

    def push(self, latent: ConcatLatent) -> None:
        if not latent.full:
            raise UsageError("replay memory only stores latents with both modalities present")
        self._items.append(np.array(latent.vector, dtype=np.float64))

    def __len__(self) -> int:
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def as_array(self) -> np.ndarray:
        if not self._items:
            return np.zeros((0, 0))
        return np.stack(self._items)

    def contains(self, vector: np.ndarray) -> bool:
        return any(np.array_equal(item, vector) for item in self._items)


@dataclass(frozen=True)
class SomConfig:
    rows: int = 10
    cols: int = 10
    dim: int = 256
    epochs: int = 100
    lr_start: float = 0.3
    lr_end: float = 0.01
    sigma_start: float | None = None   # None -> max(rows, cols) / 2
    sigma_end: float = 0.5
    init_noise: float = 0.01

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ConfigurationError(f"SOM grid must be at least 2x2, got {self.rows}x{self.cols}")
        if self.dim < 2 or self.dim % 2:
            raise ConfigurationError(f"SOM dim must be even and >= 2, got {self.dim}")
        if self.epochs < 1:
            raise ConfigurationError(f"som.epochs must be >= 1, got {self.epochs}")

    @property
    def sigma0(self) -> float:
        return self.sigma_start if self.sigma_start is not None else max(self.rows, self.cols) / 2.0


def linear_schedule(start: float, end: float, epochs: int) -> np.ndarray:
    if epochs == 1:
        return np.array([start], dtype=np.float64)
    return start + (end - start) * np.arange(epochs) / (epochs - 1)


def masked_distances(prototypes: np.ndarray, vector: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """RMS distance over the present dims, one value per unit (flattened)."""
    n = int(mask.sum())
    if n == 0:
        raise UsageError("query has no modality present")
    diff = prototypes[:, mask] - vector[mask]
    return np.sqrt(np.einsum("ij,ij->i", diff, diff) / n)


@njit(cache=True)
def _online_epochs(protos, data, grid_d2, lrs, sigmas, order):
    n_units, dim = protos.shape
    for e in range(order.shape[0]):
        lr = lrs[e]
        two_s2 = 2.0 * sigmas[e] * sigmas[e]
        for j in range(order.shape[1]):
            x = data[order[e, j]]
            best = 0
            best_d = np.inf
            for u in range(n_units):
                d = 0.0
                for k in range(dim):
                    t = x[k] - protos[u, k]
                    d += t * t
                if d < best_d:
                    best_d = d
                    best = u
            for u in range(n_units):
                w = lr * np.exp(-grid_d2[best, u] / two_s2)
                # convex form keeps w == 1 exact and w == 0 the identity
                for k in range(dim):
                    protos[u, k] = (1.0 - w) * protos[u, k] + w * x[k]


class SomGrid:
    """2-D lattice of prototype vectors trained with the classic online rule."""

    def __init__(self, config: SomConfig | None = None, rng: np.random.Generator | None = None):
        self.config = config or SomConfig()
        self.rng = rng if rng is not None else np.random.default_rng(0)
        c = self.config
        self.prototypes = np.zeros((c.rows, c.cols, c.dim))
        self.initialized = False
        r, q = np.divmod(np.arange(c.rows * c.cols), c.cols)
        self.positions = np.stack([r, q], axis=1).astype(np.float64)
        self.grid_d2 = ((self.positions[:, None, :] - self.positions[None, :, :]) ** 2).sum(axis=2)
        self.lr = c.lr_start
        self.sigma = c.sigma0

    @property
    def shape(self) -> tuple[int, int]:
        return (self.config.rows, self.config.cols)

    @property
    def flat(self) -> np.ndarray:
        return self.prototypes.reshape(-1, self.config.dim)

    def initialize_from(self, vectors: np.ndarray) -> None:
        """Cycle the given latents over the lattice, each copy with small seeded noise."""
        n_units = self.config.rows * self.config.cols
        idx = np.arange(n_units) % len(vectors)
        noise = self.rng.normal(0.0, self.config.init_noise, size=(n_units, self.config.dim))
        self.prototypes = (vectors[idx] + noise).reshape(self.prototypes.shape)
        self.initialized = True

    def bmu(self, query: ConcatLatent) -> tuple[tuple[int, int], float]:
        """Best-matching unit; ties go to the first unit in row-major order."""
        d = masked_distances(self.flat, np.asarray(query.vector), query.mask())
        i = int(np.argmin(d))
        return divmod(i, self.config.cols), float(d[i])

    def split_prototype(self, position: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
        r, c = position
        if not (0 <= r < self.config.rows and 0 <= c < self.config.cols):
            raise UsageError(f"position {position} outside {self.config.rows}x{self.config.cols} grid")
        half = self.config.dim // 2
        proto = self.prototypes[r, c]
        return proto[:half].copy(), proto[half:].copy()

    def train(self, memory: ReplayMemory, epochs: int | None = None) -> None:
        """Online SOM over the whole memory; schedules restart on every call."""
        if len(memory) == 0:
            raise UsageError("cannot train the SOM on an empty replay memory")
        data = memory.as_array()
        if data.shape[1] != self.config.dim:
            raise ConfigurationError(f"memory latents have dim {data.shape[1]}, SOM expects {self.config.dim}")
        if not self.initialized:
            self.initialize_from(data)
        c = self.config
        epochs = epochs or c.epochs
        lrs = linear_schedule(c.lr_start, c.lr_end, epochs)
        sigmas = linear_schedule(c.sigma0, c.sigma_end, epochs)
        order = np.stack([self.rng.permutation(len(data)) for _ in range(epochs)])
        protos = np.ascontiguousarray(self.flat, dtype=np.float64).copy()
        _online_epochs(protos, np.ascontiguousarray(data), self.grid_d2, lrs, sigmas, order)
        self.prototypes = protos.reshape(self.prototypes.shape)
        self.lr, self.sigma = float(lrs[-1]), float(sigmas[-1])

    def quantization_error(self, memory) -> float:
        """Mean masked BMU distance; accepts a ReplayMemory or an iterable of ConcatLatent."""
        items = [ConcatLatent(v) if isinstance(v, np.ndarray) else v for v in memory]
        if not items:
            raise UsageError("quantization error of an empty set")
        return float(np.mean([self.bmu(q)[1] for q in items]))
