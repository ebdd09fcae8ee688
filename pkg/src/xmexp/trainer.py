"""Expectation learning loop and the two identification experiments."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import checkpoint
from .errors import ConfigurationError, StateError, UsageError
from .kernel import sgd_step, zero_grads
from .network import AUDITORY, VISUAL, ChannelConfig, CrossmodalNet
from .som import ConcatLatent, ReplayMemory, SomConfig, SomGrid

CONDITIONS = ("auditory", "visual", "crossmodal")
STEP_HEADER = ["step", "visual_loss", "auditory_loss", "bmu_row", "bmu_col", "quant_error"]
EVAL_HEADER = ["condition", "accuracy", "stddev", "n_seeds"]

# independent random streams derived from one run seed
STREAM_INIT, STREAM_SOM, STREAM_SPLIT, STREAM_ORDER = 0, 1, 2, 3


def stream(seed: int, which: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), which])


@dataclass
class StimulusPair:
    image: np.ndarray | None = None
    audio: np.ndarray | None = None
    identity: str | None = None
    source: str = ""

    def __post_init__(self):
        if self.image is None and self.audio is None:
            raise UsageError("a stimulus pair needs at least one modality")

    @property
    def both(self) -> bool:
        return self.image is not None and self.audio is not None

    def unlabeled(self) -> "StimulusPair":
        """The view handed to training: identity stripped."""
        return StimulusPair(self.image, self.audio, None, self.source)

    def only(self, modality: str) -> "StimulusPair":
        if modality == VISUAL:
            return StimulusPair(self.image, None, self.identity, self.source)
        if modality == AUDITORY:
            return StimulusPair(None, self.audio, self.identity, self.source)
        raise UsageError(f"unknown modality {modality!r}")


@dataclass
class StepReport:
    step: int
    visual_loss: float | None
    auditory_loss: float | None
    bmu_row: int
    bmu_col: int
    quant_error: float


@dataclass
class EvalReport:
    accuracy: dict[str, float]
    stddev: dict[str, float]
    n_seeds: int
    per_seed: dict[str, list[float]] = field(default_factory=dict)


@dataclass
class ExpectationLoss:
    mae: float
    w1: float


def mean_absolute_error(perceived: np.ndarray, expected: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(perceived) - np.asarray(expected))))


def wasserstein_1d(x: np.ndarray, y: np.ndarray) -> float:
    """W1 between the empirical value distributions of two equal-size tensors."""
    return float(np.mean(np.abs(np.sort(np.ravel(x)) - np.sort(np.ravel(y)))))


def expectation_loss(perceived: np.ndarray, expected: np.ndarray) -> ExpectationLoss:
    perceived, expected = np.asarray(perceived, dtype=np.float64), np.asarray(expected, dtype=np.float64)
    if perceived.shape != expected.shape:
        raise UsageError(f"shape mismatch: perceived {perceived.shape} vs expected {expected.shape}")
    return ExpectationLoss(mean_absolute_error(perceived, expected), wasserstein_1d(perceived, expected))


def mae_grad(output: np.ndarray, target: np.ndarray) -> np.ndarray:
    """d/d output of mean |output - target|, with sign(0) = 0."""
    return np.sign(output - target) / output.size


@dataclass(frozen=True)
class ModelConfig:
    visual: ChannelConfig
    auditory: ChannelConfig
    som: SomConfig
    replay_capacity: int = 50
    learning_rate: float = 0.5
    encoder_learning_rate: float | None = 0.02   # None -> learning_rate

    def __post_init__(self):
        if self.visual.latent_dim != self.auditory.latent_dim:
            raise ConfigurationError("visual and auditory latent dims must match")
        if self.som.dim != 2 * self.visual.latent_dim:
            raise ConfigurationError(
                f"som dim {self.som.dim} must equal twice the latent dim {self.visual.latent_dim}")


class ExpectationModel:
    """Both channels, the co-occurrence SOM and its replay memory."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.seed = seed
        self.net = CrossmodalNet(config.visual, config.auditory, stream(seed, STREAM_INIT))
        self.som = SomGrid(config.som, stream(seed, STREAM_SOM))
        self.memory = ReplayMemory(config.replay_capacity)
        self.learning_rate = config.learning_rate
        self.encoder_learning_rate = (config.learning_rate if config.encoder_learning_rate is None
                                      else config.encoder_learning_rate)
        self.steps = 0

    # forward helpers

    def encode(self, pair: StimulusPair) -> ConcatLatent:
        v = self.net.visual.encode(pair.image) if pair.image is not None else None
        a = self.net.auditory.encode(pair.audio) if pair.audio is not None else None
        return ConcatLatent.from_halves(v, a, self.config.visual.latent_dim)

    def _channel_update(self, channel, stimulus, proto):
        """Forward and backward for one channel; returns the expectation MAE.

        The prototype half is a constant input to the decoder. The
        autoencoding term is what carries gradient into the encoder.
        """
        lat, enc_cache = channel.encoder.forward(stimulus)
        expected, exp_cache = channel.decoder.forward(proto)
        recon, rec_cache = channel.decoder.forward(lat)
        loss = mean_absolute_error(stimulus, expected)
        channel.decoder.backward(exp_cache, mae_grad(expected, stimulus))
        dlat = channel.decoder.backward(rec_cache, mae_grad(recon, stimulus))
        channel.encoder.backward(enc_cache, dlat)
        return loss

    def _apply(self, channels) -> None:
        for ch in channels:
            sgd_step(ch.encoder.parameters(), self.encoder_learning_rate)
            sgd_step(ch.decoder.parameters(), self.learning_rate)

    def train_step(self, pair: StimulusPair) -> StepReport:
        if not pair.both:
            raise UsageError("train_step needs both modalities; use train_step_unimodal")
        pair = pair.unlabeled()
        query = self.encode(pair)
        self.memory.push(query)
        self.som.train(self.memory)
        pos, _ = self.som.bmu(query)
        v_proto, a_proto = self.som.split_prototype(pos)
        params = self.net.parameters()
        zero_grads(params)
        v_loss = self._channel_update(self.net.visual, pair.image, v_proto)
        a_loss = self._channel_update(self.net.auditory, pair.audio, a_proto)
        self._apply([self.net.visual, self.net.auditory])
        self.steps += 1
        return StepReport(self.steps, v_loss, a_loss, pos[0], pos[1], self.som.quantization_error(self.memory))

    def train_step_unimodal(self, pair: StimulusPair) -> StepReport:
        if pair.both:
            raise UsageError("both modalities present; use train_step")
        if not self.som.initialized:
            raise StateError("co-occurrence layer is untrained; run crossmodal steps first")
        pair = pair.unlabeled()
        pos, _ = self.som.bmu(self.encode(pair))
        v_proto, a_proto = self.som.split_prototype(pos)
        if pair.image is not None:
            channel, stimulus, proto = self.net.visual, pair.image, v_proto
        else:
            channel, stimulus, proto = self.net.auditory, pair.audio, a_proto
        params = channel.parameters()
        zero_grads(params)
        loss = self._channel_update(channel, stimulus, proto)
        self._apply([channel])
        self.steps += 1
        qe = self.som.quantization_error(self.memory) if len(self.memory) else 0.0
        visual = loss if channel is self.net.visual else None
        auditory = loss if channel is self.net.auditory else None
        return StepReport(self.steps, visual, auditory, pos[0], pos[1], qe)

    def probe(self, pair: StimulusPair) -> dict[str, ExpectationLoss]:
        """Expectation losses for the present modalities, without touching any state."""
        pos, _ = self.som.bmu(self.encode(pair))
        v_proto, a_proto = self.som.split_prototype(pos)
        out = {}
        if pair.image is not None:
            out[VISUAL] = expectation_loss(pair.image, self.net.visual.decode(v_proto))
        if pair.audio is not None:
            out[AUDITORY] = expectation_loss(pair.audio, self.net.auditory.decode(a_proto))
        return out

    # serialization

    def to_blocks(self, meta: dict | None = None) -> list[checkpoint.Block]:
        blocks = []
        for p in self.net.parameters():
            role = "w" if p.name.endswith(".w") else "b"
            blocks.append(checkpoint.Block(f"{p.kind}.{role}", p.value))
        blocks.append(checkpoint.Block("som", self.som.prototypes))
        mem = self.memory.as_array().reshape(len(self.memory), self.config.som.dim)
        blocks.append(checkpoint.Block("replay", mem))
        info = {"steps": self.steps, "som_initialized": self.som.initialized, "seed": self.seed}
        info.update(meta or {})
        blocks.append(checkpoint.Block(checkpoint.META, json.dumps(info, sort_keys=True).encode()))
        return blocks

    def load_blocks(self, blocks: Sequence[checkpoint.Block]) -> dict:
        params = self.net.parameters()
        expected = len(params) + 3
        if len(blocks) != expected:
            raise ConfigurationError(f"checkpoint has {len(blocks)} blocks, model needs {expected}")
        for i, (p, b) in enumerate(zip(params, blocks)):
            role = "w" if p.name.endswith(".w") else "b"
            if b.kind != f"{p.kind}.{role}" or b.shape != p.value.shape:
                raise ConfigurationError(
                    f"block {i} ({b.kind} {b.shape}) does not match {p.name} {p.value.shape}")
            p.value[...] = b.data
        som_b, mem_b, meta_b = blocks[len(params):]
        if som_b.kind != "som" or som_b.shape != self.som.prototypes.shape:
            raise ConfigurationError(f"SOM block {som_b.shape} does not match grid {self.som.prototypes.shape}")
        if mem_b.kind != "replay" or (mem_b.shape[0] and mem_b.shape[1] != self.config.som.dim):
            raise ConfigurationError(f"replay block {mem_b.shape} does not match latent dim {self.config.som.dim}")
        if meta_b.kind != checkpoint.META:
            raise ConfigurationError("checkpoint is missing its meta block")
        self.som.prototypes = np.array(som_b.data)
        self.memory = ReplayMemory(self.config.replay_capacity)
        for row in mem_b.data:
            self.memory.push(ConcatLatent(np.array(row)))
        meta = json.loads(meta_b.data.decode())
        self.som.initialized = bool(meta.get("som_initialized", True))
        self.steps = int(meta.get("steps", 0))
        return meta

    def save(self, path: str | Path, meta: dict | None = None) -> None:
        checkpoint.save(path, self.to_blocks(meta))

    @classmethod
    def load(cls, path: str | Path, config: ModelConfig, seed: int = 0) -> tuple["ExpectationModel", dict]:
        model = cls(config, seed)
        meta = model.load_blocks(checkpoint.load(path))
        return model, meta


# experiments

def train_epochs(model: ExpectationModel, pairs: Sequence[StimulusPair], epochs: int,
                 rng: np.random.Generator) -> list[StepReport]:
    """Shuffle-and-step over the pairs; identity labels are stripped before every step."""
    reports = []
    for _ in range(epochs):
        for i in rng.permutation(len(pairs)):
            reports.append(model.train_step(pairs[i].unlabeled()))
    return reports


def stratified_split(identities: Sequence[str], fraction: float, rng: np.random.Generator,
                     min_per_identity: int = 4) -> tuple[list[int], list[int]]:
    """Per-identity shuffled split; every identity keeps at least one sample on each side."""
    if not 0.0 < fraction < 1.0:
        raise ConfigurationError(f"split fraction must be in (0, 1), got {fraction}")
    train, test = [], []
    for ident in sorted(set(identities)):
        idx = [i for i, x in enumerate(identities) if x == ident]
        if len(idx) < min_per_identity:
            raise ConfigurationError(
                f"identity {ident!r} has {len(idx)} samples, need at least {min_per_identity}")
        idx = list(rng.permutation(idx))
        k = min(max(int(round(fraction * len(idx))), 1), len(idx) - 1)
        train += idx[:k]
        test += idx[k:]
    return sorted(train), sorted(test)


def label_units(model: ExpectationModel, pairs: Sequence[StimulusPair]) -> np.ndarray:
    """Majority identity of the training BMUs per unit, as an (rows, cols) object array.

    Units no training sample maps to take the label of the nearest labelled
    unit on the lattice (row-major order breaks ties). Counting ties go to
    the lexicographically smallest identity.
    """
    rows, cols = model.som.shape
    votes: dict[tuple[int, int], dict[str, int]] = {}
    for pair in pairs:
        pos, _ = model.som.bmu(model.encode(pair))
        bucket = votes.setdefault(pos, {})
        bucket[pair.identity] = bucket.get(pair.identity, 0) + 1
    labels = np.empty((rows, cols), dtype=object)
    for pos, bucket in votes.items():
        labels[pos] = min(bucket, key=lambda k: (-bucket[k], k))
    labelled = [(r, c) for r in range(rows) for c in range(cols) if labels[r, c] is not None]
    if not labelled:
        raise StateError("no training sample reached the SOM")
    for r in range(rows):
        for c in range(cols):
            if labels[r, c] is None:
                near = min(labelled, key=lambda p: ((p[0] - r) ** 2 + (p[1] - c) ** 2, p))
                labels[r, c] = labels[near]
    return labels


def condition_view(pair: StimulusPair, condition: str) -> StimulusPair:
    if condition == "crossmodal":
        return pair
    return pair.only(condition)


def classify(model: ExpectationModel, labels: np.ndarray, pair: StimulusPair) -> str:
    pos, _ = model.som.bmu(model.encode(pair))
    return labels[pos]


def evaluate(model: ExpectationModel, train_pairs: Sequence[StimulusPair],
             test_pairs: Sequence[StimulusPair]) -> dict[str, float]:
    labels = label_units(model, train_pairs)
    acc = {}
    for cond in CONDITIONS:
        hits = [classify(model, labels, condition_view(p, cond)) == p.identity for p in test_pairs]
        acc[cond] = float(np.mean(hits))
    return acc


def strategy1_split(pairs: Sequence[StimulusPair], fraction: float, seed: int):
    ids = [p.identity for p in pairs]
    if any(i is None for i in ids):
        raise ConfigurationError("evaluation needs an identity label on every sample")
    train_idx, test_idx = stratified_split(ids, fraction, stream(seed, STREAM_SPLIT))
    return [pairs[i] for i in train_idx], [pairs[i] for i in test_idx]


def train_strategy1(pairs: Sequence[StimulusPair], config: ModelConfig, seed: int,
                    fraction: float = 0.7, epochs: int = 3):
    train, test = strategy1_split(pairs, fraction, seed)
    model = ExpectationModel(config, seed)
    reports = train_epochs(model, train, epochs, stream(seed, STREAM_ORDER))
    return model, reports, train, test


def aggregate(per_seed: list[dict[str, float]]) -> EvalReport:
    table = {c: [r[c] for r in per_seed] for c in CONDITIONS}
    return EvalReport({c: float(np.mean(v)) for c, v in table.items()},
                      {c: float(np.std(v)) for c, v in table.items()},
                      len(per_seed), table)


def run_strategy1(pairs: Sequence[StimulusPair], config: ModelConfig, seeds: Iterable[int],
                  fraction: float = 0.7, epochs: int = 3) -> EvalReport:
    """Train on a stratified share of every identity, identify the rest per condition."""
    results = []
    for seed in seeds:
        model, _, train, test = train_strategy1(pairs, config, seed, fraction, epochs)
        results.append(evaluate(model, train, test))
    return aggregate(results)


def run_novel_stream(model: ExpectationModel, stream_pairs: Sequence[StimulusPair],
                     known_identities: Iterable[str]) -> list[StepReport]:
    known = set(known_identities)
    clash = sorted({p.identity for p in stream_pairs if p.identity in known})
    if clash:
        raise ConfigurationError(f"novel identity {clash[0]!r} is present in the pretraining set")
    start = model.steps
    reports = [model.train_step(p.unlabeled()) for p in stream_pairs]
    return [replace(r, step=r.step - start) for r in reports]


def run_strategy2(pretrain: Sequence[StimulusPair], novel: Sequence[StimulusPair],
                  config: ModelConfig, seed: int, epochs: int = 3) -> list[StepReport]:
    """Pre-train on known identities, then step through a stream of a new one."""
    known = {p.identity for p in pretrain}
    clash = sorted({p.identity for p in novel} & known)
    if clash:
        raise ConfigurationError(f"novel identity {clash[0]!r} is present in the pretraining set")
    model = ExpectationModel(config, seed)
    train_epochs(model, pretrain, epochs, stream(seed, STREAM_ORDER))
    return run_novel_stream(model, novel, known)


# CSV

def _fmt(x: float | None) -> str:
    return "" if x is None else f"{x:.9g}"


def _parse(s: str) -> float | None:
    return None if s == "" else float(s)


def step_reports_csv(reports: Sequence[StepReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(STEP_HEADER)
    for r in reports:
        w.writerow([r.step, _fmt(r.visual_loss), _fmt(r.auditory_loss), r.bmu_row, r.bmu_col, _fmt(r.quant_error)])
    return buf.getvalue()


def write_step_reports(path: str | Path, reports: Sequence[StepReport]) -> None:
    Path(path).write_text(step_reports_csv(reports))


def read_step_reports(path: str | Path) -> list[StepReport]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != STEP_HEADER:
        raise UsageError(f"{path}: expected header {','.join(STEP_HEADER)}")
    return [StepReport(int(r[0]), _parse(r[1]), _parse(r[2]), int(r[3]), int(r[4]), _parse(r[5]))
            for r in rows[1:]]


def eval_report_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_HEADER)
    for c in CONDITIONS:
        w.writerow([c, _fmt(report.accuracy[c]), _fmt(report.stddev[c]), report.n_seeds])
    return buf.getvalue()


def write_eval_report(path: str | Path, report: EvalReport) -> None:
    Path(path).write_text(eval_report_csv(report))


def read_eval_report(path: str | Path) -> EvalReport:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != EVAL_HEADER:
        raise UsageError(f"{path}: expected header {','.join(EVAL_HEADER)}")
    acc = {r[0]: float(r[1]) for r in rows[1:]}
    std = {r[0]: float(r[2]) for r in rows[1:]}
    return EvalReport(acc, std, int(rows[1][3]) if len(rows) > 1 else 0)
