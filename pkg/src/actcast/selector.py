"""Per-frame granularity selection: emit the fine or the coarse prediction?

Ground-truth granularity labels are derived from a forecast by marking a
frame fine (0) when the fine argmax matches the truth and coarse (1)
otherwise.  The selector classifies frames from the concatenated fine and
coarse mean-probability vectors, trained with cross entropy plus a
granularity term that up-weights frames whose true label is fine; the
penalty gamma controls how aggressively the selector goes fine.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nnet
from .forecaster import ForecastDistribution
from .metrics import COARSE, FINE, weighted_accuracy_from_hits
from .taxonomy import Taxonomy

INDICATOR_MODES = ("true_fine", "predicted_fine")


@dataclass(frozen=True)
class GranularityTrack:
    """Per-frame 2-way probabilities and the resulting fine/coarse choice."""

    probs: np.ndarray                 # (T, 2), columns [fine, coarse]
    selection: np.ndarray             # (T,), argmax with ties going fine
    labels: np.ndarray | None = None  # ground-truth granularity when known

    def __post_init__(self):
        if np.any(np.abs(self.probs.sum(axis=1) - 1.0) > 1e-6):
            raise ValueError("probability pairs do not sum to 1")
        expected = np.where(self.probs[:, FINE] >= self.probs[:, COARSE], FINE, COARSE)
        if not np.array_equal(self.selection, expected):
            raise ValueError("selection is not the tie-to-fine argmax of probs")
        if self.labels is not None and len(self.labels) != len(self.selection):
            raise ValueError("labels length mismatch")

    @staticmethod
    def from_probs(probs: np.ndarray, labels: np.ndarray | None = None) -> "GranularityTrack":
        probs = np.asarray(probs, dtype=np.float64)
        selection = np.where(probs[:, FINE] >= probs[:, COARSE], FINE, COARSE)
        return GranularityTrack(probs, selection, labels)

    @property
    def fraction_coarse(self) -> float:
        return float(np.mean(self.selection == COARSE))


@dataclass(frozen=True)
class MixedPrediction:
    """Composed output: one label per frame at the selected granularity."""

    selection: np.ndarray
    labels: np.ndarray  # fine index where fine selected, coarse index otherwise


@dataclass(frozen=True)
class SelectorConfig:
    variant: str = "tcn"
    gamma: float = 1.0
    hidden: tuple[int, int] = (32, 32)   # mlp hidden sizes
    channels: int = 32                   # tcn channels
    blocks: int = 4                      # tcn residual blocks, dilation 2^i
    kernel: int = 3
    epochs: int = 30
    patience: int = 6
    lr: float = 0.01
    indicator: str = "true_fine"

    def __post_init__(self):
        if self.variant not in ("mlp", "tcn"):
            raise ValueError(f"unknown selector variant {self.variant!r}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.indicator not in INDICATOR_MODES:
            raise ValueError(f"unknown indicator mode {self.indicator!r}")


@dataclass(frozen=True)
class SelectorExample:
    """One video's selector training row: features, labels, and the coarse
    correctness needed to score candidate selections."""

    id: str
    features: np.ndarray       # (T, n_fine + n_coarse)
    labels: np.ndarray         # (T,) in {0=fine, 1=coarse}
    coarse_correct: np.ndarray  # (T,) in {0, 1}

    @property
    def fine_correct(self) -> np.ndarray:
        return 1 - self.labels


# ---------------------------------------------------------------------------
# label derivation and features
# ---------------------------------------------------------------------------

def derive_labels(forecast: ForecastDistribution, truth_fine: np.ndarray) -> np.ndarray:
    """0 where the fine argmax equals the truth, 1 otherwise."""
    truth_fine = np.asarray(truth_fine)
    if len(truth_fine) != forecast.horizon:
        raise ValueError(f"truth has {len(truth_fine)} frames, forecast {forecast.horizon}")
    return (forecast.fine_argmax != truth_fine).astype(np.int64)


def build_features(forecast: ForecastDistribution) -> np.ndarray:
    """Per-frame concatenation [fine mean block | coarse mean block]."""
    return np.hstack([forecast.fine_mean, forecast.coarse_mean])


def build_example(vid: str, forecast: ForecastDistribution,
                  truth_fine: np.ndarray, tax: Taxonomy) -> SelectorExample:
    labels = derive_labels(forecast, truth_fine)
    coarse_correct = (forecast.coarse_argmax
                      == tax.coarsen_track(truth_fine)).astype(np.int64)
    return SelectorExample(vid, build_features(forecast), labels, coarse_correct)


def oracle_selector(forecast: ForecastDistribution,
                    truth_fine: np.ndarray) -> GranularityTrack:
    """Best possible per-frame choice: fine where fine is correct, coarse else."""
    y = derive_labels(forecast, truth_fine)
    probs = np.zeros((len(y), 2))
    probs[np.arange(len(y)), y] = 1.0
    return GranularityTrack(probs, y.copy(), labels=y)


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _frame_weights(labels: np.ndarray, probs: np.ndarray | None, gamma: float,
                   indicator: str) -> np.ndarray:
    """Per-frame weights for one video under the combined objective.

    Base term: mean cross entropy (weight 1/T per frame).  Granularity term:
    gamma times the mean restricted to indicator frames (true-fine frames by
    default; the literal predicted-fine reading is kept behind a flag).
    """
    t = len(labels)
    weights = np.full(t, 1.0 / t)
    if gamma > 0:
        if indicator == "true_fine":
            marked = labels == FINE
        else:
            marked = np.asarray(probs)[:, FINE] >= np.asarray(probs)[:, COARSE]
        n_marked = int(marked.sum())
        if n_marked:
            weights = weights + gamma * marked / n_marked
    return weights


def selector_loss(probs_per_video: list[np.ndarray], labels_per_video: list[np.ndarray],
                  gamma: float, indicator: str = "true_fine") -> float:
    """Cross entropy plus gamma times its restriction to fine-labeled frames,
    each averaged per video and then over videos."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if indicator not in INDICATOR_MODES:
        raise ValueError(f"unknown indicator mode {indicator!r}")
    if len(probs_per_video) != len(labels_per_video):
        raise ValueError("probability and label corpora differ in size")
    total = 0.0
    for probs, labels in zip(probs_per_video, labels_per_video):
        probs = np.asarray(probs, dtype=np.float64)
        labels = np.asarray(labels)
        if len(probs) != len(labels):
            raise ValueError("track length mismatch")
        weights = _frame_weights(labels, probs, gamma, indicator)
        picked = probs[np.arange(len(labels)), labels]
        total += float(np.sum(weights * -np.log(np.maximum(picked, nnet.PROB_FLOOR))))
    return total / len(probs_per_video)


# ---------------------------------------------------------------------------
# models
# ---------------------------------------------------------------------------

class MlpSelector:
    """Frame-independent 2-hidden-layer classifier on the probability features."""

    def __init__(self, n_features: int, hidden: tuple[int, int], seed: int):
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        self.n_features = n_features
        self.fc1 = nnet.Dense(n_features, hidden[0], rng)
        self.act1 = nnet.ReLU()
        self.fc2 = nnet.Dense(hidden[0], hidden[1], rng)
        self.act2 = nnet.ReLU()
        self.out = nnet.Dense(hidden[1], 2, rng)
        self._named = {"fc1": self.fc1, "fc2": self.fc2, "out": self.out}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        return self.out.forward(self.act2.forward(
            self.fc2.forward(self.act1.forward(self.fc1.forward(x)))))

    def backward(self, dlogits: np.ndarray) -> None:
        self.fc1.backward(self.act1.backward(
            self.fc2.backward(self.act2.backward(self.out.backward(dlogits)))))

    @property
    def params(self):
        return {f"{n}.{k}": v for n, l in self._named.items() for k, v in l.params.items()}

    @property
    def grads(self):
        return {f"{n}.{k}": v for n, l in self._named.items() for k, v in l.grads.items()}

    def zero_grad(self):
        for l in self._named.values():
            l.zero_grad()


class TcnSelector:
    """Residual dilated temporal convolutions over the whole feature sequence."""

    def __init__(self, n_features: int, channels: int = 32, blocks: int = 4,
                 kernel: int = 3, seed: int = 0):
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        self.n_features = n_features
        self.proj_in = nnet.Dense(n_features, channels, rng)
        self.blocks = []
        for i in range(blocks):
            conv = nnet.DilatedConv1d(channels, channels, kernel, 2 ** i, rng)
            self.blocks.append((conv, nnet.ReLU(), nnet.Dense(channels, channels, rng)))
        self.out = nnet.Dense(channels, 2, rng)
        self._named = {"in": self.proj_in, "out": self.out}
        for i, (conv, _, proj) in enumerate(self.blocks):
            self._named[f"block{i}.conv"] = conv
            self._named[f"block{i}.proj"] = proj

    @property
    def receptive_radius(self) -> int:
        """Frames of context each output frame can see on either side."""
        return sum(conv.radius for conv, _, _ in self.blocks)

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {x.shape[1]}")
        u = self.proj_in.forward(x)
        for conv, act, proj in self.blocks:
            u = u + proj.forward(act.forward(conv.forward(u)))
        return self.out.forward(u)

    def backward(self, dlogits: np.ndarray) -> None:
        du = self.out.backward(dlogits)
        for conv, act, proj in reversed(self.blocks):
            du = du + conv.backward(act.backward(proj.backward(du)))
        self.proj_in.backward(du)

    @property
    def params(self):
        return {f"{n}.{k}": v for n, l in self._named.items() for k, v in l.params.items()}

    @property
    def grads(self):
        return {f"{n}.{k}": v for n, l in self._named.items() for k, v in l.grads.items()}

    def zero_grad(self):
        for l in self._named.values():
            l.zero_grad()


def make_selector(n_features: int, config: SelectorConfig, seed: int):
    if config.variant == "mlp":
        return MlpSelector(n_features, config.hidden, seed)
    return TcnSelector(n_features, config.channels, config.blocks,
                       config.kernel, seed)


# ---------------------------------------------------------------------------
# training and inference
# ---------------------------------------------------------------------------

def select(model, features: np.ndarray) -> GranularityTrack:
    """Classify every frame; ties at exactly 0.5 go fine."""
    logits = model.forward(np.asarray(features, dtype=np.float64))
    return GranularityTrack.from_probs(nnet.softmax(logits))


def compose_output(track: GranularityTrack,
                   forecast: ForecastDistribution) -> MixedPrediction:
    """Emit the fine argmax where fine was selected, the coarse argmax elsewhere."""
    if len(track.selection) != forecast.horizon:
        raise ValueError("selection and forecast lengths differ")
    labels = np.where(track.selection == FINE, forecast.fine_argmax,
                      forecast.coarse_argmax)
    return MixedPrediction(track.selection.copy(), labels)


def validation_weighted_accuracy(model, examples: list[SelectorExample],
                                 beta: float) -> float:
    """Corpus-level weighted accuracy of the model's selections."""
    selections = [select(model, ex.features).selection for ex in examples]
    return weighted_accuracy_from_hits(
        np.concatenate(selections),
        np.concatenate([ex.fine_correct for ex in examples]),
        np.concatenate([ex.coarse_correct for ex in examples]),
        beta)


def train_selector(train_examples: list[SelectorExample],
                   val_examples: list[SelectorExample],
                   config: SelectorConfig, beta: float, seed: int):
    """Train the configured variant on the combined objective, early-stopping
    on best validation weighted accuracy at the given beta."""
    if not train_examples:
        raise ValueError("empty selector training set")
    if not val_examples:
        raise ValueError("selector training needs a disjoint validation split")
    n_features = train_examples[0].features.shape[1]
    model = make_selector(n_features, config, seed)
    shuffle_rng = np.random.default_rng(
        np.random.SeedSequence(seed).spawn(2)[1])
    optim = nnet.Adam(lr=config.lr)

    best_score = -1.0
    best_params = None
    stale = 0
    for epoch in range(config.epochs):
        for idx in shuffle_rng.permutation(len(train_examples)):
            ex = train_examples[idx]
            model.zero_grad()
            logits = model.forward(ex.features)
            probs = nnet.softmax(logits)
            weights = _frame_weights(ex.labels, probs, config.gamma, config.indicator)
            loss, dlogits = nnet.softmax_cross_entropy(logits, ex.labels, weights)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite selector loss at epoch {epoch}, video {ex.id}")
            model.backward(dlogits)
            optim.step(model.params, model.grads)
        score = validation_weighted_accuracy(model, val_examples, beta)
        if score > best_score:
            best_score = score
            best_params = copy.deepcopy(model.params)
            stale = 0
        else:
            stale += 1
            if stale > config.patience:
                break
    for name, value in model.params.items():
        value[...] = best_params[name]
    return model


# ---------------------------------------------------------------------------
# dataset files
# ---------------------------------------------------------------------------

def write_selector_dataset(path: str | Path, examples: list[SelectorExample]) -> None:
    """JSON-lines rows {id, features, labels} plus the coarse-correctness
    column this package uses for validation scoring."""
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps({
                "id": ex.id,
                "features": ex.features.tolist(),
                "labels": ex.labels.tolist(),
                "coarse_correct": ex.coarse_correct.tolist(),
            }) + "\n")


def read_selector_dataset(path: str | Path) -> list[SelectorExample]:
    """Accepts any upstream dump with at least {id, features, labels}; a
    missing coarse_correct column is treated as all-correct (upper bound)."""
    examples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            labels = np.asarray(row["labels"], dtype=np.int64)
            coarse = np.asarray(row.get("coarse_correct", np.ones_like(labels)),
                                dtype=np.int64)
            examples.append(SelectorExample(
                row["id"], np.asarray(row["features"], dtype=np.float64),
                labels, coarse))
    return examples
