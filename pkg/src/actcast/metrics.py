"""Scoring for mixed-granularity forecasts.

Weighted accuracy gives full credit for a correct fine prediction and
``beta`` credit for a correct coarse prediction on frames where coarse was
selected; scores are normalized by max(1, beta) so they stay in [0, 1] and
reproduce both limits: beta -> 0 recovers fine-only accuracy, beta -> inf
recovers coarse-only accuracy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .taxonomy import Taxonomy

FINE, COARSE = 0, 1
_LOG_FLOOR = 1e-12


def _check_lengths(*tracks):
    lengths = {len(t) for t in tracks}
    if len(lengths) != 1:
        raise ValueError(f"track length mismatch: {sorted(lengths)}")
    if 0 in lengths:
        raise ValueError("empty tracks")


def weighted_accuracy_from_hits(selection: np.ndarray, fine_correct: np.ndarray,
                                coarse_correct: np.ndarray, beta: float) -> float:
    """Weighted accuracy from per-frame correctness indicators."""
    if not (beta > 0 and np.isfinite(beta)):
        raise ValueError(f"beta must be positive and finite, got {beta}")
    selection = np.asarray(selection)
    _check_lengths(selection, fine_correct, coarse_correct)
    fine_hit = (selection == FINE) & (np.asarray(fine_correct) != 0)
    coarse_hit = (selection == COARSE) & (np.asarray(coarse_correct) != 0)
    credit = fine_hit * 1.0 + coarse_hit * beta
    return float(credit.sum() / (len(selection) * max(1.0, beta)))


def weighted_accuracy(selection: np.ndarray, fine_pred: np.ndarray,
                      coarse_pred: np.ndarray, truth_fine: np.ndarray,
                      tax: Taxonomy, beta: float) -> float:
    """Per-frame credit 1 / beta / 0, summed and normalized by T * max(1, beta)."""
    selection = np.asarray(selection)
    fine_pred = np.asarray(fine_pred)
    coarse_pred = np.asarray(coarse_pred)
    truth_fine = np.asarray(truth_fine)
    _check_lengths(selection, fine_pred, coarse_pred, truth_fine)
    truth_coarse = tax.coarsen_track(truth_fine)
    return weighted_accuracy_from_hits(selection, fine_pred == truth_fine,
                                       coarse_pred == truth_coarse, beta)


def fine_selected_accuracy(selection, fine_pred, truth_fine) -> float:
    """Fraction of frames that were selected fine and correct at fine level."""
    selection = np.asarray(selection)
    fine_pred = np.asarray(fine_pred)
    truth_fine = np.asarray(truth_fine)
    _check_lengths(selection, fine_pred, truth_fine)
    return float(np.mean((selection == FINE) & (fine_pred == truth_fine)))


def coarse_selected_accuracy(selection, coarse_pred, truth_fine, tax) -> float:
    """Fraction of frames that were selected coarse and correct at coarse level."""
    selection = np.asarray(selection)
    coarse_pred = np.asarray(coarse_pred)
    truth_fine = np.asarray(truth_fine)
    _check_lengths(selection, coarse_pred, truth_fine)
    return float(np.mean((selection == COARSE)
                         & (coarse_pred == tax.coarsen_track(truth_fine))))


def moc_accuracy(pred_fine: np.ndarray, truth_fine: np.ndarray) -> float:
    """Mean-over-class frame accuracy, averaged over classes present in truth."""
    pred_fine = np.asarray(pred_fine)
    truth_fine = np.asarray(truth_fine)
    _check_lengths(pred_fine, truth_fine)
    per_class = [
        float(np.mean(pred_fine[truth_fine == c] == c))
        for c in np.unique(truth_fine)
    ]
    return float(np.mean(per_class))


def nll(prob_track: np.ndarray, truth: np.ndarray) -> float:
    """Mean negative log probability of the true class, floored at 1e-12."""
    prob_track = np.asarray(prob_track, dtype=np.float64)
    truth = np.asarray(truth)
    _check_lengths(prob_track, truth)
    picked = prob_track[np.arange(len(truth)), truth]
    return float(np.mean(-np.log(np.maximum(picked, _LOG_FLOOR))))


def nll_per_frame(prob_track: np.ndarray, truth: np.ndarray) -> np.ndarray:
    prob_track = np.asarray(prob_track, dtype=np.float64)
    truth = np.asarray(truth)
    _check_lengths(prob_track, truth)
    picked = prob_track[np.arange(len(truth)), truth]
    return -np.log(np.maximum(picked, _LOG_FLOOR))


def interpolate_to_length(prob_track: np.ndarray, length: int) -> np.ndarray:
    """Stretch a (T, C) probability track to (length, C) by per-class linear
    interpolation over a uniform time reparameterization, then renormalize
    each frame.  length == T returns the track unchanged."""
    prob_track = np.asarray(prob_track, dtype=np.float64)
    t = prob_track.shape[0]
    if t < 1:
        raise ValueError("empty probability track")
    if length < t:
        raise ValueError(f"target length {length} < source length {t}")
    if length == t:
        return prob_track.copy()
    if t == 1:
        return np.tile(prob_track[0], (length, 1))
    src = np.linspace(0.0, 1.0, t)
    dst = np.linspace(0.0, 1.0, length)
    out = np.column_stack([np.interp(dst, src, prob_track[:, c])
                           for c in range(prob_track.shape[1])])
    return out / out.sum(axis=1, keepdims=True)


def one_hot_track(truth: np.ndarray, n_classes: int) -> np.ndarray:
    truth = np.asarray(truth)
    return np.eye(n_classes)[truth]


def mse_nll(pred_tracks: list[np.ndarray], truth_tracks: list[np.ndarray]) -> float:
    """Mean over videos of mean-over-frames squared distance between predicted
    and ground-truth probability vectors, after interpolating every track to
    the longest length present in either corpus."""
    if not pred_tracks or not truth_tracks:
        raise ValueError("empty corpus")
    if len(pred_tracks) != len(truth_tracks):
        raise ValueError("corpora sizes differ")
    longest = max(max(len(t) for t in pred_tracks),
                  max(len(t) for t in truth_tracks))
    total = 0.0
    for pred, truth in zip(pred_tracks, truth_tracks):
        p = interpolate_to_length(pred, longest)
        q = interpolate_to_length(truth, longest)
        if p.shape != q.shape:
            raise ValueError("class-count mismatch between prediction and truth")
        total += float(np.mean(((p - q) ** 2).sum(axis=1)))
    return total / len(pred_tracks)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

# canonical CSV column order used by all pipeline stages
REPORT_COLUMNS = [
    "experiment", "fold", "beta", "gamma", "seed", "split", "strategy",
    "weighted_accuracy", "fine_accuracy", "coarse_accuracy",
    "fraction_coarse_selected", "moc", "nll", "mse_nll",
]


@dataclass
class ScoreReport:
    """One scored configuration with its provenance."""

    experiment: str
    fold: int
    beta: float
    gamma: float
    seed: int
    split: str
    strategy: str
    weighted_accuracy: float
    fine_accuracy: float
    coarse_accuracy: float
    fraction_coarse_selected: float
    moc: float = float("nan")
    nll: float = float("nan")
    mse_nll: float = float("nan")
    per_class_moc: dict[str, float] = field(default_factory=dict)

    def csv_row(self) -> list:
        d = asdict(self)
        return [d[c] for c in REPORT_COLUMNS]


def per_class_accuracy(pred_fine: np.ndarray, truth_fine: np.ndarray,
                       tax: Taxonomy) -> dict[str, float]:
    pred_fine = np.asarray(pred_fine)
    truth_fine = np.asarray(truth_fine)
    return {
        tax.fine_labels[c]: float(np.mean(pred_fine[truth_fine == c] == c))
        for c in np.unique(truth_fine)
    }


def write_reports_csv(reports: list[ScoreReport], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in r.csv_row()])


def write_reports_json(reports: list[ScoreReport], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(asdict(r), sort_keys=True) + "\n")


def read_reports_csv(path: str | Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
