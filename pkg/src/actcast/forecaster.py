"""Autoregressive segment-level action forecaster with uncertainty.

A gated recurrent model consumes the observed segment sequence and then
rolls forward segment by segment, feeding each emitted action back as the
next input together with the emitted length and the frames still to fill.
Segment outputs (class logits, logit spread, duration fraction) are
expanded to a per-frame distribution track over the requested horizon.
Three uncertainty modes turn point predictions into per-frame mean and
variance: ensembles of independently trained models, stochastic passes
with test-time dropout, and Gaussian sampling from the model's own
mean/spread output heads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nnet
from .data import VideoSequence, frames_to_segments
from .taxonomy import Taxonomy, taxonomy_digest

MODES = ("ensemble", "mc_dropout", "bayesian")
MAX_ROLLOUT_SEGMENTS = 50
LENGTH_SCALE = 20.0  # frames per unit on the length/remaining input channels


@dataclass(frozen=True)
class UncertaintyMode:
    """How per-frame uncertainty is estimated.

    kind "ensemble" uses `members` separately trained models; "mc_dropout"
    uses `samples` stochastic rollouts at rate `rate`; "bayesian" draws
    `samples` Gaussian logit vectors per step from the mean/spread heads.
    """

    kind: str
    members: int = 3
    samples: int = 16
    rate: float = 0.25

    def __post_init__(self):
        if self.kind not in MODES:
            raise ValueError(f"unknown uncertainty mode {self.kind!r}")
        if self.members < 1:
            raise ValueError("ensemble needs at least 1 member")
        if self.samples < 1:
            raise ValueError("need at least 1 sample")
        if not 0.0 <= self.rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {self.rate}")


@dataclass(frozen=True)
class ForecasterConfig:
    hidden: int = 32
    epochs: int = 50
    lr: float = 0.01
    mode: UncertaintyMode = UncertaintyMode("bayesian")
    duration_weight: float = 16.0
    train_samples: int = 16
    use_features: bool = False   # encode observed segments from features vs labels
    lr_decay_factor: float = 0.2  # step decay applied late in training
    lr_decay_at: float = 0.6      # fraction of epochs after which decay kicks in


@dataclass(frozen=True)
class SegmentPrediction:
    """One rollout step: class logits, logit spread, and duration fraction."""

    mu_logits: np.ndarray       # (n_fine,)
    sigma: np.ndarray           # (n_fine,), >= 0 via softplus
    duration_fraction: float    # in (0, 1], fraction of the remaining window

    def __post_init__(self):
        if np.any(self.sigma < 0):
            raise ValueError("sigma head produced negative spread")
        if not 0.0 < self.duration_fraction <= 1.0:
            raise ValueError(f"duration fraction {self.duration_fraction} out of (0, 1]")


@dataclass(frozen=True)
class ObservedSegments:
    """Encoder-ready view of an observed prefix."""

    inputs: np.ndarray          # (n_segments, n_fine + 2)
    last_action: int
    last_length: int

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise ValueError("observed sequence must contain at least one segment")


@dataclass(frozen=True)
class ForecastDistribution:
    """Per-future-frame class probability mean and variance, both levels."""

    fine_mean: np.ndarray
    fine_var: np.ndarray
    coarse_mean: np.ndarray
    coarse_var: np.ndarray
    fine_argmax: np.ndarray = field(init=False)
    coarse_argmax: np.ndarray = field(init=False)

    def __post_init__(self):
        for name, mean in (("fine", self.fine_mean), ("coarse", self.coarse_mean)):
            if np.any(mean < -1e-12) or np.any(mean > 1.0 + 1e-9):
                raise ValueError(f"{name} mean entries outside [0, 1]")
            if np.any(np.abs(mean.sum(axis=1) - 1.0) > 1e-6):
                raise ValueError(f"{name} mean rows do not sum to 1")
        for name, var in (("fine", self.fine_var), ("coarse", self.coarse_var)):
            if np.any(var < 0):
                raise ValueError(f"{name} variance entries below 0")
        object.__setattr__(self, "fine_argmax", np.argmax(self.fine_mean, axis=1))
        object.__setattr__(self, "coarse_argmax", np.argmax(self.coarse_mean, axis=1))

    @property
    def horizon(self) -> int:
        return self.fine_mean.shape[0]

    @staticmethod
    def from_fine(fine_mean: np.ndarray, fine_var: np.ndarray,
                  tax: Taxonomy) -> "ForecastDistribution":
        """Coarse mean is the group sum of fine means; variances aggregate by
        summation within each coarse group."""
        return ForecastDistribution(
            fine_mean=np.asarray(fine_mean, dtype=np.float64),
            fine_var=np.asarray(fine_var, dtype=np.float64),
            coarse_mean=tax.group_sum(fine_mean),
            coarse_var=tax.group_sum(fine_var),
        )

    def truncate(self, horizon: int) -> "ForecastDistribution":
        if not 1 <= horizon <= self.horizon:
            raise ValueError(f"cannot truncate horizon {self.horizon} to {horizon}")
        return ForecastDistribution(
            self.fine_mean[:horizon], self.fine_var[:horizon],
            self.coarse_mean[:horizon], self.coarse_var[:horizon])


class SegmentForecaster:
    """Shared recurrent core with mean-logit, logit-spread, and duration heads.

    Inputs per step: the previous action as a one-hot (or its feature mean
    for observed segments), its length, and the frames still to fill, both
    scaled by LENGTH_SCALE.  Observed steps carry 0 in the remaining slot.
    """

    SIGMA_INIT = -1.0  # raw bias of the spread head; softplus(-1) ~ 0.31

    def __init__(self, n_fine: int, hidden: int, seed: int, dropout: float = 0.0):
        self.n_fine = n_fine
        self.hidden = hidden
        self.dropout = dropout
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        self.cell = nnet.GatedRecurrentCell(n_fine + 2, hidden, rng)
        self.head_mu = nnet.Dense(hidden, n_fine, rng)
        self.head_sigma = nnet.Dense(hidden, n_fine, rng)
        self.head_sigma.params["b"][...] = self.SIGMA_INIT
        self.head_dur = nnet.Dense(hidden, 1, rng)

    def _layers(self):
        return {"cell": self.cell, "mu": self.head_mu,
                "sigma": self.head_sigma, "dur": self.head_dur}

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": p for ln, layer in self._layers().items()
                for pn, p in layer.params.items()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{ln}.{pn}": g for ln, layer in self._layers().items()
                for pn, g in layer.grads.items()}

    def zero_grad(self):
        for layer in self._layers().values():
            layer.zero_grad()

    def input_vector(self, action_rep: np.ndarray, length: float,
                     remaining: float) -> np.ndarray:
        x = np.zeros((1, self.n_fine + 2))
        x[0, :self.n_fine] = action_rep
        x[0, -2] = length / LENGTH_SCALE
        x[0, -1] = remaining / LENGTH_SCALE
        return x

    def encode(self, observed: ObservedSegments, keep_caches: bool = False):
        h = self.cell.initial_state()
        caches = []
        for x in observed.inputs:
            h, cache = self.cell.step(x[None, :], h)
            if keep_caches:
                caches.append(cache)
        return (h, caches) if keep_caches else h

    def decode_step(self, h: np.ndarray, prev_action: int, prev_length: float,
                    remaining: float, mask: np.ndarray | None = None):
        """One autoregressive step; returns (new state, SegmentPrediction)."""
        rep = np.zeros(self.n_fine)
        rep[prev_action] = 1.0
        h, _ = self.cell.step(self.input_vector(rep, prev_length, remaining), h)
        hm = h * mask if mask is not None else h
        mu = self.head_mu.apply(hm)[0]
        sigma = nnet.softplus(self.head_sigma.apply(hm)[0])
        frac = float(nnet.sigmoid(self.head_dur.apply(hm))[0, 0])
        return h, SegmentPrediction(mu, sigma, frac)


def encode_observation(video: VideoSequence, t0: int, tax: Taxonomy,
                       use_features: bool = False) -> ObservedSegments:
    """Segment-level encoder inputs for the observed prefix [0, t0).

    Each row holds the segment's action representation (the mean of its
    per-frame features when requested and present, else the exact one-hot)
    plus the segment length; the remaining-frames slot is 0 for observed
    steps.
    """
    if not 1 <= t0 <= video.n_frames:
        raise ValueError(f"t0={t0} out of range for video of {video.n_frames} frames")
    segments = frames_to_segments(video.frames_fine[:t0])
    rows = []
    pos = 0
    for seg in segments:
        if use_features and video.features is not None:
            rep = video.features[pos:pos + seg.length].mean(axis=0)
        else:
            rep = np.zeros(tax.n_fine)
            rep[seg.action] = 1.0
        rows.append(np.concatenate([rep, [seg.length / LENGTH_SCALE, 0.0]]))
        pos += seg.length
    last = segments[-1]
    return ObservedSegments(np.array(rows), last.action, last.length)


def _teacher_sequence(video: VideoSequence, t0: int, tax: Taxonomy,
                      use_features: bool = False):
    """Ground-truth decode inputs and targets for the future [t0, T).

    Decode inputs carry the previous segment's action one-hot, its length,
    and the frames remaining from the current position to the video end;
    duration targets are fractions of that remainder, so the final
    segment's target is exactly 1.
    """
    future = frames_to_segments(video.frames_fine[t0:])
    total = video.n_frames
    obs = encode_observation(video, t0, tax, use_features=use_features)
    prev_action, prev_length = obs.last_action, obs.last_length
    inputs, actions, fractions = [], [], []
    pos = t0
    for seg in future:
        x = np.zeros(tax.n_fine + 2)
        x[prev_action] = 1.0
        x[-2] = prev_length / LENGTH_SCALE
        x[-1] = (total - pos) / LENGTH_SCALE
        inputs.append(x)
        actions.append(seg.action)
        fractions.append(seg.length / (total - pos))
        prev_action, prev_length = seg.action, seg.length
        pos += seg.length
    return obs, np.array(inputs), np.array(actions), np.array(fractions)


def train_forecaster(corpus: list[VideoSequence], tax: Taxonomy,
                     config: ForecasterConfig, seed: int,
                     alpha: float = 0.2) -> SegmentForecaster:
    """Train one recurrent forecaster with teacher forcing on future segments.

    The action loss is cross entropy on the mean head (bayesian mode:
    expected cross entropy over Gaussian logit samples, reparameterized so
    gradients reach the spread head); the duration loss is squared error on
    the log duration fraction.  The learning rate steps down by
    `lr_decay_factor` after `lr_decay_at` of the epochs.  Deterministic
    given (corpus, config, seed).
    """
    if not corpus:
        raise ValueError("empty training corpus")
    mode = config.mode
    ss = np.random.SeedSequence(seed)
    init_seed, shuffle_seed, sample_seed = (int(s.generate_state(1)[0]) for s in ss.spawn(3))
    model = SegmentForecaster(tax.n_fine, config.hidden,
                              init_seed, dropout=mode.rate)
    shuffle_rng = np.random.default_rng(shuffle_seed)
    sample_rng = np.random.default_rng(sample_seed)
    optim = nnet.Adam(lr=config.lr)

    prepared = []
    for video in corpus:
        t0 = int(np.floor(alpha * video.n_frames))
        if t0 < 1 or t0 >= video.n_frames:
            raise ValueError(f"video {video.id} too short for alpha={alpha}")
        prepared.append((video.id,
                         _teacher_sequence(video, t0, tax, config.use_features)))

    bayesian = mode.kind == "bayesian"
    use_dropout = mode.kind == "mc_dropout" and mode.rate > 0.0
    for epoch in range(config.epochs):
        if epoch >= config.lr_decay_at * config.epochs:
            optim.lr = config.lr * config.lr_decay_factor
        order = shuffle_rng.permutation(len(prepared))
        for idx in order:
            vid, (obs, dec_inputs, actions, fractions) = prepared[idx]
            model.zero_grad()
            mask = (nnet.dropout_mask((1, model.hidden), mode.rate, sample_rng)
                    if use_dropout else None)
            loss = _video_step(model, obs, dec_inputs, actions, fractions,
                               config, bayesian, sample_rng, mask)
            if not np.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch}, video {vid}")
            optim.step(model.params, model.grads)
    return model


def _video_step(model: SegmentForecaster, obs: ObservedSegments,
                dec_inputs: np.ndarray, actions: np.ndarray,
                fractions: np.ndarray, config: ForecasterConfig,
                bayesian: bool, rng: np.random.Generator,
                mask: np.ndarray | None) -> float:
    """Forward + backward for one video; accumulates gradients, returns loss."""
    cell = model.cell
    h = cell.initial_state()
    enc_caches = []
    for x in obs.inputs:
        h, cache = cell.step(x[None, :], h)
        enc_caches.append(cache)

    n_dec = len(dec_inputs)
    dec_caches, head_grads = [], []
    loss = 0.0
    for j in range(n_dec):
        h, cache = cell.step(dec_inputs[j][None, :], h)
        dec_caches.append(cache)
        hm = h * mask if mask is not None else h
        mu = model.head_mu.apply(hm)
        sig_raw = model.head_sigma.apply(hm)
        dur_raw = model.head_dur.apply(hm)
        sigma = nnet.softplus(sig_raw[0])
        frac = float(nnet.sigmoid(dur_raw)[0, 0])

        if bayesian:
            ce, dmu, dsigma = nnet.expected_cross_entropy(
                mu[0], sigma, int(actions[j]), config.train_samples, rng)
            dmu = dmu[None, :]
            dsig_raw = (dsigma * nnet.sigmoid(sig_raw[0]))[None, :]
        else:
            ce, dmu = nnet.softmax_cross_entropy(mu, [int(actions[j])],
                                                 weights=np.ones(1))
            dsig_raw = np.zeros_like(sig_raw)
        dur_loss, ddur = nnet.squared_log_error(frac, float(fractions[j]))
        ddur_raw = np.array([[ddur * frac * (1.0 - frac)]])

        scale = 1.0 / n_dec
        loss += scale * (ce + config.duration_weight * dur_loss)
        head_grads.append((hm, scale * dmu, scale * dsig_raw,
                           scale * config.duration_weight * ddur_raw))

    dh = np.zeros((1, model.hidden))
    for j in reversed(range(n_dec)):
        hm, dmu, dsig_raw, ddur_raw = head_grads[j]
        dhm = (model.head_mu.apply_backward(hm, dmu)
               + model.head_sigma.apply_backward(hm, dsig_raw)
               + model.head_dur.apply_backward(hm, ddur_raw))
        if mask is not None:
            dhm = dhm * mask
        _, dh = cell.step_backward(dec_caches[j], dh + dhm)
    for cache in reversed(enc_caches):
        _, dh = cell.step_backward(cache, dh)
    return loss


def train_uncertainty_models(corpus: list[VideoSequence], tax: Taxonomy,
                             config: ForecasterConfig, seed: int,
                             alpha: float = 0.2) -> list[SegmentForecaster]:
    """Train the model set a mode needs: K members for ensembles, one otherwise."""
    n = config.mode.members if config.mode.kind == "ensemble" else 1
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]
    return [train_forecaster(corpus, tax, config, s, alpha) for s in seeds]


# ---------------------------------------------------------------------------
# rollout and frame expansion
# ---------------------------------------------------------------------------

def _segment_frames(fraction: float, remaining: int) -> int:
    return min(remaining, max(1, int(np.floor(fraction * remaining + 0.5))))


def expand_segments_to_frames(segments: list[tuple[np.ndarray, float]],
                              horizon: int) -> np.ndarray:
    """Expand (distribution row, duration fraction) pairs to exactly `horizon`
    frames.  Each segment covers round(fraction * remaining) frames; the last
    segment is extended (or truncated) to fill the window."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if not segments:
        raise ValueError("no segment predictions to expand")
    rows = []
    remaining = horizon
    for i, (dist, fraction) in enumerate(segments):
        if remaining <= 0:
            break
        frames = remaining if i == len(segments) - 1 else _segment_frames(fraction, remaining)
        rows.append(np.tile(np.asarray(dist, dtype=np.float64), (frames, 1)))
        remaining -= frames
    return np.vstack(rows)


def _rollout(model: SegmentForecaster, observed: ObservedSegments, horizon: int,
             mask: np.ndarray | None = None,
             bayes: tuple[int, np.random.Generator] | None = None):
    """Autoregressive rollout filling `horizon` frames.

    Feeds back the argmax action as a one-hot, plus the emitted frame count
    and the frames still unfilled, at each step.  Returns (mean_track,
    var_track); the variance track is zero unless `bayes` provides
    (n_samples, rng), in which case each step's distribution is the mean of
    n_samples softmax transforms of Gaussian logit draws and the variance is
    their spread (exactly zero when the spread head emits zero).
    """
    h = model.encode(observed)
    prev_action, prev_length = observed.last_action, observed.last_length
    mean_rows, var_rows = [], []
    remaining = horizon
    steps = 0
    while remaining > 0 and steps < MAX_ROLLOUT_SEGMENTS:
        h, pred = model.decode_step(h, prev_action, prev_length, remaining,
                                    mask=mask)
        if bayes is not None:
            n_samples, rng = bayes
            eps = rng.standard_normal((n_samples, model.n_fine))
            probs = nnet.softmax(pred.mu_logits[None, :] + pred.sigma[None, :] * eps)
            mean = probs.mean(axis=0)
            var = (np.zeros(model.n_fine) if np.all(probs == probs[0])
                   else probs.var(axis=0))
        else:
            mean = nnet.softmax(pred.mu_logits)
            var = np.zeros(model.n_fine)
        steps += 1
        frames = (remaining if steps == MAX_ROLLOUT_SEGMENTS
                  else _segment_frames(pred.duration_fraction, remaining))
        mean_rows.append(np.tile(mean, (frames, 1)))
        var_rows.append(np.tile(var, (frames, 1)))
        remaining -= frames
        prev_action = int(np.argmax(mean))
        prev_length = frames
    return np.vstack(mean_rows), np.vstack(var_rows)


def predict_future(models: SegmentForecaster | list[SegmentForecaster],
                   observed: ObservedSegments, horizon: int,
                   mode: UncertaintyMode, seed: int,
                   tax: Taxonomy) -> ForecastDistribution:
    """Forecast per-frame fine/coarse distributions over `horizon` frames."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if isinstance(models, SegmentForecaster):
        models = [models]
    if mode.kind == "ensemble":
        if len(models) != mode.members:
            raise ValueError(f"ensemble mode expects {mode.members} models, got {len(models)}")
        tracks = [_rollout(m, observed, horizon)[0] for m in models]
        fine_mean, fine_var = _aggregate(tracks)
    elif mode.kind == "mc_dropout":
        model = models[0]
        seeds = np.random.SeedSequence(seed).spawn(mode.samples)
        tracks = []
        for s in seeds:
            rng = np.random.default_rng(s)
            msk = nnet.dropout_mask((1, model.hidden), mode.rate, rng)
            tracks.append(_rollout(model, observed, horizon, mask=msk)[0])
        fine_mean, fine_var = _aggregate(tracks)
    else:  # bayesian
        rng = np.random.default_rng(np.random.SeedSequence(seed).spawn(1)[0])
        fine_mean, fine_var = _rollout(models[0], observed, horizon,
                                       bayes=(mode.samples, rng))
    return ForecastDistribution.from_fine(fine_mean, fine_var, tax)


def _aggregate(tracks: list[np.ndarray]):
    """Empirical per-frame mean/variance over rollout tracks.

    Identical tracks (single member, p=0 dropout, copied checkpoints) yield
    an exactly zero variance."""
    stacked = np.stack(tracks)
    mean = stacked.mean(axis=0)
    if len(tracks) == 1 or all(np.array_equal(t, tracks[0]) for t in tracks[1:]):
        return tracks[0].copy(), np.zeros_like(tracks[0])
    return mean, stacked.var(axis=0)


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------

def save_forecaster(model: SegmentForecaster, path: str | Path, *,
                    mode: UncertaintyMode, seed: int, tax: Taxonomy) -> None:
    path = Path(path)
    nnet.save_params(path, model.params)
    sidecar = {
        "n_fine": model.n_fine,
        "hidden": model.hidden,
        "dropout": model.dropout,
        "mode": {"kind": mode.kind, "members": mode.members,
                 "samples": mode.samples, "rate": mode.rate},
        "seed": seed,
        "taxonomy_sha256": taxonomy_digest(tax),
    }
    path.with_suffix(path.suffix + ".json").write_text(
        json.dumps(sidecar, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_forecaster(path: str | Path) -> tuple[SegmentForecaster, dict]:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text(encoding="utf-8"))
    model = SegmentForecaster(meta["n_fine"], meta["hidden"], seed=0,
                              dropout=meta.get("dropout", 0.0))
    stored = nnet.load_params(path)
    for name, value in model.params.items():
        value[...] = stored[name]
    return model, meta


def write_forecast_dump(path: str | Path,
                        entries: list[tuple[str, int, ForecastDistribution]]) -> None:
    """JSON-lines dump: one row per video with per-frame mean/variance vectors."""
    with open(path, "w", encoding="utf-8") as fh:
        for vid, t0, dist in entries:
            fh.write(json.dumps({
                "id": vid,
                "t0": t0,
                "horizon": dist.horizon,
                "fine_mean": dist.fine_mean.tolist(),
                "fine_var": dist.fine_var.tolist(),
                "coarse_mean": dist.coarse_mean.tolist(),
                "coarse_var": dist.coarse_var.tolist(),
            }) + "\n")


def read_forecast_dump(path: str | Path) -> list[tuple[str, int, ForecastDistribution]]:
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            row = json.loads(line)
            dist = ForecastDistribution(
                np.array(row["fine_mean"]), np.array(row["fine_var"]),
                np.array(row["coarse_mean"]), np.array(row["coarse_var"]))
            entries.append((row["id"], int(row["t0"]), dist))
    return entries
