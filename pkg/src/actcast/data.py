"""Activity sequences: grammar-sampled corpora, annotation files, and splits.

A video is a run-length list of (action, length) segments expanded to
per-frame fine and coarse label tracks, optionally with per-frame feature
vectors.  Frame indexing is 1-based in docs and file formats, 0-based in
arrays.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .taxonomy import Taxonomy


class GrammarError(ValueError):
    """Raised for invalid grammar specifications."""


class AnnotationError(ValueError):
    """Raised for malformed annotation files."""


@dataclass(frozen=True)
class Segment:
    action: int
    length: int

    def __post_init__(self):
        if self.length < 1:
            raise ValueError(f"segment length must be >= 1, got {self.length}")


def segments_to_frames(segments: list[Segment]) -> np.ndarray:
    """Run-length expansion to a per-frame action track."""
    if not segments:
        raise ValueError("no segments to expand")
    return np.repeat([s.action for s in segments], [s.length for s in segments])


def frames_to_segments(frames: np.ndarray) -> list[Segment]:
    """Inverse of segments_to_frames; merges equal-label neighbors."""
    frames = np.asarray(frames)
    if frames.size == 0:
        raise ValueError("no frames to segment")
    boundaries = np.flatnonzero(np.diff(frames)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [frames.size]))
    return [Segment(int(frames[s]), int(e - s)) for s, e in zip(starts, ends)]


@dataclass(frozen=True)
class VideoSequence:
    """One activity video: segments, frame tracks, optional features."""

    id: str
    segments: tuple[Segment, ...]
    frames_fine: np.ndarray
    frames_coarse: np.ndarray
    features: np.ndarray | None = None

    def __post_init__(self):
        expanded = segments_to_frames(list(self.segments))
        if not np.array_equal(expanded, self.frames_fine):
            raise ValueError(f"video {self.id}: segments do not expand to frame track")
        if self.frames_coarse.shape != self.frames_fine.shape:
            raise ValueError(f"video {self.id}: coarse track length mismatch")
        if self.features is not None and len(self.features) != len(self.frames_fine):
            raise ValueError(f"video {self.id}: features length != frame count")

    @property
    def n_frames(self) -> int:
        return len(self.frames_fine)

    @staticmethod
    def from_segments(vid: str, segments: list[Segment], tax: Taxonomy,
                      features: np.ndarray | None = None) -> "VideoSequence":
        fine = segments_to_frames(segments)
        coarse = tax.coarsen_track(fine)
        return VideoSequence(vid, tuple(segments), fine, coarse, features)


@dataclass(frozen=True)
class ObservationSplit:
    """Observed prefix [1..t0] and future window [t0+1..t0+horizon] (1-based)."""

    t0: int
    horizon: int
    alpha: float
    horizon_fraction: float

    @property
    def observed_slice(self) -> slice:
        return slice(0, self.t0)

    @property
    def future_slice(self) -> slice:
        return slice(self.t0, self.t0 + self.horizon)


def split_observation(video: VideoSequence, alpha: float,
                      horizon_fraction: float) -> ObservationSplit:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if not 0.0 < horizon_fraction <= 1.0:
        raise ValueError(f"horizon_fraction must be in (0, 1], got {horizon_fraction}")
    t = video.n_frames
    t0 = math.floor(alpha * t)
    horizon = math.floor(horizon_fraction * (t - t0))
    if t0 < 1 or horizon < 1:
        raise ValueError(
            f"video {video.id} too short (T={t}) for alpha={alpha}, "
            f"horizon_fraction={horizon_fraction}")
    return ObservationSplit(t0, horizon, alpha, horizon_fraction)


# ---------------------------------------------------------------------------
# grammar corpora
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GrammarNode:
    name: str
    emissions: tuple[str, ...]          # fine label names, sampled uniformly
    duration: tuple[int, int]           # inclusive frame-count range
    transitions: tuple[tuple[str, float], ...]  # empty for terminal nodes


@dataclass(frozen=True)
class GrammarSpec:
    """A stochastic activity grammar: nodes, entry point, terminal set."""

    nodes: tuple[GrammarNode, ...]
    entry: str
    terminals: frozenset[str]
    _by_name: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        by_name = {n.name: n for n in self.nodes}
        if len(by_name) != len(self.nodes):
            raise GrammarError("duplicate node names")
        if self.entry not in by_name:
            raise GrammarError(f"entry node {self.entry!r} not defined")
        for t in self.terminals:
            if t not in by_name:
                raise GrammarError(f"terminal node {t!r} not defined")
        for node in self.nodes:
            if not node.emissions:
                raise GrammarError(f"node {node.name!r} has no emissions")
            lo, hi = node.duration
            if lo < 1 or hi < lo:
                raise GrammarError(f"node {node.name!r} has invalid duration range")
            if node.name in self.terminals:
                if node.transitions:
                    raise GrammarError(f"terminal node {node.name!r} has transitions")
                continue
            if not node.transitions:
                raise GrammarError(f"non-terminal node {node.name!r} has no transitions")
            total = sum(p for _, p in node.transitions)
            if abs(total - 1.0) > 1e-9:
                raise GrammarError(
                    f"node {node.name!r} transition probabilities sum to {total}")
            for target, p in node.transitions:
                if target not in by_name:
                    raise GrammarError(f"node {node.name!r} transitions to unknown {target!r}")
                if p < 0:
                    raise GrammarError(f"node {node.name!r} has negative probability")
        object.__setattr__(self, "_by_name", by_name)
        self._check_termination()

    def _check_termination(self):
        # every node reachable from entry must reach a terminal via
        # positive-probability edges, otherwise walks can run forever
        reached = {self.entry}
        frontier = [self.entry]
        while frontier:
            node = self._by_name[frontier.pop()]
            for target, p in node.transitions:
                if p > 0 and target not in reached:
                    reached.add(target)
                    frontier.append(target)
        can_finish = {n for n in reached if n in self.terminals}
        changed = True
        while changed:
            changed = False
            for name in reached - can_finish:
                node = self._by_name[name]
                if any(p > 0 and t in can_finish for t, p in node.transitions):
                    can_finish.add(name)
                    changed = True
        stuck = reached - can_finish
        if stuck:
            raise GrammarError(f"no terminal reachable from nodes {sorted(stuck)}")

    def node(self, name: str) -> GrammarNode:
        return self._by_name[name]

    def sample_walk(self, rng: np.random.Generator):
        """One walk: returns (node path, list of (fine label name, length))."""
        path = [self.entry]
        emitted: list[tuple[str, int]] = []
        current = self.entry
        while True:
            node = self._by_name[current]
            label = node.emissions[rng.integers(0, len(node.emissions))]
            length = int(rng.integers(node.duration[0], node.duration[1] + 1))
            emitted.append((label, length))
            if current in self.terminals:
                return path, emitted
            targets = [t for t, _ in node.transitions]
            probs = np.array([p for _, p in node.transitions])
            current = targets[rng.choice(len(targets), p=probs / probs.sum())]
            path.append(current)

    def to_dict(self) -> dict:
        return {
            "entry": self.entry,
            "terminals": sorted(self.terminals),
            "nodes": [
                {
                    "name": n.name,
                    "emissions": list(n.emissions),
                    "duration": list(n.duration),
                    "transitions": [[t, p] for t, p in n.transitions],
                }
                for n in self.nodes
            ],
        }

    @staticmethod
    def from_dict(d: dict) -> "GrammarSpec":
        try:
            nodes = tuple(
                GrammarNode(
                    name=nd["name"],
                    emissions=tuple(nd["emissions"]),
                    duration=(int(nd["duration"][0]), int(nd["duration"][1])),
                    transitions=tuple((t, float(p)) for t, p in nd.get("transitions", [])),
                )
                for nd in d["nodes"]
            )
            return GrammarSpec(nodes, d["entry"], frozenset(d["terminals"]))
        except (KeyError, IndexError, TypeError) as exc:
            raise GrammarError(f"malformed grammar spec: {exc}") from exc


def load_grammar(path: str | Path) -> GrammarSpec:
    with open(path, encoding="utf-8") as fh:
        return GrammarSpec.from_dict(json.load(fh))


def save_grammar(spec: GrammarSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")


def generate_corpus(spec: GrammarSpec, n: int, seed: int, tax: Taxonomy,
                    noise_scale: float = 0.3) -> list[VideoSequence]:
    """Sample n videos by walking the grammar; deterministic given seed.

    Per-frame features are the one-hot fine label plus zero-mean Gaussian
    noise of the given scale (0 disables features noise but keeps features).
    """
    if n < 1:
        raise ValueError(f"need n >= 1 videos, got {n}")
    for node in spec.nodes:
        for label in node.emissions:
            if label not in tax.fine_labels:
                raise GrammarError(f"grammar emits unknown label {label!r}")
    rng = np.random.default_rng(seed)
    corpus = []
    for i in range(n):
        _, emitted = spec.sample_walk(rng)
        segments = merge_segments(
            [Segment(tax.fine_index(label), length) for label, length in emitted])
        fine = segments_to_frames(segments)
        features = np.eye(tax.n_fine)[fine]
        features = features + rng.normal(0.0, noise_scale, size=features.shape)
        corpus.append(VideoSequence.from_segments(f"video_{i:04d}", segments, tax,
                                                  features=features))
    return corpus


def merge_segments(segments: list[Segment]) -> list[Segment]:
    """Canonical form: adjacent segments with equal actions are merged."""
    merged: list[Segment] = []
    for seg in segments:
        if merged and merged[-1].action == seg.action:
            merged[-1] = Segment(seg.action, merged[-1].length + seg.length)
        else:
            merged.append(seg)
    return merged


# ---------------------------------------------------------------------------
# annotation files
# ---------------------------------------------------------------------------

def load_annotations(directory: str | Path, tax: Taxonomy) -> list[VideoSequence]:
    """Load one VideoSequence per file (one fine label name per line per frame).

    Label-only mode: loaded sequences have no features.
    """
    directory = Path(directory)
    files = sorted(p for p in directory.iterdir() if p.is_file())
    if not files:
        raise AnnotationError(f"no annotation files in {directory}")
    corpus = []
    for path in files:
        labels = []
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(),
                                     start=1):
            name = raw.strip()
            if not name:
                continue
            if name not in tax.fine_labels:
                raise AnnotationError(
                    f"{path.name}:{lineno}: unknown label {name!r}")
            labels.append(tax.fine_index(name))
        if not labels:
            raise AnnotationError(f"{path.name}: empty annotation file")
        segments = frames_to_segments(np.array(labels))
        corpus.append(VideoSequence.from_segments(path.stem, segments, tax))
    return corpus


def write_annotations(corpus: list[VideoSequence], tax: Taxonomy,
                      directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for video in corpus:
        lines = [tax.fine_labels[a] for a in video.frames_fine]
        (directory / f"{video.id}.txt").write_text("\n".join(lines) + "\n",
                                                   encoding="utf-8")


def write_manifest(corpus: list[VideoSequence], path: str | Path) -> None:
    """JSON-lines index of video ids and lengths."""
    with open(path, "w", encoding="utf-8") as fh:
        for video in corpus:
            fh.write(json.dumps({"id": video.id, "frames": video.n_frames}) + "\n")


# ---------------------------------------------------------------------------
# cross-validation splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Fold:
    train_ids: tuple[str, ...]
    val_ids: tuple[str, ...]
    test_ids: tuple[str, ...]


def make_splits(corpus: list[VideoSequence], k: int, seed: int,
                val_fraction: float = 0.15) -> list[Fold]:
    """k disjoint test folds covering the corpus, validation carved from train."""
    if k < 2:
        raise ValueError(f"need k >= 2 folds, got {k}")
    if len(corpus) < k:
        raise ValueError(f"corpus of {len(corpus)} videos too small for k={k}")
    ids = [v.id for v in corpus]
    order = np.random.default_rng(seed).permutation(len(ids))
    folds = []
    for i in range(k):
        test_idx = order[i::k]
        rest = [j for j in order if j not in set(test_idx)]
        n_val = max(1, round(val_fraction * len(rest)))
        val_idx, train_idx = rest[:n_val], rest[n_val:]
        folds.append(Fold(
            train_ids=tuple(ids[j] for j in train_idx),
            val_ids=tuple(ids[j] for j in val_idx),
            test_ids=tuple(ids[j] for j in sorted(test_idx)),
        ))
    return folds


# ---------------------------------------------------------------------------
# shipped synthetic benchmark: taxonomy and grammar
# ---------------------------------------------------------------------------

def default_taxonomy() -> Taxonomy:
    """12 fine labels in 4 coarse groups of 3 (the shipped benchmark design)."""
    groups = {
        "prepare": ("take_bowl", "wash_hands", "get_tools"),
        "chop": ("chop_lettuce", "chop_tomato", "chop_cucumber"),
        "mix": ("add_oil", "add_salt", "stir"),
        "serve": ("pour_dressing", "plate_salad", "serve_salad"),
    }
    fine, mapping = [], []
    for c, (coarse, members) in enumerate(groups.items()):
        for m in members:
            fine.append(m)
            mapping.append(c)
    return Taxonomy(tuple(fine), tuple(groups.keys()), tuple(mapping))


def default_grammar() -> GrammarSpec:
    """Salad-like activity: variable opening, a chop-then-mix middle whose
    labels are random within each phase (with a small chance of an extra
    chop or mix segment), and a deterministic dress-and-serve tail that
    every walk ends with."""
    chops = ("chop_lettuce", "chop_tomato", "chop_cucumber")
    mixes = ("add_oil", "add_salt", "stir")
    nodes = (
        GrammarNode("setup", ("take_bowl",), (4, 8), (("prep", 1.0),)),
        GrammarNode("prep", ("wash_hands", "get_tools"), (4, 8), (("chop_a", 1.0),)),
        GrammarNode("chop_a", chops, (6, 6), (("chop_b", 1.0),)),
        GrammarNode("chop_b", chops, (6, 6), (("chop_c", 0.2), ("mix_a", 0.8))),
        GrammarNode("chop_c", chops, (6, 6), (("mix_a", 1.0),)),
        GrammarNode("mix_a", mixes, (6, 6), (("mix_b", 1.0),)),
        GrammarNode("mix_b", mixes, (6, 6), (("mix_c", 0.2), ("dress", 0.8))),
        GrammarNode("mix_c", mixes, (6, 6), (("dress", 1.0),)),
        GrammarNode("dress", ("pour_dressing",), (13, 13), (("plate", 1.0),)),
        GrammarNode("plate", ("plate_salad",), (13, 13), (("finish", 1.0),)),
        GrammarNode("finish", ("serve_salad",), (15, 15), ()),
    )
    return GrammarSpec(nodes, "setup", frozenset({"finish"}))
