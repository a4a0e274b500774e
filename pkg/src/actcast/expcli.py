"""Config-driven experiment pipelines with persisted, reproducible artifacts.

Verbs: gen-data, train-forecaster, train-selector, sweep, timeline,
uncertainty-report, score.  One declarative JSON config drives every stage;
defaults are in DEFAULT_CONFIG (and documented in the README), all seeds are
explicit, and rerunning a stage with the same config and seeds produces
byte-identical dumps and reports (the run manifest, which records wall-clock
times, is the only exception).
"""

from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__, data, forecaster as fc, metrics, selector as sel
from .taxonomy import Taxonomy, load_mapping, save_mapping

STAGES = ("gen-data", "train-forecaster", "train-selector", "sweep",
          "timeline", "uncertainty-report", "score")
ALL_MODES = ("ensemble", "mc_dropout", "bayesian")


class ConfigError(ValueError):
    """Invalid experiment configuration; message names the offending key."""


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


DEFAULT_CONFIG = {
    "name": "benchmark",
    "out": "runs/benchmark",
    "corpus": {
        "source": "grammar",          # "grammar" | "annotations"
        "grammar": "default",         # "default" | path to a grammar JSON
        "annotations_dir": None,      # used when source == "annotations"
        "n_videos": 200,
        "noise_scale": 0.3,
        "seed": 7,
    },
    "taxonomy": "default",            # "default" | path to a mapping file
    "splits": {"k": 5, "seed": 7, "val_fraction": 0.15},
    "observation": {"alpha": 0.2, "horizon_fraction": 0.5},
    "forecaster": {
        "mode": "bayesian",           # "ensemble" | "mc_dropout" | "bayesian" | "all"
        "members": 3,
        "samples": 16,
        "rate": 0.25,
        "hidden": 32,
        "epochs": 40,
        "lr": 0.01,
        "duration_weight": 1.0,
        "train_samples": 16,
        "seed": 11,
    },
    "selector": {
        "variants": ["tcn"],          # subset of {"mlp", "tcn"}
        "gammas": [0.0, 0.5, 1.0, 2.0, 4.0],
        "seeds": [1],
        "channels": 32,
        "hidden": [32, 32],
        "blocks": 4,
        "kernel": 3,
        "epochs": 30,
        "patience": 6,
        "lr": 0.01,
        "indicator": "true_fine",
        "source_mode": "bayesian",    # which forecaster dumps feed the selector
        "val_fraction": 0.25,         # stop-split carved from the selector data
    },
    "evaluation": {"betas": [0.5, 1.0, 2.0]},
    "sweep": {"fold": 0},
}


def _merge_defaults(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and isinstance(value, dict):
            out[key] = _merge_defaults(base[key], value, where)
        else:
            out[key] = value
    return out


def load_config(path: str | Path | None, *, seed: int | None = None,
                out: str | None = None) -> dict:
    """Load, default-fill, and validate an experiment config.

    --seed replaces every explicit seed in the config with values spawned
    from the given master seed; --out overrides the output directory.
    """
    if path is None:
        cfg = copy.deepcopy(DEFAULT_CONFIG)
    else:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        with open(path, encoding="utf-8") as fh:
            try:
                user = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path}: invalid JSON ({exc})") from exc
        cfg = _merge_defaults(DEFAULT_CONFIG, user)
    if out is not None:
        cfg["out"] = out
    if seed is not None:
        derived = [int(s.generate_state(1)[0])
                   for s in np.random.SeedSequence(seed).spawn(4)]
        cfg["corpus"]["seed"] = derived[0]
        cfg["splits"]["seed"] = derived[1]
        cfg["forecaster"]["seed"] = derived[2]
        cfg["selector"]["seeds"] = [derived[3] + i
                                    for i in range(len(cfg["selector"]["seeds"]))]
    _validate_config(cfg, base=path.parent if path is not None else None)
    return cfg


def _validate_config(cfg: dict, base: Path | None = None) -> None:
    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() or base is None else base / p

    corpus = cfg["corpus"]
    if corpus["source"] not in ("grammar", "annotations"):
        raise ConfigError(f"corpus.source: unknown source {corpus['source']!r}")
    if corpus["source"] == "grammar":
        if corpus["grammar"] != "default":
            g = resolve(corpus["grammar"])
            if not g.exists():
                raise ConfigError(f"corpus.grammar: path {g} does not exist")
            corpus["grammar"] = str(g)
        if corpus["n_videos"] < cfg["splits"]["k"]:
            raise ConfigError("corpus.n_videos: fewer videos than splits.k folds")
    else:
        if not corpus["annotations_dir"]:
            raise ConfigError("corpus.annotations_dir: required when source=annotations")
        d = resolve(corpus["annotations_dir"])
        if not d.is_dir():
            raise ConfigError(f"corpus.annotations_dir: {d} is not a directory")
        corpus["annotations_dir"] = str(d)
    if cfg["taxonomy"] != "default":
        t = resolve(cfg["taxonomy"])
        if not t.exists():
            raise ConfigError(f"taxonomy: path {t} does not exist")
        cfg["taxonomy"] = str(t)
    if cfg["splits"]["k"] < 2:
        raise ConfigError("splits.k: need at least 2 folds")
    if not 0 < cfg["observation"]["alpha"] < 1:
        raise ConfigError("observation.alpha: must be in (0, 1)")
    if not 0 < cfg["observation"]["horizon_fraction"] <= 1:
        raise ConfigError("observation.horizon_fraction: must be in (0, 1]")
    mode = cfg["forecaster"]["mode"]
    if mode not in ALL_MODES + ("all",):
        raise ConfigError(f"forecaster.mode: unknown mode {mode!r}")
    if not cfg["selector"]["variants"]:
        raise ConfigError("selector.variants: grid must be nonempty")
    for v in cfg["selector"]["variants"]:
        if v not in ("mlp", "tcn"):
            raise ConfigError(f"selector.variants: unknown variant {v!r}")
    if not cfg["selector"]["gammas"]:
        raise ConfigError("selector.gammas: grid must be nonempty")
    if any(g < 0 for g in cfg["selector"]["gammas"]):
        raise ConfigError("selector.gammas: penalties must be >= 0")
    if not cfg["selector"]["seeds"]:
        raise ConfigError("selector.seeds: must list at least one seed")
    if not cfg["evaluation"]["betas"]:
        raise ConfigError("evaluation.betas: grid must be nonempty")
    if any(b <= 0 for b in cfg["evaluation"]["betas"]):
        raise ConfigError("evaluation.betas: weights must be > 0")
    if cfg["selector"]["source_mode"] not in ALL_MODES:
        raise ConfigError("selector.source_mode: must name one uncertainty mode")
    if not 0 <= cfg["sweep"]["fold"] < cfg["splits"]["k"]:
        raise ConfigError("sweep.fold: out of range for splits.k")


# ---------------------------------------------------------------------------
# shared materialization
# ---------------------------------------------------------------------------

def _taxonomy(cfg: dict) -> Taxonomy:
    if cfg["taxonomy"] == "default":
        return data.default_taxonomy()
    return load_mapping(cfg["taxonomy"])


def _grammar(cfg: dict) -> data.GrammarSpec:
    if cfg["corpus"]["grammar"] == "default":
        return data.default_grammar()
    return data.load_grammar(cfg["corpus"]["grammar"])


def materialize(cfg: dict):
    """Rebuild (taxonomy, corpus, folds) deterministically from the config."""
    tax = _taxonomy(cfg)
    corpus_cfg = cfg["corpus"]
    if corpus_cfg["source"] == "grammar":
        corpus = data.generate_corpus(_grammar(cfg), corpus_cfg["n_videos"],
                                      corpus_cfg["seed"], tax,
                                      noise_scale=corpus_cfg["noise_scale"])
    else:
        corpus = data.load_annotations(corpus_cfg["annotations_dir"], tax)
    folds = data.make_splits(corpus, cfg["splits"]["k"], cfg["splits"]["seed"],
                             cfg["splits"]["val_fraction"])
    return tax, corpus, folds


def _forecaster_config(cfg: dict, kind: str) -> fc.ForecasterConfig:
    f = cfg["forecaster"]
    return fc.ForecasterConfig(
        hidden=f["hidden"], epochs=f["epochs"], lr=f["lr"],
        mode=fc.UncertaintyMode(kind, members=f["members"],
                                samples=f["samples"], rate=f["rate"]),
        duration_weight=f["duration_weight"], train_samples=f["train_samples"])


def _modes(cfg: dict) -> list[str]:
    mode = cfg["forecaster"]["mode"]
    return list(ALL_MODES) if mode == "all" else [mode]


def _out(cfg: dict) -> Path:
    return Path(cfg["out"])


def _update_manifest(cfg: dict, stage: str, artifacts: list[Path],
                     wall_clock: float) -> None:
    out = _out(cfg)
    out.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "manifest.json"
    manifest = {}
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    manifest.setdefault("config_sha256", hashlib.sha256(
        json.dumps(cfg, sort_keys=True).encode()).hexdigest())
    manifest["version"] = __version__
    stages = manifest.setdefault("stages", {})
    stages[stage] = {
        "artifacts": sorted(str(p.relative_to(out)) for p in artifacts),
        "wall_clock_s": round(wall_clock, 3),
        "completed_unix": time.time(),
    }
    for rel in stages[stage]["artifacts"]:
        if not (out / rel).exists():
            raise StageError(stage, f"artifact {rel} missing after run")
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n",
                             encoding="utf-8")


def _parallel_map(fn, tasks: list, jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# ---------------------------------------------------------------------------
# gen-data
# ---------------------------------------------------------------------------

def cmd_gen_data(cfg: dict, jobs: int = 1) -> list[Path]:
    start = time.time()
    tax, corpus, folds = materialize(cfg)
    out = _out(cfg)
    corpus_dir = out / "corpus"
    data.write_annotations(corpus, tax, corpus_dir)
    data.write_manifest(corpus, out / "corpus_manifest.jsonl")
    save_mapping(tax, out / "taxonomy.tsv")
    artifacts = [out / "corpus_manifest.jsonl", out / "taxonomy.tsv"]
    if cfg["corpus"]["source"] == "grammar":
        data.save_grammar(_grammar(cfg), out / "grammar.json")
        artifacts.append(out / "grammar.json")
    splits_path = out / "splits.json"
    splits_path.write_text(json.dumps(
        [asdict(f) for f in folds], indent=2, sort_keys=True) + "\n",
        encoding="utf-8")
    artifacts += [splits_path] + sorted(corpus_dir.iterdir())
    _update_manifest(cfg, "gen-data", artifacts, time.time() - start)
    return artifacts


# ---------------------------------------------------------------------------
# train-forecaster
# ---------------------------------------------------------------------------

def _dump_forecasts(models, mode: fc.UncertaintyMode, videos, tax, cfg,
                    seed: int, path: Path) -> None:
    """Predict the full remainder of each video, keep the evaluation window."""
    alpha = cfg["observation"]["alpha"]
    hfrac = cfg["observation"]["horizon_fraction"]
    entries = []
    for video in videos:
        split = data.split_observation(video, alpha, hfrac)
        obs = fc.encode_observation(video, split.t0, tax)
        full = video.n_frames - split.t0
        dist = fc.predict_future(models, obs, full, mode, seed, tax)
        entries.append((video.id, split.t0, dist.truncate(split.horizon)))
    fc.write_forecast_dump(path, entries)


def _train_forecaster_task(args):
    cfg, kind, fold_idx = args
    tax, corpus, folds = materialize(cfg)
    by_id = {v.id: v for v in corpus}
    fold = folds[fold_idx]
    fconfig = _forecaster_config(cfg, kind)
    seed = cfg["forecaster"]["seed"] + fold_idx
    train_videos = [by_id[i] for i in fold.train_ids]
    models = fc.train_uncertainty_models(train_videos, tax, fconfig, seed,
                                         alpha=cfg["observation"]["alpha"])
    fold_dir = _out(cfg) / "forecaster" / kind / f"fold{fold_idx}"
    fold_dir.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for m, model in enumerate(models):
        ckpt = fold_dir / f"member{m}.ckpt"
        fc.save_forecaster(model, ckpt, mode=fconfig.mode, seed=seed, tax=tax)
        artifacts += [ckpt, ckpt.with_suffix(ckpt.suffix + ".json")]
    for split_name, ids in (("val", fold.val_ids), ("test", fold.test_ids)):
        dump = fold_dir / f"{split_name}.jsonl"
        _dump_forecasts(models, fconfig.mode, [by_id[i] for i in ids], tax, cfg,
                        seed, dump)
        artifacts.append(dump)
    return [str(p) for p in artifacts]


def cmd_train_forecaster(cfg: dict, jobs: int = 1) -> list[Path]:
    start = time.time()
    tasks = [(cfg, kind, f) for kind in _modes(cfg)
             for f in range(cfg["splits"]["k"])]
    results = _parallel_map(_train_forecaster_task, tasks, jobs)
    artifacts = [Path(p) for paths in results for p in paths]
    _update_manifest(cfg, "train-forecaster", artifacts, time.time() - start)
    return artifacts


# ---------------------------------------------------------------------------
# selector data plumbing
# ---------------------------------------------------------------------------

def _load_dump(cfg: dict, kind: str, fold_idx: int, split: str, stage: str):
    path = _out(cfg) / "forecaster" / kind / f"fold{fold_idx}" / f"{split}.jsonl"
    if not path.exists():
        raise StageError(stage, f"missing forecaster dump {path}; "
                                f"run train-forecaster first")
    return fc.read_forecast_dump(path)


def _examples_from_dump(entries, by_id, tax) -> list[sel.SelectorExample]:
    examples = []
    for vid, t0, dist in entries:
        truth = by_id[vid].frames_fine[t0:t0 + dist.horizon]
        examples.append(sel.build_example(vid, dist, truth, tax))
    return examples


def _selector_splits(cfg: dict, examples: list[sel.SelectorExample]):
    """Carve the stop split off the end of the selector dataset."""
    n_val = max(1, round(cfg["selector"]["val_fraction"] * len(examples)))
    if n_val >= len(examples):
        raise StageError("train-selector", "selector dataset too small to split")
    return examples[:-n_val], examples[-n_val:]


def _selector_config(cfg: dict, variant: str, gamma: float) -> sel.SelectorConfig:
    s = cfg["selector"]
    return sel.SelectorConfig(
        variant=variant, gamma=gamma, hidden=tuple(s["hidden"]),
        channels=s["channels"], blocks=s["blocks"], kernel=s["kernel"],
        epochs=s["epochs"], patience=s["patience"], lr=s["lr"],
        indicator=s["indicator"])


def _score_composed(track: sel.GranularityTrack, dist, truth, tax, beta):
    composed = sel.compose_output(track, dist)
    return metrics.weighted_accuracy(composed.selection, dist.fine_argmax,
                                     dist.coarse_argmax, truth, tax, beta)


def _evaluate_selection(cfg, model, entries, by_id, tax, beta):
    """Corpus-level scores of a trained selector over dump entries."""
    selections, fine_hits, coarse_hits = [], [], []
    for vid, t0, dist in entries:
        truth = by_id[vid].frames_fine[t0:t0 + dist.horizon]
        track = sel.select(model, sel.build_features(dist))
        selections.append(track.selection)
        fine_hits.append(dist.fine_argmax == truth)
        coarse_hits.append(dist.coarse_argmax == tax.coarsen_track(truth))
    selection = np.concatenate(selections)
    fine_hit = np.concatenate(fine_hits)
    coarse_hit = np.concatenate(coarse_hits)
    return {
        "weighted": metrics.weighted_accuracy_from_hits(selection, fine_hit,
                                                        coarse_hit, beta),
        "fine": float(np.mean((selection == metrics.FINE) & fine_hit)),
        "coarse": float(np.mean((selection == metrics.COARSE) & coarse_hit)),
        "fraction_coarse": float(np.mean(selection == metrics.COARSE)),
    }


def _train_selector_task(args):
    cfg, variant, gamma, beta, fold_idx, seed = args
    tax, corpus, folds = materialize(cfg)
    by_id = {v.id: v for v in corpus}
    kind = cfg["selector"]["source_mode"]
    val_entries = _load_dump(cfg, kind, fold_idx, "val", "train-selector")
    test_entries = _load_dump(cfg, kind, fold_idx, "test", "train-selector")
    examples = _examples_from_dump(val_entries, by_id, tax)
    train_ex, stop_ex = _selector_splits(cfg, examples)
    config = _selector_config(cfg, variant, gamma)
    model = sel.train_selector(train_ex, stop_ex, config, beta, seed)

    sel_dir = (_out(cfg) / "selector" / f"fold{fold_idx}"
               / f"{variant}_gamma{gamma:g}_beta{beta:g}_seed{seed}")
    sel_dir.mkdir(parents=True, exist_ok=True)
    from .nnet import save_params
    ckpt = sel_dir / "model.ckpt"
    save_params(ckpt, model.params)
    scores = _evaluate_selection(cfg, model, test_entries, by_id, tax, beta)
    report = metrics.ScoreReport(
        experiment=cfg["name"], fold=fold_idx, beta=beta, gamma=gamma,
        seed=seed, split="test", strategy=f"selector:{variant}",
        weighted_accuracy=scores["weighted"], fine_accuracy=scores["fine"],
        coarse_accuracy=scores["coarse"],
        fraction_coarse_selected=scores["fraction_coarse"])
    return str(ckpt), report


def cmd_train_selector(cfg: dict, jobs: int = 1) -> list[Path]:
    start = time.time()
    s = cfg["selector"]
    tasks = [(cfg, variant, gamma, beta, fold_idx, seed)
             for variant in s["variants"]
             for gamma in s["gammas"]
             for beta in cfg["evaluation"]["betas"]
             for fold_idx in range(cfg["splits"]["k"])
             for seed in s["seeds"]]
    results = _parallel_map(_train_selector_task, tasks, jobs)
    reports = [r for _, r in results]
    out = _out(cfg) / "selector"
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_reports_csv(reports, out / "reports.csv")
    metrics.write_reports_json(reports, out / "reports.jsonl")
    artifacts = [Path(c) for c, _ in results] + [out / "reports.csv",
                                                 out / "reports.jsonl"]
    _update_manifest(cfg, "train-selector", artifacts, time.time() - start)
    return artifacts


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

def _sweep_task(args):
    cfg, variant, gamma, beta, fold_idx, seed = args
    tax, corpus, folds = materialize(cfg)
    by_id = {v.id: v for v in corpus}
    kind = cfg["selector"]["source_mode"]
    val_entries = _load_dump(cfg, kind, fold_idx, "val", "sweep")
    examples = _examples_from_dump(val_entries, by_id, tax)
    train_ex, stop_ex = _selector_splits(cfg, examples)
    model = sel.train_selector(train_ex, stop_ex,
                               _selector_config(cfg, variant, gamma), beta, seed)
    stop_ids = {ex.id for ex in stop_ex}
    stop_entries = [e for e in val_entries if e[0] in stop_ids]
    return _evaluate_selection(cfg, model, stop_entries, by_id, tax, beta)


def _write_matrix(path: Path, gammas, betas, values) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["gamma\\beta"] + [repr(float(b)) for b in betas])
        for gi, gamma in enumerate(gammas):
            writer.writerow([repr(float(gamma))]
                            + [repr(values[gi][bi]) for bi in range(len(betas))])


def cmd_sweep_heatmap(cfg: dict, jobs: int = 1) -> list[Path]:
    """Gamma x beta grids of coarse / fine / weighted accuracy on the sweep
    fold's validation data (one selector trained and stopped per cell)."""
    start = time.time()
    gammas = cfg["selector"]["gammas"]
    betas = cfg["evaluation"]["betas"]
    variant = cfg["selector"]["variants"][0]
    fold_idx = cfg["sweep"]["fold"]
    seed = cfg["selector"]["seeds"][0]
    tasks = [(cfg, variant, gamma, beta, fold_idx, seed)
             for gamma in gammas for beta in betas]
    results = _parallel_map(_sweep_task, tasks, jobs)
    out = _out(cfg) / "sweep"
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for key in ("fine", "coarse", "weighted"):
        values = [[results[gi * len(betas) + bi][key] for bi in range(len(betas))]
                  for gi in range(len(gammas))]
        path = out / f"{key}_accuracy.csv"
        _write_matrix(path, gammas, betas, values)
        artifacts.append(path)
    _update_manifest(cfg, "sweep", artifacts, time.time() - start)
    return artifacts


# ---------------------------------------------------------------------------
# timeline
# ---------------------------------------------------------------------------

_SVG_PALETTE = [
    "#4c78a8", "#f58518", "#54a24b", "#e45756", "#72b7b2", "#eeca3b",
    "#b279a2", "#ff9da6", "#9d755d", "#bab0ac", "#7b4173", "#637939",
]


def _timeline_svg(truth_names, oracle, min_gamma, gammas, tax) -> str:
    """Three aligned tracks as SVG rects: truth labels, the best possible
    fine/coarse split, and the smallest gamma at which each frame goes fine."""
    t = len(truth_names)
    cell, row_h, gap, label_w = 6, 24, 10, 110
    width = label_w + t * cell + 10
    height = 3 * (row_h + gap) + 30
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" font-family="sans-serif" font-size="11">']
    rows = [("ground truth", 0), ("best possible", 1), ("min gamma fine", 2)]
    for title, r in rows:
        y = 10 + r * (row_h + gap)
        parts.append(f'<text x="4" y="{y + row_h - 8}">{title}</text>')
    for i in range(t):
        x = label_w + i * cell
        color = _SVG_PALETTE[tax.fine_index(truth_names[i]) % len(_SVG_PALETTE)]
        parts.append(f'<rect x="{x}" y="10" width="{cell}" height="{row_h}" '
                     f'fill="{color}"/>')
        y2 = 10 + (row_h + gap)
        oc = "#54a24b" if oracle[i] == metrics.FINE else "#bab0ac"
        parts.append(f'<rect x="{x}" y="{y2}" width="{cell}" height="{row_h}" '
                     f'fill="{oc}"/>')
        y3 = 10 + 2 * (row_h + gap)
        if np.isfinite(min_gamma[i]):
            rank = gammas.index(min_gamma[i])
            shade = 235 - int(180 * (len(gammas) - rank) / len(gammas))
            g3 = f"rgb({shade},{shade},255)"
        else:
            g3 = "#ffffff"
        parts.append(f'<rect x="{x}" y="{y3}" width="{cell}" height="{row_h}" '
                     f'fill="{g3}" stroke="#dddddd" stroke-width="0.25"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_timeline(cfg: dict, video_ids: list[str], jobs: int = 1) -> list[Path]:
    """Per-video tracks: ground truth, the oracle fine/coarse split, and the
    smallest gamma in the grid at which each frame is selected fine."""
    start = time.time()
    tax, corpus, folds = materialize(cfg)
    by_id = {v.id: v for v in corpus}
    kind = cfg["selector"]["source_mode"]
    gammas = sorted(cfg["selector"]["gammas"])
    betas = cfg["evaluation"]["betas"]
    stop_beta = 1.0 if 1.0 in betas else betas[0]
    seed = cfg["selector"]["seeds"][0]
    variant = cfg["selector"]["variants"][0]

    fold_of = {}
    for f, fold in enumerate(folds):
        for vid in fold.test_ids:
            fold_of[vid] = f
    for vid in video_ids:
        if vid not in by_id:
            raise StageError("timeline", f"unknown video id {vid!r}")
        if vid not in fold_of:
            raise StageError("timeline", f"video {vid!r} is not in any test fold")

    needed_folds = sorted({fold_of[v] for v in video_ids})
    models = {}
    for fold_idx in needed_folds:
        val_entries = _load_dump(cfg, kind, fold_idx, "val", "timeline")
        examples = _examples_from_dump(val_entries, by_id, tax)
        train_ex, stop_ex = _selector_splits(cfg, examples)
        for gamma in gammas:
            models[(fold_idx, gamma)] = sel.train_selector(
                train_ex, stop_ex, _selector_config(cfg, variant, gamma),
                stop_beta, seed)

    out = _out(cfg) / "timeline"
    out.mkdir(parents=True, exist_ok=True)
    artifacts = []
    for vid in video_ids:
        fold_idx = fold_of[vid]
        entries = {e[0]: e for e in _load_dump(cfg, kind, fold_idx, "test", "timeline")}
        _, t0, dist = entries[vid]
        truth = by_id[vid].frames_fine[t0:t0 + dist.horizon]
        oracle = sel.oracle_selector(dist, truth).selection
        min_gamma = np.full(dist.horizon, np.inf)
        for gamma in gammas:
            track = sel.select(models[(fold_idx, gamma)], sel.build_features(dist))
            fine_now = (track.selection == metrics.FINE) & ~np.isfinite(min_gamma)
            min_gamma[fine_now] = gamma
        truth_names = [tax.fine_labels[a] for a in truth]
        csv_path = out / f"{vid}.csv"
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "truth_fine", "oracle_choice", "min_gamma_fine"])
            for i in range(dist.horizon):
                writer.writerow([
                    t0 + i + 1, truth_names[i],
                    "fine" if oracle[i] == metrics.FINE else "coarse",
                    repr(float(min_gamma[i])) if np.isfinite(min_gamma[i]) else "never",
                ])
        svg_path = out / f"{vid}.svg"
        svg_path.write_text(_timeline_svg(truth_names, oracle, min_gamma,
                                          gammas, tax), encoding="utf-8")
        artifacts += [csv_path, svg_path]
    _update_manifest(cfg, "timeline", artifacts, time.time() - start)
    return artifacts


# ---------------------------------------------------------------------------
# uncertainty report
# ---------------------------------------------------------------------------

def cmd_uncertainty_report(cfg: dict, jobs: int = 1) -> list[Path]:
    """Table of per-mode NLL and distribution MSE on the configured
    observation protocol, plus per-frame NLL-over-time curves computed over
    the full remainder of each test video."""
    start = time.time()
    tax, corpus, folds = materialize(cfg)
    by_id = {v.id: v for v in corpus}
    fold_idx = cfg["sweep"]["fold"]
    fold = folds[fold_idx]
    alpha = cfg["observation"]["alpha"]

    for kind in ALL_MODES:
        fold_dir = _out(cfg) / "forecaster" / kind / f"fold{fold_idx}"
        if not (fold_dir / "test.jsonl").exists():
            raise StageError("uncertainty-report",
                             f"missing mode {kind!r}: no dump at {fold_dir}; "
                             f"run train-forecaster with forecaster.mode=all")

    out = _out(cfg) / "uncertainty"
    out.mkdir(parents=True, exist_ok=True)
    report_rows = []
    curve_rows = []
    for kind in ALL_MODES:
        entries = _load_dump(cfg, kind, fold_idx, "test", "uncertainty-report")
        nlls, preds, truths = [], [], []
        for vid, t0, dist in entries:
            truth = by_id[vid].frames_fine[t0:t0 + dist.horizon]
            nlls.append(metrics.nll(dist.fine_mean, truth))
            preds.append(dist.fine_mean)
            truths.append(metrics.one_hot_track(truth, tax.n_fine))
        mode_nll = float(np.mean(nlls))
        mode_mse = metrics.mse_nll(preds, truths)
        report_rows.append((kind, mode_nll, mode_mse))

        fold_dir = _out(cfg) / "forecaster" / kind / f"fold{fold_idx}"
        members = sorted(fold_dir.glob("member*.ckpt"))
        models, meta = [], None
        for ckpt in members:
            model, meta = fc.load_forecaster(ckpt)
            models.append(model)
        mode_obj = fc.UncertaintyMode(**meta["mode"])
        for vid in fold.test_ids:
            video = by_id[vid]
            t0 = int(np.floor(alpha * video.n_frames))
            obs = fc.encode_observation(video, t0, tax)
            dist = fc.predict_future(models, obs, video.n_frames - t0, mode_obj,
                                     meta["seed"], tax)
            truth = video.frames_fine[t0:]
            per_frame = metrics.nll_per_frame(dist.fine_mean, truth)
            for i, value in enumerate(per_frame):
                curve_rows.append([kind, vid, i, tax.fine_labels[truth[i]],
                                   repr(float(value))])

    report_path = out / "report.csv"
    with open(report_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "nll", "mse_nll"])
        for kind, v_nll, v_mse in report_rows:
            writer.writerow([kind, repr(v_nll), repr(v_mse)])
    curves_path = out / "nll_curves.csv"
    with open(curves_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["mode", "video", "frame_offset", "truth_fine", "nll"])
        writer.writerows(curve_rows)
    artifacts = [report_path, curves_path]
    _update_manifest(cfg, "uncertainty-report", artifacts, time.time() - start)
    return artifacts


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

def strategy_reports(cfg: dict, kind: str, fold_idx: int, tax, by_id,
                     split: str = "test") -> list[metrics.ScoreReport]:
    """Score the selector-free strategies (all fine, all coarse, oracle)."""
    entries = _load_dump(cfg, kind, fold_idx, split, "score")
    reports = []
    for beta in cfg["evaluation"]["betas"]:
        for strategy in ("all_fine", "all_coarse", "oracle"):
            selections, fine_hits, coarse_hits = [], [], []
            mocs, nlls = [], []
            for vid, t0, dist in entries:
                truth = by_id[vid].frames_fine[t0:t0 + dist.horizon]
                if strategy == "all_fine":
                    selection = np.full(dist.horizon, metrics.FINE)
                elif strategy == "all_coarse":
                    selection = np.full(dist.horizon, metrics.COARSE)
                else:
                    selection = sel.oracle_selector(dist, truth).selection
                selections.append(selection)
                fine_hits.append(dist.fine_argmax == truth)
                coarse_hits.append(dist.coarse_argmax == tax.coarsen_track(truth))
                mocs.append(metrics.moc_accuracy(dist.fine_argmax, truth))
                nlls.append(metrics.nll(dist.fine_mean, truth))
            selection = np.concatenate(selections)
            fine_hit = np.concatenate(fine_hits)
            coarse_hit = np.concatenate(coarse_hits)
            reports.append(metrics.ScoreReport(
                experiment=cfg["name"], fold=fold_idx, beta=beta, gamma=float("nan"),
                seed=cfg["forecaster"]["seed"] + fold_idx, split=split,
                strategy=strategy,
                weighted_accuracy=metrics.weighted_accuracy_from_hits(
                    selection, fine_hit, coarse_hit, beta),
                fine_accuracy=float(np.mean((selection == metrics.FINE) & fine_hit)),
                coarse_accuracy=float(np.mean((selection == metrics.COARSE) & coarse_hit)),
                fraction_coarse_selected=float(np.mean(selection == metrics.COARSE)),
                moc=float(np.mean(mocs)), nll=float(np.mean(nlls))))
    return reports


def cmd_score(cfg: dict, jobs: int = 1) -> list[Path]:
    start = time.time()
    tax, corpus, folds = materialize(cfg)
    by_id = {v.id: v for v in corpus}
    kind = cfg["selector"]["source_mode"]
    reports = []
    for fold_idx in range(cfg["splits"]["k"]):
        reports += strategy_reports(cfg, kind, fold_idx, tax, by_id)
    out = _out(cfg) / "score"
    out.mkdir(parents=True, exist_ok=True)
    metrics.write_reports_csv(reports, out / "report.csv")
    metrics.write_reports_json(reports, out / "report.jsonl")
    artifacts = [out / "report.csv", out / "report.jsonl"]
    _update_manifest(cfg, "score", artifacts, time.time() - start)
    return artifacts


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actcast",
        description="Granularity-aware dense action forecasting pipelines.")
    parser.add_argument("--config", help="experiment config JSON")
    parser.add_argument("--seed", type=int, help="override every config seed")
    parser.add_argument("--out", help="override the output directory")
    parser.add_argument("--jobs", type=int, default=1,
                        help="parallel workers for fold/grid tasks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        if name == "timeline":
            p.add_argument("videos", nargs="+", help="video ids to render")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    stage = args.command
    try:
        cfg = load_config(args.config, seed=args.seed, out=args.out)
        if stage == "gen-data":
            artifacts = cmd_gen_data(cfg, jobs=args.jobs)
        elif stage == "train-forecaster":
            artifacts = cmd_train_forecaster(cfg, jobs=args.jobs)
        elif stage == "train-selector":
            artifacts = cmd_train_selector(cfg, jobs=args.jobs)
        elif stage == "sweep":
            artifacts = cmd_sweep_heatmap(cfg, jobs=args.jobs)
        elif stage == "timeline":
            artifacts = cmd_timeline(cfg, args.videos, jobs=args.jobs)
        elif stage == "uncertainty-report":
            artifacts = cmd_uncertainty_report(cfg, jobs=args.jobs)
        else:
            artifacts = cmd_score(cfg, jobs=args.jobs)
    except ConfigError as exc:
        print(f"error [config]: {exc}", file=sys.stderr)
        return 2
    except StageError as exc:
        print(f"error [{exc.stage}]: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # surface module errors with stage context
        print(f"error [{stage}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    print(f"{stage}: wrote {len(artifacts)} artifacts under {cfg['out']}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
