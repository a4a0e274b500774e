"""Two-level action label hierarchy: fine labels, coarse labels, and the map between them.

Label indices (not names) are the canonical runtime representation; names only
appear at I/O boundaries.  A mapping file is plain text, one fine label per
line, ``<fine_name><TAB><coarse_name>``; coarse label order is first-appearance
order and ``#``-prefixed lines are comments.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class TaxonomyError(ValueError):
    """Raised for malformed or inconsistent label hierarchies."""


@dataclass(frozen=True)
class Taxonomy:
    """An ordered two-level label hierarchy with a total fine-to-coarse map.

    Immutable after construction; safe to share across threads.
    """

    fine_labels: tuple[str, ...]
    coarse_labels: tuple[str, ...]
    fine_to_coarse: tuple[int, ...]
    granularity_count: int = 2
    _groups: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.fine_labels) != len(set(self.fine_labels)):
            raise TaxonomyError("duplicate fine label names")
        if len(self.coarse_labels) != len(set(self.coarse_labels)):
            raise TaxonomyError("duplicate coarse label names")
        if len(self.coarse_labels) < 2:
            raise TaxonomyError("need at least 2 coarse labels")
        if len(self.fine_labels) < len(self.coarse_labels):
            raise TaxonomyError("more coarse labels than fine labels")
        if len(self.fine_to_coarse) != len(self.fine_labels):
            raise TaxonomyError("fine_to_coarse must map every fine label")
        for f, c in enumerate(self.fine_to_coarse):
            if not 0 <= c < len(self.coarse_labels):
                raise TaxonomyError(f"fine index {f} maps to invalid coarse index {c}")
        if self.granularity_count < 2:
            raise TaxonomyError("granularity_count must be >= 2")
        groups = [[] for _ in self.coarse_labels]
        for f, c in enumerate(self.fine_to_coarse):
            groups[c].append(f)
        object.__setattr__(self, "_groups", tuple(tuple(g) for g in groups))

    @property
    def n_fine(self) -> int:
        return len(self.fine_labels)

    @property
    def n_coarse(self) -> int:
        return len(self.coarse_labels)

    def coarsen(self, fine_index: int) -> int:
        """Coarse index for one fine index. Pure and total over [0, n_fine)."""
        if not 0 <= fine_index < self.n_fine:
            raise TaxonomyError(f"fine index {fine_index} out of range [0, {self.n_fine})")
        return self.fine_to_coarse[fine_index]

    def coarsen_track(self, fine_track: np.ndarray) -> np.ndarray:
        """Vectorized coarsen over a per-frame fine-index array."""
        track = np.asarray(fine_track)
        if track.size and (track.min() < 0 or track.max() >= self.n_fine):
            raise TaxonomyError("fine track contains out-of-range indices")
        return np.asarray(self.fine_to_coarse, dtype=np.int64)[track]

    def group_members(self, coarse_index: int) -> tuple[int, ...]:
        """Fine indices mapped to the given coarse index."""
        return self._groups[coarse_index]

    def group_sum(self, fine_matrix: np.ndarray) -> np.ndarray:
        """Sum the trailing axis of a (..., n_fine) array into coarse groups."""
        fine_matrix = np.asarray(fine_matrix, dtype=np.float64)
        out = np.zeros(fine_matrix.shape[:-1] + (self.n_coarse,))
        for c, members in enumerate(self._groups):
            out[..., c] = fine_matrix[..., list(members)].sum(axis=-1)
        return out

    def fine_index(self, name: str) -> int:
        return self.fine_labels.index(name)


def load_mapping(path: str | Path) -> Taxonomy:
    """Parse a fine-to-coarse mapping file into a validated Taxonomy."""
    path = Path(path)
    fine_labels: list[str] = []
    coarse_labels: list[str] = []
    fine_to_coarse: list[int] = []
    seen: dict[str, int] = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise TaxonomyError(f"{path.name}:{lineno}: expected '<fine>\\t<coarse>', got {raw!r}")
        fine, coarse = parts
        if fine in seen:
            raise TaxonomyError(f"{path.name}:{lineno}: fine label {fine!r} mapped twice")
        seen[fine] = lineno
        if coarse not in coarse_labels:
            coarse_labels.append(coarse)
        fine_labels.append(fine)
        fine_to_coarse.append(coarse_labels.index(coarse))
    if not fine_labels:
        raise TaxonomyError(f"{path.name}: no mappings found")
    return Taxonomy(tuple(fine_labels), tuple(coarse_labels), tuple(fine_to_coarse))


def save_mapping(tax: Taxonomy, path: str | Path) -> None:
    """Write a Taxonomy back to the mapping-file format, preserving order."""
    lines = [
        f"{fine}\t{tax.coarse_labels[tax.fine_to_coarse[i]]}"
        for i, fine in enumerate(tax.fine_labels)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def taxonomy_digest(tax: Taxonomy) -> str:
    """Stable content hash, used to pin checkpoints to their label hierarchy."""
    import hashlib

    text = "\n".join(
        f"{fine}\t{tax.coarse_labels[tax.fine_to_coarse[i]]}"
        for i, fine in enumerate(tax.fine_labels)
    )
    return hashlib.sha256(text.encode("utf-8")).hexdigest()
