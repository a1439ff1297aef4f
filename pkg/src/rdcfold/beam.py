"""Scored partial conformations and the lazy cross product of two lists."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .geometry import DihedralPair


@dataclass(frozen=True)
class BeamEntry:
    """Dihedral pairs of a partial fragment and its fitness (None if unscored)."""

    dihedrals: tuple[DihedralPair, ...]
    score: float | None = None

    def flat_angles(self) -> tuple[float, ...]:
        return tuple(a for d in self.dihedrals for a in (d.phi, d.psi))


def sort_key(entry: BeamEntry) -> tuple:
    """Total order used everywhere: score, then lexicographic dihedral sequence."""
    return (entry.score, entry.flat_angles())


def angles_to_pairs(row: np.ndarray) -> tuple[DihedralPair, ...]:
    return tuple(DihedralPair(float(phi), float(psi)) for phi, psi in row)


@dataclass(frozen=True)
class CrossStats:
    m1: int
    m2: int

    @property
    def combinations(self) -> int:
        return self.m1 * self.m2

    def as_dict(self) -> dict:
        return {"m1": self.m1, "m2": self.m2, "combinations": self.combinations}


class Beam(Sequence[BeamEntry]):
    """Array-backed beam: ``angles`` (m, k, 2) and ``scores`` (m,)."""

    def __init__(self, angles, scores):
        self.angles = np.ascontiguousarray(angles, dtype=np.float64)
        self.scores = np.ascontiguousarray(scores, dtype=np.float64)
        if self.angles.ndim != 3 or self.angles.shape[2] != 2:
            raise ValueError(f"beam angles must be (m, k, 2), got {self.angles.shape}")
        if len(self.scores) != len(self.angles):
            raise ValueError("one score per beam entry required")

    @classmethod
    def from_entries(cls, entries: Sequence[BeamEntry]) -> "Beam":
        if not entries:
            raise ValueError("empty beam")
        angles = np.array([[d.as_tuple() for d in e.dihedrals] for e in entries], dtype=float)
        scores = np.array([np.nan if e.score is None else e.score for e in entries])
        return cls(angles.reshape(len(entries), -1, 2), scores)

    @property
    def n_pairs(self) -> int:
        return self.angles.shape[1]

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Beam(self.angles[i], self.scores[i])
        return BeamEntry(angles_to_pairs(self.angles[i]), float(self.scores[i]))

    def truncated(self, m: int) -> "Beam":
        return Beam(self.angles[:m], self.scores[:m])

    def __eq__(self, other):
        return (isinstance(other, Beam) and np.array_equal(self.angles, other.angles)
                and np.array_equal(self.scores, other.scores))


class Crossing(Sequence[BeamEntry]):
    """Every extension of ``prefix`` entries by ``candidates``, i-major, j-minor.

    Nothing is materialized: combination ``c`` is ``prefix[c // m2] ++
    candidates[c % m2]``.
    """

    def __init__(self, prefix: np.ndarray, candidates: np.ndarray):
        self.prefix = np.ascontiguousarray(prefix, dtype=np.float64)
        self.candidates = np.ascontiguousarray(candidates, dtype=np.float64)
        self.stats = CrossStats(len(self.prefix), len(self.candidates))

    def __len__(self):
        return self.stats.combinations

    def angles(self, c: int) -> np.ndarray:
        i, j = divmod(int(c), self.stats.m2)
        return np.concatenate([self.prefix[i], self.candidates[j:j + 1]])

    def __getitem__(self, c):
        if isinstance(c, slice):
            return [self[i] for i in range(*c.indices(len(self)))]
        if c < 0:
            c += len(self)
        if not 0 <= c < len(self):
            raise IndexError(c)
        return BeamEntry(angles_to_pairs(self.angles(c)))

    def __iter__(self) -> Iterator[BeamEntry]:
        for c in range(len(self)):
            yield self[c]

    def beam_from(self, scores: np.ndarray, index: np.ndarray) -> Beam:
        """Materialize scored combinations ``index`` as a Beam."""
        index = np.asarray(index, dtype=np.int64)
        i, j = np.divmod(index, self.stats.m2)
        angles = np.concatenate([self.prefix[i], self.candidates[j][:, None, :]], axis=1)
        return Beam(angles, scores)
