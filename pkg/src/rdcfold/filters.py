"""Ramachandran and Karplus scalar-coupling filters for dihedral grids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from .exceptions import ValidationError
from .geometry import DihedralPair

RESIDUE_CLASSES = ("general", "glycine", "proline")


@dataclass(frozen=True)
class Rectangle:
    """Half-open box: phi_min <= phi < phi_max and psi_min <= psi < psi_max."""

    phi_min: float
    phi_max: float
    psi_min: float
    psi_max: float

    def __post_init__(self):
        for lo, hi in ((self.phi_min, self.phi_max), (self.psi_min, self.psi_max)):
            if not (-180.0 <= lo < hi <= 180.0):
                raise ValidationError(f"rectangle bounds out of range: {self}")

    def contains(self, phi: float, psi: float) -> bool:
        return self.phi_min <= phi < self.phi_max and self.psi_min <= psi < self.psi_max


class RamachandranTable:
    """Allowed (phi, psi) regions per residue class, as unions of rectangles."""

    def __init__(self, regions: Mapping[str, Iterable[Rectangle]]):
        self.regions = {cls: tuple(rects) for cls, rects in regions.items()}
        for cls, rects in self.regions.items():
            if not rects:
                raise ValidationError(f"residue class {cls!r} has no allowed region")

    @classmethod
    def default(cls) -> "RamachandranTable":
        beta = Rectangle(-180, -30, 90, 180)
        helix = Rectangle(-180, -30, -90, -10)
        wrap = Rectangle(-180, -30, -180, -120)
        general = (helix, beta, wrap)
        left = Rectangle(30, 100, -10, 90)
        proline = tuple(Rectangle(-100, -30, r.psi_min, r.psi_max) for r in general)
        return cls({"general": general, "glycine": general + (left,), "proline": proline})

    @classmethod
    def allow_all(cls) -> "RamachandranTable":
        everything = (Rectangle(-180, 180, -180, 180),)
        return cls({name: everything for name in RESIDUE_CLASSES})

    def classes(self) -> tuple[str, ...]:
        return tuple(self.regions)

    def rectangles(self, residue_class: str) -> tuple[Rectangle, ...]:
        try:
            return self.regions[residue_class]
        except KeyError:
            raise ValidationError(f"unknown residue class {residue_class!r}") from None

    def __eq__(self, other):
        return isinstance(other, RamachandranTable) and self.regions == other.regions

    def __repr__(self):
        return f"RamachandranTable({self.regions!r})"


@dataclass(frozen=True)
class KarplusCoefficients:
    """J(phi) = A cos^2(theta) + B cos(theta) + C with theta = phi + offset."""

    A: float = 6.51
    B: float = -1.76
    C: float = 1.60
    offset: float = -60.0

    def __post_init__(self):
        if not all(math.isfinite(x) for x in (self.A, self.B, self.C, self.offset)):
            raise ValidationError("Karplus coefficients must be finite")


@dataclass(frozen=True)
class ScalarCouplingRecord:
    residue_index: int
    j: float
    tolerance: float = 1.0

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValidationError(f"coupling tolerance must be > 0, got {self.tolerance!r}")


DEFAULT_KARPLUS = KarplusCoefficients()


def ramachandran_pass(d: DihedralPair, residue_class: str,
                      table: RamachandranTable | None = None) -> bool:
    table = table or RamachandranTable.default()
    return any(r.contains(d.phi, d.psi) for r in table.rectangles(residue_class))


def karplus_coupling(phi: float, coeffs: KarplusCoefficients = DEFAULT_KARPLUS) -> float:
    cos_t = math.cos(math.radians(phi + coeffs.offset))
    return coeffs.A * cos_t * cos_t + coeffs.B * cos_t + coeffs.C


def rama_filter(grid: Sequence[DihedralPair], residue_class: str,
                table: RamachandranTable | None = None) -> list[DihedralPair]:
    table = table or RamachandranTable.default()
    rects = table.rectangles(residue_class)
    return [d for d in grid if any(r.contains(d.phi, d.psi) for r in rects)]


def scalar_filter(grid: Sequence[DihedralPair], coupling: ScalarCouplingRecord | None,
                  coeffs: KarplusCoefficients = DEFAULT_KARPLUS) -> list[DihedralPair]:
    if coupling is None:
        return list(grid)
    return [d for d in grid
            if abs(karplus_coupling(d.phi, coeffs) - coupling.j) <= coupling.tolerance]


def filter_grid(grid: Sequence[DihedralPair], residue_class: str = "general",
                table: RamachandranTable | None = None,
                coupling: ScalarCouplingRecord | None = None,
                coeffs: KarplusCoefficients = DEFAULT_KARPLUS) -> list[DihedralPair]:
    """Keep grid points that pass both filters, preserving input order.

    An empty result is returned as is; callers decide how to recover.
    """
    if not grid:
        raise ValidationError("grid must be non-empty")
    return scalar_filter(rama_filter(grid, residue_class, table), coupling, coeffs)
