"""Backbone construction from dihedral pairs and internuclear vector extraction.

Conventions
-----------
Residues are numbered from 1. The dihedral pair joining residue ``i`` to
``i + 1`` holds ``psi`` of residue ``i`` and ``phi`` of residue ``i + 1``: these
are the two rotatable torsions of the peptide unit between the two
alpha carbons (omega is fixed trans). A chain of ``n`` residues is therefore
fully determined by ``n - 1`` pairs.

The first residue sits in a canonical frame (N at the origin, CA on +x, C' in
the xy-plane). The carbonyl O of the last residue is undefined (NaN) until the
next residue fixes the peptide plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .exceptions import InputShapeError, ValidationError

ATOM_NAMES = ("N", "H", "CA", "HA", "C", "O")
VECTOR_TYPES = ("NH", "CAHA", "CN", "CAC")
_VECTOR_ALIASES = {
    "NH": "NH", "N-H": "NH", "N–H": "NH",
    "CAHA": "CAHA", "CA-HA": "CAHA", "Cα–Hα": "CAHA",
    "CN": "CN", "C-N": "CN", "C′–N": "CN",
    "CAC": "CAC", "CA-C": "CAC", "Cα–C′": "CAC",
}


def normalize_angle(angle: float) -> float:
    """Map an angle in degrees to [-180, 180)."""
    if not math.isfinite(angle):
        raise ValidationError(f"non-finite angle: {angle!r}")
    wrapped = math.fmod(angle + 180.0, 360.0)
    if wrapped < 0.0:
        wrapped += 360.0
    out = wrapped - 180.0
    # fmod can land on 360 - tiny for inputs just below -180
    return -180.0 if out >= 180.0 else out


@dataclass(frozen=True, order=True)
class DihedralPair:
    """A (phi, psi) torsion pair in degrees, normalized to [-180, 180)."""

    phi: float
    psi: float

    def __post_init__(self):
        object.__setattr__(self, "phi", normalize_angle(float(self.phi)))
        object.__setattr__(self, "psi", normalize_angle(float(self.psi)))

    def as_tuple(self) -> tuple[float, float]:
        return (self.phi, self.psi)


@dataclass(frozen=True)
class PeptideGeometryParams:
    """Ideal backbone geometry. Lengths in angstrom, angles in degrees."""

    n_ca: float = 1.458
    ca_c: float = 1.525
    c_n: float = 1.329
    n_h: float = 1.01
    ca_ha: float = 1.09
    c_o: float = 1.231
    angle_n_ca_c: float = 111.2
    angle_ca_c_n: float = 116.2
    angle_c_n_ca: float = 121.7
    omega: float = 180.0

    def __post_init__(self):
        for name in ("n_ca", "ca_c", "c_n", "n_h", "ca_ha", "c_o"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(f"bond length {name} must be > 0, got {value!r}")
        for name in ("angle_n_ca_c", "angle_ca_c_n", "angle_c_n_ca"):
            value = getattr(self, name)
            if not (0.0 < value < 180.0):
                raise ValidationError(f"bond angle {name} must lie in (0, 180), got {value!r}")
        if self.omega != 180.0:
            raise ValidationError("only trans peptide bonds (omega = 180) are supported")

    def as_array(self) -> np.ndarray:
        """Packed layout consumed by the compiled kernels."""
        return np.array([
            self.n_ca, self.ca_c, self.c_n, self.n_h, self.ca_ha, self.c_o,
            math.radians(self.angle_n_ca_c), math.radians(self.angle_ca_c_n),
            math.radians(self.angle_c_n_ca), math.radians(self.omega),
        ])


DEFAULT_GEOMETRY = PeptideGeometryParams()


def dihedrals_to_array(dihedrals: Iterable[DihedralPair]) -> np.ndarray:
    rows = [(d.phi, d.psi) for d in dihedrals]
    return np.asarray(rows, dtype=np.float64).reshape(len(rows), 2)


def _coerce_pairs(dihedrals) -> tuple[DihedralPair, ...]:
    out = []
    for d in dihedrals:
        if isinstance(d, DihedralPair):
            out.append(d)
        else:
            phi, psi = d
            out.append(DihedralPair(phi, psi))
    return tuple(out)


@dataclass(frozen=True, eq=False)
class BackboneChain:
    """Cartesian backbone coordinates for consecutive residues.

    Attributes:
        coords: (n, 6, 3) read-only array; atoms ordered as ``ATOM_NAMES``.
        dihedrals: the n - 1 pairs the chain was built from.
        params: geometry used to build it.
        first_residue: residue number of ``coords[0]``. Fragments that do not
            start at residue 1 have an amide H whose position depends on a
            torsion outside the fragment; see ``has_vector``.
    """

    coords: np.ndarray
    dihedrals: tuple[DihedralPair, ...]
    params: PeptideGeometryParams = DEFAULT_GEOMETRY
    first_residue: int = 1

    @property
    def n_residues(self) -> int:
        return self.coords.shape[0]

    @property
    def residue_numbers(self) -> range:
        return range(self.first_residue, self.first_residue + self.n_residues)

    @property
    def residues(self) -> list[dict[str, np.ndarray]]:
        return [self.residue(r) for r in self.residue_numbers]

    def residue(self, number: int) -> dict[str, np.ndarray]:
        """Atom name -> coordinate for residue ``number`` (1-based)."""
        idx = self._offset(number)
        return {name: self.coords[idx, a] for a, name in enumerate(ATOM_NAMES)}

    def _offset(self, number: int) -> int:
        idx = number - self.first_residue
        if not 0 <= idx < self.n_residues:
            raise IndexError(
                f"residue {number} outside chain {self.first_residue}..{self.residue_numbers[-1]}")
        return idx

    def has_vector(self, number: int, vector_type: str) -> bool:
        """Whether the vector is fully determined by this chain's torsions."""
        vector_type = canonical_vector_type(vector_type)
        idx = number - self.first_residue
        if not 0 <= idx < self.n_residues:
            return False
        if vector_type == "CN":
            return idx + 1 < self.n_residues
        if vector_type == "NH" and idx == 0 and self.first_residue != 1:
            return False
        return True

    def transformed(self, rotation: np.ndarray, translation=None) -> "BackboneChain":
        """Copy of the chain under a rigid motion x -> R x + t."""
        rotation = np.asarray(rotation, dtype=float)
        xyz = self.coords @ rotation.T
        if translation is not None:
            xyz = xyz + np.asarray(translation, dtype=float)
        xyz.setflags(write=False)
        return BackboneChain(xyz, self.dihedrals, self.params, self.first_residue)


def canonical_vector_type(vector_type: str) -> str:
    try:
        return _VECTOR_ALIASES[vector_type]
    except KeyError:
        raise ValidationError(f"unknown vector type {vector_type!r}") from None


def build_backbone(dihedrals: Sequence, n_residues: int,
                   params: PeptideGeometryParams = DEFAULT_GEOMETRY,
                   first_residue: int = 1) -> BackboneChain:
    """Build a chain of ``n_residues`` from ``n_residues - 1`` dihedral pairs."""
    pairs = _coerce_pairs(dihedrals)
    if n_residues < 2:
        raise InputShapeError(f"n_residues must be >= 2, got {n_residues}")
    if len(pairs) != n_residues - 1:
        raise InputShapeError(
            f"expected {n_residues - 1} dihedral pairs for {n_residues} residues, got {len(pairs)}")
    xyz = np.empty((n_residues, K.N_ATOMS, 3))
    K.build_chain(dihedrals_to_array(pairs), params.as_array(), xyz)
    xyz.setflags(write=False)
    return BackboneChain(xyz, pairs, params, first_residue)


def append_residue(chain: BackboneChain, dihedral, params: PeptideGeometryParams | None = None
                   ) -> BackboneChain:
    """Return a new chain with one more residue; the input chain is untouched.

    Existing coordinates are copied bitwise; only the previous residue's
    carbonyl O (undefined until now) is filled in.
    """
    if chain.n_residues < 1:
        raise InputShapeError("cannot append to an empty chain")
    params = params or chain.params
    if params != chain.params:
        raise ValidationError("append_residue must use the chain's own geometry")
    (pair,) = _coerce_pairs([dihedral])
    n = chain.n_residues
    xyz = np.empty((n + 1, K.N_ATOMS, 3))
    xyz[:n] = chain.coords
    K.extend(xyz, n, pair.phi, pair.psi, params.as_array())
    xyz.setflags(write=False)
    return BackboneChain(xyz, chain.dihedrals + (pair,), params, chain.first_residue)


def internuclear_unit_vector(chain: BackboneChain, residue_index: int, vector_type: str
                             ) -> np.ndarray:
    """Unit vector from the first to the second atom of ``vector_type``.

    ``NH``: N -> H, ``CAHA``: CA -> HA, ``CAC``: CA -> C' of the residue;
    ``CN``: C' of the residue -> N of the next one.
    """
    vt = canonical_vector_type(vector_type)
    idx = chain._offset(residue_index)
    if vt == "CN" and idx + 1 >= chain.n_residues:
        raise IndexError(f"C'-N vector of residue {residue_index} needs residue {residue_index + 1}")
    out = np.empty(3)
    K._vector(chain.coords, idx, VECTOR_TYPES.index(vt), out)
    return out


def dihedral_angle(p0, p1, p2, p3) -> float:
    """IUPAC dihedral p0-p1-p2-p3 in degrees, in [-180, 180]."""
    b0 = np.asarray(p0) - np.asarray(p1)
    b1 = np.asarray(p2) - np.asarray(p1)
    b2 = np.asarray(p3) - np.asarray(p2)
    b1 = b1 / np.linalg.norm(b1)
    v = b0 - np.dot(b0, b1) * b1
    w = b2 - np.dot(b2, b1) * b1
    x = np.dot(v, w)
    y = np.dot(np.cross(b1, v), w)
    return math.degrees(math.atan2(y, x))


def extract_dihedrals(chain: BackboneChain) -> list[DihedralPair]:
    """Recover the (phi(i+1), psi(i)) pairs of a built chain."""
    xyz = chain.coords
    out = []
    for i in range(chain.n_residues - 1):
        psi = dihedral_angle(xyz[i, K.N], xyz[i, K.CA], xyz[i, K.C], xyz[i + 1, K.N])
        phi = dihedral_angle(xyz[i, K.C], xyz[i + 1, K.N], xyz[i + 1, K.CA], xyz[i + 1, K.C])
        out.append(DihedralPair(phi, psi))
    return out
