"""Synthetic RDC data sets with known ground truth."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .filters import (DEFAULT_KARPLUS, KarplusCoefficients, RamachandranTable,
                      ScalarCouplingRecord, filter_grid, karplus_coupling, ramachandran_pass)
from .geometry import (VECTOR_TYPES, BackboneChain, DihedralPair, build_backbone,
                       internuclear_unit_vector)
from .rdc import DEFAULT_VECTOR_PARAMS, OrderTensor, RdcRecord, VectorTypeParams, back_calculate

SZZ_RANGE = (2e-4, 1e-3)
MAX_RHOMBICITY = 2.0 / 3.0


@dataclass
class SyntheticTruth:
    dihedrals: list[DihedralPair]
    tensors: dict[int, OrderTensor]
    noise: float
    records: list[RdcRecord]
    chain: BackboneChain
    couplings: list[ScalarCouplingRecord] = field(default_factory=list)
    seed: int = 0
    paths: dict[str, Path] = field(default_factory=dict)

    @property
    def n_residues(self) -> int:
        return self.chain.n_residues


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed proper rotation via QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_tensor(rng: np.random.Generator) -> OrderTensor:
    """Traceless tensor with |Szz| in SZZ_RANGE and rhombicity <= 2/3, randomly oriented."""
    szz = rng.uniform(*SZZ_RANGE) * rng.choice([-1.0, 1.0])
    eta = rng.uniform(0.0, MAX_RHOMBICITY)
    principal = np.diag([-0.5 * szz * (1 - eta), -0.5 * szz * (1 + eta), szz])
    q = random_rotation(rng)
    return OrderTensor.from_matrix(q @ principal @ q.T)


def random_dihedrals(rng: np.random.Generator, n_pairs: int, R_grid: float | None,
                     sequence=None, table: RamachandranTable | None = None
                     ) -> list[DihedralPair]:
    """Draw pairs that pass the Ramachandran filter for residue k + 1's class."""
    from .search import generate_dihedral_grid

    table = table or RamachandranTable.default()
    grid = generate_dihedral_grid(R_grid) if R_grid is not None else None
    out = []
    for k in range(1, n_pairs + 1):
        cls = "general" if sequence is None else sequence[k]
        if grid is not None:
            allowed = filter_grid(grid, cls, table)
            out.append(allowed[int(rng.integers(len(allowed)))])
            continue
        while True:
            d = DihedralPair(*rng.uniform(-180.0, 180.0, size=2))
            if ramachandran_pass(d, cls, table):
                out.append(d)
                break
    return out


def synthesize_dataset(n_residues: int, R_grid: float | None = 10.0, media: int = 2,
                       noise: float = 0.0, seed: int = 0, out_dir=None, *,
                       couplings: bool = False, sequence=None,
                       params: VectorTypeParams = DEFAULT_VECTOR_PARAMS,
                       karplus: KarplusCoefficients = DEFAULT_KARPLUS) -> SyntheticTruth:
    """Random fragment, tensors and RDCs for every defined vector of every residue.

    With ``out_dir`` the RDC file, truth file and (optionally) a scalar
    coupling file are written; output is byte-identical for a fixed seed.
    """
    if n_residues < 2:
        raise ValidationError(f"n_residues must be >= 2, got {n_residues}")
    if media < 1:
        raise ValidationError(f"media must be >= 1, got {media}")
    if not noise >= 0:
        raise ValidationError(f"noise must be >= 0, got {noise}")
    rng = np.random.default_rng(seed)
    dihedrals = random_dihedrals(rng, n_residues - 1, R_grid, sequence)
    chain = build_backbone(dihedrals, n_residues)
    tensors = {m: random_tensor(rng) for m in range(1, media + 1)}
    records = []
    for m, tensor in tensors.items():
        for res in chain.residue_numbers:
            for vt in VECTOR_TYPES:
                if not chain.has_vector(res, vt):
                    continue
                v = internuclear_unit_vector(chain, res, vt)
                value = back_calculate(tensor, v, params[vt])
                if noise > 0:
                    value += rng.normal(0.0, noise)
                records.append(RdcRecord(res, vt, m, float(value), noise if noise > 0 else 1.0))
    jrecs = []
    if couplings:
        for res in range(2, n_residues + 1):
            j = karplus_coupling(dihedrals[res - 2].phi, karplus)
            jrecs.append(ScalarCouplingRecord(res, j, 1.0))
    truth = SyntheticTruth(dihedrals, tensors, noise, records, chain, jrecs, seed)
    if out_dir is not None:
        from .formats import write_coupling_file, write_rdc_file, write_truth

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        truth.paths["rdc"] = out / "rdc.txt"
        truth.paths["truth"] = out / "truth.txt"
        write_rdc_file(truth.paths["rdc"], records)
        write_truth(truth.paths["truth"], dihedrals, {m: t.s for m, t in tensors.items()},
                    noise, seed)
        if couplings:
            truth.paths["couplings"] = out / "couplings.txt"
            write_coupling_file(truth.paths["couplings"], jrecs)
    return truth
