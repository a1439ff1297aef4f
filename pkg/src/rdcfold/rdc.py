"""Order-tensor fitting and RDC fitness scoring, all in memory.

The forward model for one internuclear unit vector ``v`` in one alignment
medium is ``D = Dmax * v^T S v`` with ``S`` symmetric and traceless. Writing
``S`` through its five free elements turns every measurement into one row of a
linear system that is solved per medium by a thresholded SVD.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import _kernels as K
from .exceptions import InputShapeError, InsufficientDataError, ValidationError
from .geometry import VECTOR_TYPES, BackboneChain, canonical_vector_type

MIN_RECORDS = 5
SV_THRESHOLD = K.SV_THRESHOLD
WORST_SCORE = K.WORST_SCORE

DEFAULT_DMAX = {"NH": 21700.0, "CAHA": -60400.0, "CN": 2610.0, "CAC": 4290.0}


@dataclass(frozen=True)
class RdcRecord:
    residue_index: int
    vector_type: str
    medium_id: int
    value: float
    error: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "vector_type", canonical_vector_type(self.vector_type))
        if not math.isfinite(self.value):
            raise ValidationError(f"RDC value must be finite, got {self.value!r}")
        if not (math.isfinite(self.error) and self.error > 0):
            raise ValidationError(f"RDC error must be > 0, got {self.error!r}")


@dataclass(frozen=True)
class VectorTypeParams:
    """Maximal dipolar coupling (Hz) per vector type."""

    dmax: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_DMAX))

    def __post_init__(self):
        clean = {}
        for key, value in self.dmax.items():
            value = float(value)
            if not math.isfinite(value) or value == 0.0:
                raise ValidationError(f"Dmax for {key} must be finite and nonzero")
            clean[canonical_vector_type(key)] = value
        object.__setattr__(self, "dmax", clean)

    def __getitem__(self, vector_type: str) -> float:
        return self.dmax[canonical_vector_type(vector_type)]


DEFAULT_VECTOR_PARAMS = VectorTypeParams()


@dataclass(frozen=True, eq=False)
class OrderTensor:
    """Saupe order tensor stored as (Sxx, Syy, Sxy, Sxz, Syz)."""

    s: np.ndarray
    rank: int = 5

    def __post_init__(self):
        s = np.array(self.s, dtype=float).reshape(5)
        s.setflags(write=False)
        object.__setattr__(self, "s", s)

    @property
    def rank_deficient(self) -> bool:
        return self.rank < 5

    def matrix(self) -> np.ndarray:
        sxx, syy, sxy, sxz, syz = self.s
        return np.array([[sxx, sxy, sxz], [sxy, syy, syz], [sxz, syz, -(sxx + syy)]])

    @classmethod
    def from_matrix(cls, m) -> "OrderTensor":
        m = np.asarray(m, dtype=float)
        return cls(np.array([m[0, 0], m[1, 1], m[0, 1], m[0, 2], m[1, 2]]))


@dataclass(frozen=True, eq=False)
class FitnessScore:
    """Weighted RMSD (Hz, lower is better) plus per-medium detail."""

    rmsd: float
    residuals: Mapping[int, np.ndarray] = field(default_factory=dict)
    tensors: Mapping[int, OrderTensor] = field(default_factory=dict)

    def __post_init__(self):
        if not math.isfinite(self.rmsd):
            object.__setattr__(self, "rmsd", WORST_SCORE)


def _check_unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    if abs(np.linalg.norm(v) - 1.0) > 1e-9:
        raise ValidationError(f"vector is not unit length: |v| = {np.linalg.norm(v)!r}")
    return v


def saupe_row(v) -> np.ndarray:
    """Row r(v) with r . s = v^T S v under the traceless constraint."""
    v = _check_unit(v)
    row = np.empty(5)
    K.saupe_row_into(v, 1.0, row)
    return row


def back_calculate(t: OrderTensor, v, dmax: float) -> float:
    return float(dmax * (saupe_row(v) @ t.s))


def fit_order_tensor(vectors, rdcs, dmax_list) -> tuple[OrderTensor, float]:
    """Least-squares order tensor for one medium.

    Returns the tensor (``rank`` < 5 flags a rank-deficient design, solved in
    the minimum-norm sense) and the RMSD of back-calculated vs measured RDCs.
    """
    vectors = np.asarray(vectors, dtype=float)
    rdcs = np.asarray(rdcs, dtype=float).ravel()
    dmax = np.broadcast_to(np.asarray(dmax_list, dtype=float), rdcs.shape)
    if vectors.ndim != 2 or vectors.shape[1] != 3 or len(vectors) != len(rdcs):
        raise InputShapeError("vectors must be (n, 3) and match the number of RDCs")
    if len(rdcs) < MIN_RECORDS:
        raise InsufficientDataError(
            f"{len(rdcs)} RDCs cannot determine 5 order-tensor parameters")
    for v in vectors:
        _check_unit(v)
    m = len(rdcs)
    A = np.empty((m, 5))
    for i in range(m):
        K.saupe_row_into(vectors[i], dmax[i], A[i])
    design = A.copy()
    s = np.empty(5)
    rank = K.lstsq_svd(A, rdcs.copy(), m, s, np.empty((5, 5)), np.empty((5, 5)), np.empty(5))
    resid = design @ s - rdcs
    return OrderTensor(s, int(rank)), float(math.sqrt(np.mean(resid * resid)))


@dataclass(frozen=True, eq=False)
class CompiledRecords:
    """RDC records flattened into the arrays the fitness kernel consumes.

    Only records whose vector is determined by a fragment starting at
    ``first_residue`` with ``n_residues`` residues are kept, sorted by
    (medium, residue, vector type) so that scores do not depend on input order.
    """

    res: np.ndarray
    vtype: np.ndarray
    value: np.ndarray
    weight: np.ndarray
    dmax: np.ndarray
    med_ptr: np.ndarray
    media: tuple[int, ...]
    records: tuple[RdcRecord, ...]
    first_residue: int
    n_residues: int

    def kernel_args(self):
        return (self.res, self.vtype, self.value, self.weight, self.dmax, self.med_ptr)

    @property
    def n_records(self) -> int:
        return len(self.records)


def usable(record: RdcRecord, first_residue: int, n_residues: int) -> bool:
    idx = record.residue_index - first_residue
    if not 0 <= idx < n_residues:
        return False
    if record.vector_type == "CN":
        return idx + 1 < n_residues
    if record.vector_type == "NH" and idx == 0 and first_residue != 1:
        return False
    return True


def compile_records(data: Iterable[RdcRecord], first_residue: int, n_residues: int,
                    params: VectorTypeParams = DEFAULT_VECTOR_PARAMS) -> CompiledRecords:
    data = list(data)
    media = sorted({r.medium_id for r in data})
    if not media:
        raise InsufficientDataError("no RDC records")
    kept = [r for r in data if usable(r, first_residue, n_residues)]
    kept.sort(key=lambda r: (r.medium_id, r.residue_index, VECTOR_TYPES.index(r.vector_type),
                             r.value, r.error))
    last = first_residue + n_residues - 1
    ptr = [0]
    for medium in media:
        count = sum(1 for r in kept if r.medium_id == medium)
        if count < MIN_RECORDS:
            raise InsufficientDataError(
                f"medium {medium}: {count} usable RDCs for residues {first_residue}..{last}, "
                f"need {MIN_RECORDS}", residue=last, medium=medium)
        ptr.append(ptr[-1] + count)
    return CompiledRecords(
        res=np.array([r.residue_index - first_residue for r in kept], dtype=np.int64),
        vtype=np.array([VECTOR_TYPES.index(r.vector_type) for r in kept], dtype=np.int64),
        value=np.array([r.value for r in kept], dtype=np.float64),
        weight=np.array([1.0 / (r.error * r.error) for r in kept], dtype=np.float64),
        dmax=np.array([params[r.vector_type] for r in kept], dtype=np.float64),
        med_ptr=np.array(ptr, dtype=np.int64),
        media=tuple(media),
        records=tuple(kept),
        first_residue=first_residue,
        n_residues=n_residues,
    )


def score_compiled(coords: np.ndarray, compiled: CompiledRecords) -> FitnessScore:
    """Fitness of explicit coordinates against already compiled records."""
    n_media = len(compiled.media)
    rows = int(np.max(np.diff(compiled.med_ptr)))
    tensors = np.empty((n_media, 5))
    resid = np.empty(compiled.n_records)
    ranks = np.empty(n_media, dtype=np.int64)
    rmsd = K.fit_media(np.array(coords, dtype=np.float64), *compiled.kernel_args(), tensors,
                       resid, ranks, np.empty((rows, 5)), np.empty(rows), np.empty((5, 5)),
                       np.empty((5, 5)), np.empty(5), np.empty((rows, 3)))
    ptr = compiled.med_ptr
    return FitnessScore(
        rmsd=float(rmsd),
        residuals={m: resid[ptr[i]:ptr[i + 1]].copy() for i, m in enumerate(compiled.media)},
        tensors={m: OrderTensor(tensors[i], int(ranks[i])) for i, m in enumerate(compiled.media)},
    )


def fragment_fitness(chain: BackboneChain, data: Sequence[RdcRecord],
                     params: VectorTypeParams = DEFAULT_VECTOR_PARAMS) -> FitnessScore:
    """Fit one tensor per medium to the chain and return the weighted RMSD.

    Raises:
        InsufficientDataError: a medium has fewer than 5 records whose vectors
            the chain determines.
    """
    compiled = compile_records(data, chain.first_residue, chain.n_residues, params)
    return score_compiled(chain.coords, compiled)


class OrderTensorRegressor(RegressorMixin, BaseEstimator):
    """Estimator wrapper: fit a Saupe tensor to unit vectors, predict RDCs.

    Parameters
    ----------
    dmax : float, default=1.0
        Dipolar coupling constant applied to every sample unless a per-sample
        array is passed to ``fit``/``predict``.

    Attributes
    ----------
    tensor_ : OrderTensor
    rank_ : int
    rmsd_ : float
    """

    def __init__(self, dmax=1.0):
        self.dmax = dmax

    def fit(self, X, y, dmax=None):
        X, y = check_X_y(X, y, y_numeric=True)
        if X.shape[1] != 3:
            raise InputShapeError(f"X must have 3 columns (unit vectors), got {X.shape[1]}")
        dmax = self.dmax if dmax is None else dmax
        self.tensor_, self.rmsd_ = fit_order_tensor(X, y, dmax)
        self.rank_ = self.tensor_.rank
        self.n_features_in_ = 3
        return self

    def predict(self, X, dmax=None):
        check_is_fitted(self, "tensor_")
        X = check_array(X)
        if X.shape[1] != 3:
            raise InputShapeError(f"X must have 3 columns (unit vectors), got {X.shape[1]}")
        dmax = np.broadcast_to(np.asarray(self.dmax if dmax is None else dmax, float), len(X))
        return np.array([back_calculate(self.tensor_, v, d) for v, d in zip(X, dmax)])
