"""Estimator-style front end to the folding search."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .exceptions import InputShapeError, ValidationError
from .filters import RamachandranTable
from .geometry import VECTOR_TYPES, internuclear_unit_vector
from .parallel import WorkerPool, WorkerPoolConfig
from .rdc import DEFAULT_VECTOR_PARAMS, RdcRecord, back_calculate, fragment_fitness
from .search import FilterInputs, SearchConfig, fold


class RdcFolder(BaseEstimator):
    """Fold a backbone fragment against RDC records.

    ``fit`` takes a list of ``RdcRecord`` (the records are the data; there is
    no separate target). ``predict`` back-calculates RDCs on the fitted chain.

    Parameters
    ----------
    resolution : float, default=10
    depth : int, default=1000
        Beam width M.
    n_residues : int or None
        Defaults to the highest residue index in the data.
    n_workers : int, default=1
    list_depth : int or None
        Cap on Stage 1 list length (defaults to ``depth``).
    rama_table, couplings :
        Filter inputs; ``None`` means the default table and no couplings.

    Attributes
    ----------
    best_ : BeamEntry
    chain_ : BackboneChain
    score_ : FitnessScore
    report_ : RunReport
    """

    def __init__(self, resolution=10.0, depth=1000, n_residues=None, n_workers=1,
                 list_depth=None, sort_mode="parallel", parallel_merge=False,
                 rama_table=None, couplings=None, vector_params=None):
        self.resolution = resolution
        self.depth = depth
        self.n_residues = n_residues
        self.n_workers = n_workers
        self.list_depth = list_depth
        self.sort_mode = sort_mode
        self.parallel_merge = parallel_merge
        self.rama_table = rama_table
        self.couplings = couplings
        self.vector_params = vector_params

    def _records(self, X) -> list[RdcRecord]:
        X = list(X)
        if not X or not all(isinstance(r, RdcRecord) for r in X):
            raise ValidationError("X must be a non-empty sequence of RdcRecord")
        return X

    def fit(self, X, y=None):
        records = self._records(X)
        n = self.n_residues or max(r.residue_index for r in records)
        config = SearchConfig(R=self.resolution, M=self.depth, N=n, list_depth=self.list_depth)
        filters = FilterInputs(self.rama_table or RamachandranTable.default(),
                               self.couplings or {})
        params = self.vector_params or DEFAULT_VECTOR_PARAMS
        pool_config = WorkerPoolConfig(self.n_workers, self.sort_mode, self.parallel_merge)
        with WorkerPool(pool_config) as pool:
            result = fold(config, records, pool, filters=filters, params=params)
        self.best_ = result.best
        self.chain_ = result.chain
        self.report_ = result.report
        self.beam_ = result.beam
        self.score_ = fragment_fitness(result.chain, records, params)
        return self

    def predict(self, X) -> np.ndarray:
        """Back-calculated RDC for each record, using the fitted tensors."""
        check_is_fitted(self, "chain_")
        records = self._records(X)
        params = self.vector_params or DEFAULT_VECTOR_PARAMS
        out = np.empty(len(records))
        for i, r in enumerate(records):
            if r.vector_type not in VECTOR_TYPES or not self.chain_.has_vector(
                    r.residue_index, r.vector_type):
                raise InputShapeError(f"chain does not define {r.vector_type} of residue "
                                      f"{r.residue_index}")
            if r.medium_id not in self.score_.tensors:
                raise ValidationError(f"no fitted tensor for medium {r.medium_id}")
            v = internuclear_unit_vector(self.chain_, r.residue_index, r.vector_type)
            out[i] = back_calculate(self.score_.tensors[r.medium_id], v, params[r.vector_type])
        return out

    def score(self, X, y=None) -> float:
        """Negative weighted RMSD of the fitted chain (higher is better)."""
        check_is_fitted(self, "chain_")
        params = self.vector_params or DEFAULT_VECTOR_PARAMS
        return -fragment_fitness(self.chain_, self._records(X), params).rmsd
