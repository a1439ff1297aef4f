"""Sequential residue-by-residue folding.

Stage 1 scores every filtered grid point for each neighbouring residue pair
and keeps a sorted list per pair. Stage 2 starts from the first pair's list
and, one residue at a time, crosses the carried beam with the next pair's
list, rescores every combination on the whole fragment and keeps the best M.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from . import _kernels as K
from .beam import Beam, BeamEntry, Crossing, CrossStats
from .exceptions import InsufficientDataError, SearchError, ValidationError
from .filters import (DEFAULT_KARPLUS, KarplusCoefficients, RamachandranTable,
                      ScalarCouplingRecord, filter_grid)
from .geometry import (DEFAULT_GEOMETRY, BackboneChain, DihedralPair, PeptideGeometryParams,
                       build_backbone, dihedrals_to_array)
from .instrumentation import (HEAD, IoTally, SectionLabel, TimingLog, aggregate_report, clock,
                              cpu_times)
from .parallel import EvaluationTask, WorkerPool, legacy_scratches
from .rdc import DEFAULT_VECTOR_PARAMS, RdcRecord, VectorTypeParams, compile_records


@dataclass(frozen=True)
class SearchConfig:
    """Angle resolution R (degrees), search depth M and residue count N.

    ``sequence`` gives the Ramachandran class of each residue (default all
    ``"general"``); ``list_depth`` caps Stage 1 lists (default M).
    """

    R: float = 10.0
    M: int = 1000
    N: int = 2
    sequence: tuple[str, ...] | None = None
    list_depth: int | None = None

    def __post_init__(self):
        if not (0 < self.R <= 360):
            raise ValidationError(f"resolution must lie in (0, 360], got {self.R}")
        if self.M < 1:
            raise ValidationError(f"search depth M must be >= 1, got {self.M}")
        if self.N < 2:
            raise ValidationError(f"residue count N must be >= 2, got {self.N}")
        if self.list_depth is not None and self.list_depth < 1:
            raise ValidationError("list_depth must be >= 1")
        if self.sequence is not None:
            object.__setattr__(self, "sequence", tuple(self.sequence))
            if len(self.sequence) != self.N:
                raise ValidationError(
                    f"sequence has {len(self.sequence)} classes for {self.N} residues")
        if not math.isclose(360.0 / self.R, round(360.0 / self.R)):
            warnings.warn(f"resolution {self.R} does not divide 360", stacklevel=3)

    def residue_class(self, residue: int) -> str:
        return "general" if self.sequence is None else self.sequence[residue - 1]

    @property
    def stage1_depth(self) -> int:
        return self.M if self.list_depth is None else self.list_depth


@dataclass(frozen=True)
class AngleCandidateList:
    """Sorted Stage 1 candidates for the pair joining residues i and i + 1."""

    pair_index: int
    entries: tuple[tuple[DihedralPair, float], ...]
    resolution: float = 10.0
    fallback: bool = False

    def __len__(self):
        return len(self.entries)

    def __iter__(self) -> Iterator[tuple[DihedralPair, float]]:
        return iter(self.entries)

    def angles(self) -> np.ndarray:
        return dihedrals_to_array(d for d, _ in self.entries)

    def scores(self) -> np.ndarray:
        return np.array([s for _, s in self.entries], dtype=float)

    def truncated(self, m: int) -> "AngleCandidateList":
        return AngleCandidateList(self.pair_index, self.entries[:m], self.resolution,
                                  self.fallback)


@dataclass(frozen=True)
class SearchSpaceEstimate:
    c: int
    log10: float

    def __int__(self):
        return self.c


@dataclass(frozen=True)
class FilterInputs:
    table: RamachandranTable = field(default_factory=RamachandranTable.default)
    couplings: Mapping[int, ScalarCouplingRecord] = field(default_factory=dict)
    karplus: KarplusCoefficients = DEFAULT_KARPLUS


def axis_values(R: float) -> list[float]:
    n = int(math.floor(360.0 / R + 1e-9))
    values = [-180.0 + k * R for k in range(n)]
    return [v for v in values if v < 180.0]


def generate_dihedral_grid(R: float) -> list[DihedralPair]:
    """All (phi, psi) on an R-degree lattice from -180, phi-major."""
    if not (0 < R <= 360):
        raise ValidationError(f"resolution must lie in (0, 360], got {R}")
    axis = axis_values(R)
    return [DihedralPair(phi, psi) for phi in axis for psi in axis]


def total_search_space(R: float, N: int) -> SearchSpaceEstimate:
    """Exact number of grid conformations, (360/R)^(2(N-1))."""
    if not (0 < R <= 360) or N < 2:
        raise ValidationError("need 0 < R <= 360 and N >= 2")
    per_axis = len(axis_values(R))
    exponent = 2 * (N - 1)
    return SearchSpaceEstimate(per_axis ** exponent, exponent * math.log10(per_axis))


def bounded_evaluations(N: int, M: int) -> int:
    """Upper bound (N-1) M^2 on fitness evaluations with search depth M."""
    if N < 2 or M < 1:
        raise ValidationError("need N >= 2 and M >= 1")
    return (N - 1) * M * M


def _empty_prefix() -> np.ndarray:
    return np.empty((1, 0, 2))


def score_pair_candidates(candidates: np.ndarray, data: Sequence[RdcRecord], first_residue: int,
                          params: VectorTypeParams = DEFAULT_VECTOR_PARAMS,
                          geometry: PeptideGeometryParams = DEFAULT_GEOMETRY) -> np.ndarray:
    """Fitness of each (phi, psi) row as the 2-residue fragment at ``first_residue``."""
    compiled = compile_records(data, first_residue, 2, params)
    out = np.empty(len(candidates))
    K.score_combinations(_empty_prefix(), np.ascontiguousarray(candidates, dtype=float), 0,
                         len(candidates), geometry.as_array(), *compiled.kernel_args(), out)
    return out


def stage1_pair(pair_index: int, config: SearchConfig, data: Sequence[RdcRecord],
                filters: FilterInputs | None = None,
                params: VectorTypeParams = DEFAULT_VECTOR_PARAMS,
                geometry: PeptideGeometryParams = DEFAULT_GEOMETRY,
                grid: Sequence[DihedralPair] | None = None) -> AngleCandidateList:
    filters = filters or FilterInputs()
    grid = grid if grid is not None else generate_dihedral_grid(config.R)
    # the pair's phi belongs to residue i + 1
    residue = pair_index + 1
    kept = filter_grid(grid, config.residue_class(residue), filters.table,
                       filters.couplings.get(residue), filters.karplus)
    if not kept:
        warnings.warn(f"pair {pair_index}: filters removed every grid point; "
                      "keeping the unfiltered grid", stacklevel=2)
        kept = list(grid)
    angles = dihedrals_to_array(kept)
    try:
        scores = score_pair_candidates(angles, data, pair_index, params, geometry)
        fallback = False
    except InsufficientDataError:
        # filter order, score 0
        entries = tuple((d, 0.0) for d in kept[:config.stage1_depth])
        return AngleCandidateList(pair_index, entries, config.R, fallback=True)
    s, ix = K.sort_block(scores, np.arange(len(kept), dtype=np.int64), _empty_prefix(), angles)
    entries = tuple((kept[i], float(v)) for v, i in zip(s[:config.stage1_depth],
                                                         ix[:config.stage1_depth]))
    return AngleCandidateList(pair_index, entries, config.R, fallback)


def stage1(config: SearchConfig, data: Sequence[RdcRecord], filters: FilterInputs | None = None,
           params: VectorTypeParams = DEFAULT_VECTOR_PARAMS,
           geometry: PeptideGeometryParams = DEFAULT_GEOMETRY,
           out_dir=None) -> list[AngleCandidateList]:
    """One sorted, truncated candidate list per neighbouring residue pair.

    Lists are written to ``out_dir`` as ``pair_XXX.txt`` when given.
    """
    grid = generate_dihedral_grid(config.R)
    lists = [stage1_pair(p, config, data, filters, params, geometry, grid)
             for p in range(1, config.N)]
    if out_dir is not None:
        from .formats import write_angle_list
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for lst in lists:
            write_angle_list(out / angle_list_name(lst.pair_index), lst)
    return lists


def angle_list_name(pair_index: int) -> str:
    return f"pair_{pair_index:03d}.txt"


def initial_beam(first: AngleCandidateList, M: int) -> Beam:
    first = first.truncated(M)
    return Beam(first.angles()[:, None, :], first.scores())


def cross_lists(beam, candidates) -> Crossing:
    """Every beam entry extended by every candidate pair (i-major, j-minor)."""
    if isinstance(beam, Beam):
        prefix = beam.angles
    else:
        prefix = Beam.from_entries(list(beam)).angles
    if isinstance(candidates, AngleCandidateList):
        cand = candidates.angles()
    else:
        cand = np.asarray(candidates, dtype=float).reshape(-1, 2)
    if len(prefix) == 0 or len(cand) == 0:
        raise ValidationError("cannot cross empty lists")
    return Crossing(prefix, cand)


@dataclass
class FoldContext:
    """Run-wide state the orchestrator threads through iterations."""

    data: Sequence[RdcRecord]
    params: VectorTypeParams = DEFAULT_VECTOR_PARAMS
    geometry: PeptideGeometryParams = DEFAULT_GEOMETRY
    log: TimingLog = field(default_factory=TimingLog)
    legacy_dir: Path | None = None
    legacy: bool = False
    tally: IoTally = field(default_factory=IoTally)
    evaluations: int = 0
    cross_stats: list[CrossStats] = field(default_factory=list)


def stage2_iteration(beam: Beam, candidates: AngleCandidateList, ctx: FoldContext,
                     engine: WorkerPool, M: int, iteration: int = 0) -> Beam:
    """Cross, score on the whole fragment, sort by the total order, keep the top M."""
    log = ctx.log
    t0 = clock()
    beam = beam.truncated(M)
    candidates = candidates.truncated(M)
    t1 = clock()
    log.record_section(SectionLabel.FORMATTED, HEAD, t0, t1, iteration)
    crossing = cross_lists(beam, candidates)
    n_res = beam.n_pairs + 2
    try:
        compiled = compile_records(ctx.data, 1, n_res, ctx.params)
    except InsufficientDataError as exc:
        raise SearchError(f"iteration {iteration} (residues 1..{n_res}): {exc}",
                          iteration) from exc
    legacy = None
    if ctx.legacy:
        legacy = legacy_scratches(ctx.legacy_dir, engine.np, compiled, ctx.geometry, ctx.tally,
                                  label=f"it{iteration}_")
    task = EvaluationTask(crossing, compiled, ctx.geometry.as_array(), legacy)
    log.record_section(SectionLabel.CROSSED_READ, HEAD, t1, clock(), iteration)
    merged = engine.evaluate_and_sort(task, iteration, log, keep=M)
    ctx.evaluations += len(crossing)
    ctx.cross_stats.append(crossing.stats)
    return merged.to_beam()


@dataclass
class FoldResult:
    best: BeamEntry
    chain: BackboneChain
    report: object
    beam: Beam
    lists: list[AngleCandidateList]

    def __iter__(self):
        return iter((self.best, self.chain, self.report))


def fold(config: SearchConfig, data: Sequence[RdcRecord], engine: WorkerPool | None = None, *,
         lists: Sequence[AngleCandidateList] | None = None,
         filters: FilterInputs | None = None,
         params: VectorTypeParams = DEFAULT_VECTOR_PARAMS,
         geometry: PeptideGeometryParams = DEFAULT_GEOMETRY,
         legacy_io: bool = False, scratch_dir=None, checkpoint_dir=None,
         list_dir=None) -> FoldResult:
    """Run Stage 1 (unless ``lists`` are given) and Stage 2; return the best entry.

    The result unpacks as ``best, chain, report``.

    Raises:
        SearchError: an iteration failed; ``iteration`` names it.
    """
    own_engine = engine is None
    engine = engine or WorkerPool(1)
    user0, sys0 = cpu_times()
    t_start = clock()
    ctx = FoldContext(data, params, geometry, legacy=legacy_io,
                      legacy_dir=Path(scratch_dir) if scratch_dir is not None else None)
    stage1_evals = 0
    if lists is None:
        grid_size = len(generate_dihedral_grid(config.R))
        lists = stage1(config, data, filters, params, geometry, out_dir=list_dir)
        stage1_evals = grid_size * (config.N - 1)
    lists = list(lists)
    if len(lists) != config.N - 1:
        raise ValidationError(f"need {config.N - 1} angle lists, got {len(lists)}")
    t_stage1 = clock()
    stats0 = (engine.stats.messages, engine.stats.bytes_scattered, engine.stats.bytes_gathered)
    beam = initial_beam(lists[0], config.M)
    if checkpoint_dir is not None:
        from .formats import write_beam
        Path(checkpoint_dir).mkdir(parents=True, exist_ok=True)
    try:
        engine.start()
        for pair in range(2, config.N):
            iteration = pair + 1  # residue being added
            t_it = clock()
            try:
                beam = stage2_iteration(beam, lists[pair - 1], ctx, engine, config.M, iteration)
            except SearchError:
                raise
            except Exception as exc:
                raise SearchError(f"iteration {iteration}: {exc}", iteration) from exc
            ctx.log.record_iteration(iteration, t_it, clock())
            if checkpoint_dir is not None:
                write_beam(Path(checkpoint_dir) / f"beam_{iteration:03d}.txt", beam)
    finally:
        if own_engine:
            engine.close()
    best = beam[0]
    chain = build_backbone(best.dihedrals, config.N, geometry)
    user1, sys1 = cpu_times()
    report = aggregate_report(
        ctx.log, allow_empty=True,
        total_wall=clock() - t_start, stage1_wall=t_stage1 - t_start,
        evaluations=ctx.evaluations, stage1_evaluations=stage1_evals,
        cross_stats=[s.as_dict() for s in ctx.cross_stats],
        np=engine.np, M=config.M, N=config.N,
        messages=engine.stats.messages - stats0[0],
        bytes_scattered=engine.stats.bytes_scattered - stats0[1],
        bytes_gathered=engine.stats.bytes_gathered - stats0[2],
        io_reads=ctx.tally.reads, io_writes=ctx.tally.writes,
        cpu_user=user1 - user0, cpu_system=sys1 - sys0,
    )
    return FoldResult(best, chain, report, beam, lists)
