"""Barrier-section timing, report aggregation and the file-mediated fitness mode.

Each Stage 2 iteration is split into six sections separated by barriers. A
section's cost for one iteration is the maximum over workers (a barrier waits
for the slowest), and the reported cost is the mean of those maxima over
iterations.
"""

from __future__ import annotations

import csv
import io
import json
import resource
import threading
import time
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from . import _kernels as K
from .exceptions import RdcFoldError, ValidationError
from .geometry import BackboneChain, PeptideGeometryParams
from .rdc import (DEFAULT_VECTOR_PARAMS, CompiledRecords, FitnessScore, RdcRecord,
                  VectorTypeParams, compile_records)

clock = time.perf_counter


class SectionLabel(str, Enum):
    FORMATTED = "Formatted"
    CROSSED_READ = "CrossedRead"
    SCATTERED = "Scattered"
    CALCULATED = "Calculated"
    GATHERED = "Gathered"
    SORTED = "Sorted"


SECTIONS = tuple(SectionLabel)
HEAD = 0


class SectionTiming(NamedTuple):
    iteration: int
    worker: int
    label: SectionLabel
    duration: float


class TimingLog:
    """Append-only list of section timings; one per worker, merged at barriers.

    Records are kept as plain tuples so that recording stays well under a
    microsecond; ``entries`` exposes them as ``SectionTiming``.
    """

    def __init__(self, entries: Iterable[SectionTiming] = ()):
        self._raw: list[tuple] = [tuple(e) for e in entries]
        self.iteration_walls: dict[int, float] = {}

    def record_section(self, label, worker: int, start: float, end: float,
                       iteration: int = 0) -> None:
        if end < start:
            raise ValidationError(f"section end {end} precedes start {start}")
        if label.__class__ is not SectionLabel:
            label = SectionLabel(label)
        self._raw.append((iteration, worker, label, end - start))

    def record_iteration(self, iteration: int, start: float, end: float) -> None:
        self.iteration_walls[iteration] = end - start

    @property
    def entries(self) -> list[SectionTiming]:
        return [SectionTiming._make(r) for r in self._raw]

    def extend(self, other: "TimingLog | Iterable[SectionTiming]") -> None:
        self._raw.extend(other._raw if isinstance(other, TimingLog) else map(tuple, other))

    def __len__(self):
        return len(self._raw)


def record_section(log: TimingLog, label, worker: int, start: float, end: float,
                   iteration: int = 0) -> None:
    log.record_section(label, worker, start, end, iteration)


@dataclass
class RunReport:
    """Aggregated timings of one fold run.

    ``sections[label][i]`` is the max-over-workers time of iteration
    ``iterations[i]``; ``means[label]`` averages those over iterations.
    """

    iterations: list[int]
    sections: dict[str, list[float]]
    means: dict[str, float]
    iteration_totals: list[float] = field(default_factory=list)
    total_wall: float = 0.0
    stage1_wall: float = 0.0
    evaluations: int = 0
    stage1_evaluations: int = 0
    cross_stats: list[dict] = field(default_factory=list)
    np: int = 1
    M: int = 0
    N: int = 0
    messages: int = 0
    bytes_scattered: int = 0
    bytes_gathered: int = 0
    io_reads: int = 0
    io_writes: int = 0
    cpu_user: float | None = None
    cpu_system: float | None = None

    @property
    def mean_iteration_total(self) -> float:
        return float(np.mean(self.iteration_totals)) if self.iteration_totals else 0.0

    def share(self, label) -> float:
        """Mean section time as a fraction of the mean iteration wall time."""
        total = self.mean_iteration_total
        return self.means[SectionLabel(label).value] / total if total > 0 else 0.0

    def to_dict(self) -> dict:
        return {
            "np": self.np, "M": self.M, "N": self.N,
            "iterations": list(self.iterations),
            "sections": {label: {str(it): v for it, v in zip(self.iterations, values)}
                         for label, values in self.sections.items()},
            "means": dict(self.means),
            "totals": {
                "wall": self.total_wall,
                "stage1_wall": self.stage1_wall,
                "iterations": {str(it): v for it, v in zip(self.iterations, self.iteration_totals)},
                "evaluations": self.evaluations,
                "stage1_evaluations": self.stage1_evaluations,
                "messages": self.messages,
                "bytes_scattered": self.bytes_scattered,
                "bytes_gathered": self.bytes_gathered,
                "io_reads": self.io_reads,
                "io_writes": self.io_writes,
                "cpu_user": self.cpu_user,
                "cpu_system": self.cpu_system,
            },
            "cross_stats": list(self.cross_stats),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunReport":
        iterations = [int(i) for i in d["iterations"]]
        totals = d["totals"]
        return cls(
            iterations=iterations,
            sections={label: [float(v[str(i)]) for i in iterations]
                      for label, v in d["sections"].items()},
            means={k: float(v) for k, v in d["means"].items()},
            iteration_totals=[float(totals["iterations"][str(i)]) for i in iterations],
            total_wall=float(totals["wall"]),
            stage1_wall=float(totals["stage1_wall"]),
            evaluations=int(totals["evaluations"]),
            stage1_evaluations=int(totals["stage1_evaluations"]),
            cross_stats=list(d.get("cross_stats", [])),
            np=int(d["np"]), M=int(d["M"]), N=int(d["N"]),
            messages=int(totals["messages"]),
            bytes_scattered=int(totals["bytes_scattered"]),
            bytes_gathered=int(totals["bytes_gathered"]),
            io_reads=int(totals["io_reads"]),
            io_writes=int(totals["io_writes"]),
            cpu_user=totals.get("cpu_user"),
            cpu_system=totals.get("cpu_system"),
        )

    @classmethod
    def from_json(cls, path) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        labels = [s.value for s in SECTIONS]
        writer.writerow(["iteration", *labels, "total"])
        for i, it in enumerate(self.iterations):
            total = self.iteration_totals[i] if i < len(self.iteration_totals) else ""
            writer.writerow([it, *(repr(self.sections[l][i]) for l in labels), repr(total)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def table(self) -> str:
        lines = [f"np={self.np} M={self.M} N={self.N} iterations={len(self.iterations)}",
                 f"{'section':<12} {'mean (s)':>12} {'share':>8}"]
        for label in SECTIONS:
            mean = self.means.get(label.value, 0.0)
            lines.append(f"{label.value:<12} {mean:>12.6f} {self.share(label):>8.1%}")
        lines.append(f"{'iteration':<12} {self.mean_iteration_total:>12.6f}")
        lines.append(f"total wall {self.total_wall:.3f} s (stage 1 {self.stage1_wall:.3f} s), "
                     f"{self.evaluations} stage-2 evaluations")
        return "\n".join(lines)


def aggregate_report(log: TimingLog, *, allow_empty: bool = False, **meta) -> RunReport:
    """Max over workers per (label, iteration), then mean over iterations.

    Several records from the same worker, label and iteration are summed
    first. A label absent from an iteration counts as 0 and triggers a warning.
    """
    entries = log.entries
    if not entries and not allow_empty:
        raise ValidationError("cannot aggregate an empty timing log")
    per: dict[tuple[str, int, int], float] = {}
    for e in entries:
        key = (e.label.value, e.iteration, e.worker)
        per[key] = per.get(key, 0.0) + e.duration
    iterations = sorted({e.iteration for e in entries} | set(log.iteration_walls))
    sections: dict[str, list[float]] = {}
    missing = []
    for label in SECTIONS:
        values = []
        for it in iterations:
            durations = [v for (l, i, _), v in per.items() if l == label.value and i == it]
            if not durations:
                missing.append((label.value, it))
                values.append(0.0)
            else:
                values.append(max(durations))
        sections[label.value] = values
    if missing:
        warnings.warn(f"sections missing from the timing log (counted as 0): {missing}",
                      stacklevel=2)
    means = {label: (float(np.mean(v)) if v else 0.0) for label, v in sections.items()}
    totals = [log.iteration_walls.get(it, sum(sections[l][i] for l in sections))
              for i, it in enumerate(iterations)]
    return RunReport(iterations=iterations, sections=sections, means=means,
                     iteration_totals=totals, **meta)


def cpu_times() -> tuple[float, float]:
    """(user, system) CPU seconds of this process."""
    usage = resource.getrusage(resource.RUSAGE_SELF)
    return usage.ru_utime, usage.ru_stime


@dataclass(frozen=True)
class SpeedupModel:
    """t(np) = sr / np + op."""

    sr: float
    op: float
    residual: float = 0.0

    def predict(self, np_workers) -> np.ndarray:
        return self.sr / np.asarray(np_workers, dtype=float) + self.op

    @property
    def overhead_ratio(self) -> float:
        return self.op / self.sr


def fit_speedup_model(calculated_times: Mapping[int, float]) -> SpeedupModel:
    """Least-squares fit of t = sr / np + op; op is clamped at zero."""
    items = sorted((int(k), float(v)) for k, v in calculated_times.items())
    if len({k for k, _ in items}) < 2:
        raise ValidationError("need timings for at least two distinct worker counts")
    x = np.array([1.0 / k for k, _ in items])
    t = np.array([v for _, v in items])
    design = np.column_stack([x, np.ones_like(x)])
    (sr, op), *_ = np.linalg.lstsq(design, t, rcond=None)
    if op < 0:
        sr = float(x @ t / (x @ x))
        op = 0.0
    if sr <= 0:
        raise ValidationError("timings do not decrease with worker count; sr <= 0")
    residual = float(np.sqrt(np.mean((sr * x + op - t) ** 2)))
    return SpeedupModel(float(sr), float(op), residual)


class IoTally:
    """Thread-safe file read/write counter."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reads = 0
        self.writes = 0

    def read(self, path) -> str:
        with open(path) as fh:
            text = fh.read()
        with self._lock:
            self.reads += 1
        return text

    def write(self, path, text: str) -> None:
        with open(path, "w") as fh:
            fh.write(text)
        with self._lock:
            self.writes += 1


def _floats(text: str) -> np.ndarray:
    return np.array(text.split(), dtype=np.float64)


def _fmt(values) -> str:
    # repr of a Python float round-trips exactly
    return " ".join(map(repr, np.asarray(values, dtype=np.float64).tolist()))


class LegacyScratch:
    """Scratch directory holding the per-medium read-only inputs.

    The two read-only files per medium (records and geometry) are written once
    at setup, like the per-residue inputs of the original file-mediated core,
    and are not counted as per-evaluation writes.
    """

    def __init__(self, scratch_dir, compiled: CompiledRecords, params: PeptideGeometryParams,
                 tally: IoTally | None = None):
        self.dir = Path(scratch_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.compiled = compiled
        self.tally = tally or IoTally()
        self.geometry_path = self.dir / "geometry.in"
        self.geometry_path.write_text(_fmt(params.as_array()) + "\n")
        self.data_paths = []
        ptr = compiled.med_ptr
        for m, medium in enumerate(compiled.media):
            path = self.dir / f"rdc_medium{medium}.in"
            lines = []
            for k in range(ptr[m], ptr[m + 1]):
                lines.append(f"{int(compiled.res[k])} {int(compiled.vtype[k])} "
                             + _fmt([compiled.value[k], compiled.weight[k], compiled.dmax[k]]))
            path.write_text("\n".join(lines) + "\n")
            self.data_paths.append(path)

    def score(self, angles: np.ndarray, tag: str = "0") -> float:
        """Fitness of one dihedral array, routed through intermediate files."""
        d = self.dir
        tally = self.tally
        num = 0.0
        den = 0.0
        n_res = angles.shape[0] + 1
        for m, data_path in enumerate(self.data_paths):
            # generator: geometry + angles -> coordinates
            geo = _floats(tally.read(self.geometry_path))
            xyz = np.empty((n_res, K.N_ATOMS, 3))
            K.build_chain(angles, geo, xyz)
            coords_path = d / f"coords_{tag}_{m}.out"
            tally.write(coords_path, _fmt(xyz.ravel()) + "\n")
            # svd input: coordinates + records -> design matrix
            xyz = _floats(tally.read(coords_path)).reshape(n_res, K.N_ATOMS, 3)
            table = _floats(tally.read(data_path)).reshape(-1, 5)
            res = table[:, 0].astype(np.int64)
            vtype = table[:, 1].astype(np.int64)
            val = np.ascontiguousarray(table[:, 2])
            w = np.ascontiguousarray(table[:, 3])
            dmax = np.ascontiguousarray(table[:, 4])
            count = len(table)
            A = np.empty((count, 5))
            b = np.empty(count)
            vecs = np.empty((count, 3))
            K.medium_design(xyz, res, vtype, val, dmax, 0, count, A, b, vecs)
            matrix_path = d / f"matrix_{tag}_{m}.out"
            tally.write(matrix_path, _fmt(np.column_stack([A, b, vecs]).ravel()) + "\n")
            # solver: design matrix -> tensor
            packed = _floats(tally.read(matrix_path)).reshape(count, 9)
            A = np.ascontiguousarray(packed[:, :5])
            b = np.ascontiguousarray(packed[:, 5])
            vecs = np.ascontiguousarray(packed[:, 6:])
            s = np.empty(5)
            rank = K.lstsq_svd(A, b, count, s, np.empty((5, 5)), np.empty((5, 5)), np.empty(5))
            solution_path = d / f"solution_{tag}_{m}.out"
            tally.write(solution_path, _fmt([*s, rank]) + "\n")
            # fitness: tensor -> back-calculated couplings
            s = _floats(tally.read(solution_path))[:5].copy()
            num, den = K.medium_residuals(vecs, val, w, dmax, 0, count, s, np.empty((count, 5)),
                                          np.empty(count), num, den)
        return float(K.finish_score(num, den))


def legacy_io_fitness(chain: BackboneChain, data: Sequence[RdcRecord],
                      params: VectorTypeParams = DEFAULT_VECTOR_PARAMS,
                      scratch_dir=None, tally: IoTally | None = None) -> FitnessScore:
    """Same score as ``fragment_fitness`` but through 5 reads + 3 writes per medium.

    Raises:
        RdcFoldError: an intermediate file could not be read or written; the
            message names the path.
    """
    if scratch_dir is None:
        raise ValidationError("legacy mode needs a writable scratch directory")
    compiled = compile_records(data, chain.first_residue, chain.n_residues, params)
    try:
        scratch = LegacyScratch(scratch_dir, compiled, chain.params, tally)
        angles = np.array([[d.phi, d.psi] for d in chain.dihedrals]).reshape(-1, 2)
        return FitnessScore(scratch.score(angles))
    except OSError as exc:
        raise RdcFoldError(f"legacy I/O failed on {exc.filename}: {exc.strerror}") from exc
