"""Scatter/gather evaluation of crossed combinations with local sort and head merge.

One orchestrator (the head) and ``np`` workers exchange messages over
in-process queues. Workers receive index ranges into the shared, immutable
crossing rather than copied payloads; each scores its range, sorts it locally
and returns (score, combination index) pairs. The head merges the sorted
blocks. Because scoring is deterministic and the sort order is total, the
result is identical for every worker count.
"""

from __future__ import annotations

import heapq
import queue
import struct
import tempfile
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .beam import BeamEntry, Crossing, angles_to_pairs, sort_key
from .exceptions import ValidationError, WorkerError
from .instrumentation import HEAD, LegacyScratch, SectionLabel, TimingLog, clock
from .rdc import CompiledRecords

# frame layouts for an out-of-process transport (little-endian)
_COUNT = struct.Struct("<I")
_SCATTER_HEAD = struct.Struct("<dH")
_GATHER_ENTRY = struct.Struct("<dI")


@dataclass(frozen=True)
class WorkerPoolConfig:
    np: int = 1
    sort_mode: str = "parallel"
    parallel_merge: bool = False

    def __post_init__(self):
        if self.np < 1:
            raise ValidationError(f"worker count must be >= 1, got {self.np}")
        if self.sort_mode not in ("parallel", "head"):
            raise ValidationError(f"sort_mode must be 'parallel' or 'head', got {self.sort_mode!r}")


@dataclass(frozen=True)
class WorkChunk:
    """Contiguous range [start, end) of the flat combination index space."""

    start: int
    end: int
    payload: "EvaluationTask | None" = None

    def __len__(self):
        return self.end - self.start


def scatter(total: int, np_workers: int) -> list[tuple[int, int]]:
    """Split [0, total) into np contiguous ranges, larger ranges first."""
    if np_workers < 1:
        raise ValidationError(f"worker count must be >= 1, got {np_workers}")
    if total < 0:
        raise ValidationError("total must be >= 0")
    base, extra = divmod(total, np_workers)
    ranges = []
    start = 0
    for w in range(np_workers):
        size = base + (1 if w < extra else 0)
        ranges.append((start, start + size))
        start += size
    return ranges


@dataclass(eq=False)
class EvaluationTask:
    """Everything a worker needs to score part of one crossing (read-only)."""

    crossing: Crossing
    compiled: CompiledRecords
    geometry: np.ndarray
    legacy: Sequence[LegacyScratch] | None = None

    def score_range(self, start: int, end: int, worker: int = 0) -> np.ndarray:
        out = np.empty(end - start)
        if end <= start:
            return out
        cr = self.crossing
        if self.legacy is not None:
            scratch = self.legacy[worker]
            for c in range(start, end):
                out[c - start] = scratch.score(cr.angles(c), tag=str(worker))
        else:
            K.score_combinations(cr.prefix, cr.candidates, start, end, self.geometry,
                                 *self.compiled.kernel_args(), out)
        return out


class ScoredBlock(Sequence[BeamEntry]):
    """Sorted (score, combination index) arrays tied to one crossing."""

    def __init__(self, scores, index, crossing: Crossing):
        self.scores = np.asarray(scores, dtype=np.float64)
        self.index = np.asarray(index, dtype=np.int64)
        self.crossing = crossing

    def __len__(self):
        return len(self.scores)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return ScoredBlock(self.scores[i], self.index[i], self.crossing)
        return BeamEntry(angles_to_pairs(self.crossing.angles(self.index[i])),
                         float(self.scores[i]))

    def truncated(self, m: int) -> "ScoredBlock":
        return ScoredBlock(self.scores[:m], self.index[:m], self.crossing)

    def to_beam(self):
        return self.crossing.beam_from(self.scores, self.index)


def sort_scored(scores: np.ndarray, index: np.ndarray, crossing: Crossing) -> ScoredBlock:
    s, ix = K.sort_block(np.asarray(scores, dtype=np.float64),
                         np.asarray(index, dtype=np.int64), crossing.prefix, crossing.candidates)
    return ScoredBlock(s, ix, crossing)


def evaluate_chunk(chunk: WorkChunk, task: EvaluationTask | None = None,
                   worker: int = 0) -> ScoredBlock:
    """Score every combination in the chunk and return them locally sorted.

    Raises:
        WorkerError: scoring failed; names the first combination of the chunk.
    """
    task = task or chunk.payload
    try:
        scores = task.score_range(chunk.start, chunk.end, worker)
    except Exception as exc:
        raise WorkerError(f"scoring failed in [{chunk.start}, {chunk.end}): {exc}", worker,
                          chunk.start) from exc
    return sort_scored(scores, np.arange(chunk.start, chunk.end, dtype=np.int64),
                       task.crossing)


def merge_sorted(a, b):
    """Stable linear merge of two sequences sorted by the global total order."""
    if isinstance(a, ScoredBlock) and isinstance(b, ScoredBlock) and a.crossing is b.crossing:
        cr = a.crossing
        s, ix = K.merge_blocks(a.scores, a.index, b.scores, b.index, cr.prefix, cr.candidates)
        return ScoredBlock(s, ix, cr)
    return list(heapq.merge(a, b, key=sort_key))


def merge_all(blocks: list, parallel: bool = False, executor=None):
    """Fold ``merge_sorted`` over blocks; pairwise tree in ceil(lg n) levels if parallel."""
    if not blocks:
        raise ValidationError("nothing to merge")
    if not parallel:
        out = blocks[0]
        for block in blocks[1:]:
            out = merge_sorted(out, block)
        return out
    level = list(blocks)
    while len(level) > 1:
        pairs = [(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if executor is not None:
            merged = list(executor.map(lambda p: merge_sorted(*p), pairs))
        else:
            merged = [merge_sorted(x, y) for x, y in pairs]
        if len(level) % 2:
            merged.append(level[-1])
        level = merged
    return level[0]


# out-of-process frames ------------------------------------------------------

def encode_scatter_frame(entries: Sequence[BeamEntry]) -> bytes:
    """``[u32 count]`` then per entry ``[f64 score][u16 n_pairs][f64 x 2 n_pairs]``."""
    parts = [_COUNT.pack(len(entries))]
    for e in entries:
        angles = e.flat_angles()
        score = float("nan") if e.score is None else e.score
        parts.append(_SCATTER_HEAD.pack(score, len(e.dihedrals)))
        parts.append(struct.pack(f"<{len(angles)}d", *angles))
    return b"".join(parts)


def decode_scatter_frame(frame: bytes) -> list[BeamEntry]:
    (count,) = _COUNT.unpack_from(frame, 0)
    offset = _COUNT.size
    out = []
    for _ in range(count):
        score, n = _SCATTER_HEAD.unpack_from(frame, offset)
        offset += _SCATTER_HEAD.size
        angles = struct.unpack_from(f"<{2 * n}d", frame, offset)
        offset += 16 * n
        pairs = angles_to_pairs(np.array(angles).reshape(n, 2))
        out.append(BeamEntry(pairs, None if score != score else score))
    return out


def encode_gather_frame(block: ScoredBlock) -> bytes:
    """``[u32 count]`` then per entry ``[f64 score][u32 combination index]``."""
    rec = np.empty(len(block), dtype=np.dtype([("s", "<f8"), ("i", "<u4")]))
    rec["s"] = block.scores
    rec["i"] = block.index
    return _COUNT.pack(len(block)) + rec.tobytes()


def decode_gather_frame(frame: bytes) -> tuple[np.ndarray, np.ndarray]:
    (count,) = _COUNT.unpack_from(frame, 0)
    rec = np.frombuffer(frame, dtype=np.dtype([("s", "<f8"), ("i", "<u4")]), count=count,
                        offset=_COUNT.size)
    return rec["s"].copy(), rec["i"].astype(np.int64)


def scatter_frame_size(count: int, n_pairs: int) -> int:
    return _COUNT.size + count * (_SCATTER_HEAD.size + 16 * n_pairs)


def gather_frame_size(count: int) -> int:
    return _COUNT.size + count * _GATHER_ENTRY.size


# worker pool ----------------------------------------------------------------

@dataclass
class _Scatter:
    iteration: int
    chunk: WorkChunk
    sent: float


@dataclass
class _Gather:
    worker: int
    block: ScoredBlock | None
    timings: TimingLog
    sent: float
    error: BaseException | None = None
    combination: int | None = None


@dataclass
class IterationStats:
    messages: int = 0
    bytes_scattered: int = 0
    bytes_gathered: int = 0


class WorkerPool:
    """``np`` persistent worker threads driven by one head.

    Scoring kernels release the GIL, so workers run concurrently. Sections
    inside an iteration are separated by barriers, as on a message-passing
    cluster: every worker finishes a section before any starts the next.
    """

    def __init__(self, config: WorkerPoolConfig | int = 1):
        if isinstance(config, int):
            config = WorkerPoolConfig(np=config)
        self.config = config
        self.np = config.np
        self._inbox = [queue.Queue() for _ in range(self.np)]
        self._outbox: queue.Queue = queue.Queue()
        self._barrier = threading.Barrier(self.np)
        self._threads: list[threading.Thread] = []
        self._executor = None
        self.stats = IterationStats()

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.close()

    def start(self):
        if self._threads:
            return
        for w in range(self.np):
            t = threading.Thread(target=self._loop, args=(w,), name=f"rdcfold-worker-{w}",
                                 daemon=True)
            t.start()
            self._threads.append(t)
        if self.config.parallel_merge and self.np > 1:
            self._executor = ThreadPoolExecutor(max_workers=max(1, self.np // 2))

    def close(self):
        for box in self._inbox:
            box.put(None)
        for t in self._threads:
            t.join()
        self._threads = []
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def _loop(self, w: int):
        while True:
            msg = self._inbox[w].get()
            if msg is None:
                return
            self._outbox.put(self._work(w, msg))

    def _work(self, w: int, msg: _Scatter) -> _Gather:
        log = TimingLog()
        it = msg.iteration
        chunk = msg.chunk
        task = chunk.payload
        try:
            received = clock()
            log.record_section(SectionLabel.SCATTERED, w, msg.sent, received, it)
            self._barrier.wait()
            t0 = clock()
            try:
                scores = task.score_range(chunk.start, chunk.end, w)
            except Exception as exc:
                self._barrier.abort()
                return _Gather(w, None, log, clock(), exc, chunk.start)
            t1 = clock()
            log.record_section(SectionLabel.CALCULATED, w, t0, t1, it)
            self._barrier.wait()
            index = np.arange(chunk.start, chunk.end, dtype=np.int64)
            if self.config.sort_mode == "parallel":
                t2 = clock()
                block = sort_scored(scores, index, task.crossing)
                log.record_section(SectionLabel.SORTED, w, t2, clock(), it)
            else:
                block = ScoredBlock(scores, index, task.crossing)
            self._barrier.wait()
            return _Gather(w, block, log, clock())
        except threading.BrokenBarrierError as exc:
            return _Gather(w, None, log, clock(), exc)

    def evaluate_and_sort(self, task: EvaluationTask, iteration: int = 0,
                          log: TimingLog | None = None, keep: int | None = None) -> ScoredBlock:
        """Scatter, score, locally sort, gather and merge one crossing.

        ``keep`` truncates the merged result (top-M) inside the Sorted section.

        Raises:
            WorkerError: a worker failed; no partial results are used.
        """
        if not self._threads:
            self.start()
        log = log if log is not None else TimingLog()
        total = len(task.crossing)
        n_pairs = task.crossing.prefix.shape[1] + 1
        sent = clock()
        for w, (start, end) in enumerate(scatter(total, self.np)):
            self._inbox[w].put(_Scatter(iteration, WorkChunk(start, end, task), sent))
            self.stats.messages += 1
            self.stats.bytes_scattered += scatter_frame_size(end - start, n_pairs)
        replies: dict[int, _Gather] = {}
        arrived: dict[int, float] = {}
        for _ in range(self.np):
            reply = self._outbox.get()
            arrived[reply.worker] = clock()
            replies[reply.worker] = reply
            self.stats.messages += 1
        self._barrier.reset()
        failures = [r for r in replies.values()
                    if r.error is not None and not isinstance(r.error, threading.BrokenBarrierError)]
        if failures:
            first = min(failures, key=lambda r: r.worker)
            raise WorkerError(str(first.error), first.worker, first.combination) from first.error
        if any(r.error is not None for r in replies.values()):
            raise WorkerError("barrier broken", min(r.worker for r in replies.values()
                                                    if r.error is not None))
        blocks = []
        for w in range(self.np):
            reply = replies[w]
            log.extend(reply.timings)
            log.record_section(SectionLabel.GATHERED, w, reply.sent, max(arrived[w], reply.sent),
                               iteration)
            self.stats.bytes_gathered += gather_frame_size(len(reply.block))
            blocks.append(reply.block)
        t0 = clock()
        if self.config.sort_mode == "parallel":
            merged = merge_all(blocks, self.config.parallel_merge, self._executor)
        else:
            merged = sort_scored(np.concatenate([b.scores for b in blocks]),
                                 np.concatenate([b.index for b in blocks]), task.crossing)
        if keep is not None:
            merged = merged.truncated(keep)
        log.record_section(SectionLabel.SORTED, HEAD, t0, clock(), iteration)
        return merged


def sequential_evaluate_and_sort(task: EvaluationTask) -> ScoredBlock:
    """Reference path: score everything in one call, then one full sort."""
    total = len(task.crossing)
    scores = task.score_range(0, total)
    return sort_scored(scores, np.arange(total, dtype=np.int64), task.crossing)


def parallel_evaluate_and_sort(combinations, pool: WorkerPool, data: CompiledRecords | None = None,
                               geometry: np.ndarray | None = None, **kwargs) -> ScoredBlock:
    """Sorted scores of every combination, computed by ``pool``.

    ``combinations`` is either a ready ``EvaluationTask`` or a ``Crossing``
    (then ``data`` and ``geometry`` are required).
    """
    task = combinations
    if not isinstance(task, EvaluationTask):
        if data is None or geometry is None:
            raise ValidationError("a Crossing needs compiled data and geometry")
        task = EvaluationTask(combinations, data, geometry)
    return pool.evaluate_and_sort(task, **kwargs)


def legacy_scratches(root, np_workers: int, compiled: CompiledRecords, params, tally,
                     label: str = "") -> list[LegacyScratch]:
    """One scratch directory per worker for file-mediated scoring."""
    root = Path(root) if root is not None else Path(tempfile.mkdtemp(prefix="rdcfold-legacy-"))
    return [LegacyScratch(root / f"{label}w{w}", compiled, params, tally)
            for w in range(np_workers)]

