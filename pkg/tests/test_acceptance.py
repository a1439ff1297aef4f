"""End-to-end acceptance criteria, one test per criterion.

The N=14 folds are shared through a module-level cache so that criteria 2, 3,
4, 5, 7 and 9 reuse the same runs. Each test prints one PASS/FAIL/SKIP line
(see the "acceptance criteria" section of the terminal summary).
"""

import math
import os
import time

import numpy as np
import pytest

from acceptance_log import criterion
from oracles import exhaustive_best, saupe_matrix
from rdcfold.cli import main
from rdcfold.formats import write_beam
from rdcfold.geometry import build_backbone
from rdcfold.parallel import WorkerPool
from rdcfold.rdc import fit_order_tensor, fragment_fitness
from rdcfold.search import SearchConfig, bounded_evaluations, fold, stage1
from rdcfold.synth import random_tensor, synthesize_dataset

pytestmark = pytest.mark.slow

N14 = 14
CORES = os.cpu_count() or 1


@pytest.fixture(scope="module")
def truth14():
    return synthesize_dataset(N14, 10.0, media=2, noise=0.0, seed=0)


@pytest.fixture(scope="module")
def runs(truth14, tmp_path_factory):
    """Memoized fold(np, M) on the N=14 instance: (result, wall seconds, beam bytes)."""
    out = tmp_path_factory.mktemp("acceptance")
    cache = {}

    def run(np_workers, M):
        key = (np_workers, M)
        if key not in cache:
            t0 = time.perf_counter()
            with WorkerPool(np_workers) as pool:
                result = fold(SearchConfig(R=10, M=M, N=N14), truth14.records, pool)
            wall = time.perf_counter() - t0
            path = out / f"beam_np{np_workers}_M{M}.txt"
            write_beam(path, result.beam)
            cache[key] = (result, wall, path.read_bytes())
        return cache[key]

    return run


def test_criterion_1_exhaustive_oracle():
    with criterion(1, "brute-force equivalence, N=4, lists <= 8, M=512") as info:
        # warm the compiled kernels so the timing covers the search itself
        warm = synthesize_dataset(4, 10.0, 2, 0.0, seed=1)
        fold(SearchConfig(R=10, M=8, N=4, list_depth=4), warm.records)
        worst = 0.0
        for seed in (41, 42, 43):
            truth = synthesize_dataset(4, 10.0, 2, 0.5, seed=seed)
            t0 = time.perf_counter()
            config = SearchConfig(R=10, M=512, N=4, list_depth=8)
            lists = stage1(config, truth.records)
            assert all(len(l) <= 8 for l in lists)
            res = fold(config, truth.records, lists=lists)
            path, best = exhaustive_best(
                [[d.as_tuple() for d, _ in l] for l in lists],
                lambda p: fragment_fitness(build_backbone(p, 4), truth.records).rmsd)
            elapsed = time.perf_counter() - t0
            worst = max(worst, elapsed)
            assert [d.as_tuple() for d in res.best.dihedrals] == list(path)
            assert res.best.score == best  # bitwise
        info.append(f"3 seeds identical, slowest {worst:.2f} s")
        assert worst < 5.0


def test_criterion_2_truth_recovery(runs, truth14):
    with criterion(2, "truth recovery, N=14, M=1000, noiseless") as info:
        result, wall, _ = runs(1, 1000)
        info.append(f"rmsd {result.best.score:.3g} Hz, wall {wall:.1f} s")
        assert list(result.best.dihedrals) == truth14.dihedrals
        assert result.best.score <= 1e-6
        assert wall < 240.0


def test_criterion_3_np_equivalence(runs):
    with criterion(3, "byte-identical beams for np in 1,2,4,8") as info:
        reference = runs(1, 1000)[2]
        for k in (2, 4, 8):
            assert runs(k, 1000)[2] == reference, f"np={k} differs"
        info.append(f"{len(reference)} bytes each")


def test_criterion_4_calculated_scaling(runs):
    with criterion(4, "Calculated(np=4) <= 0.35 Calculated(np=1)") as info:
        one = runs(1, 1000)[0].report.means["Calculated"]
        four = runs(4, 1000)[0].report.means["Calculated"]
        ratio = four / one
        info.append(f"ratio {ratio:.3f}")
        if CORES < 4:
            pytest.skip(f"host has {CORES} core(s), needs >= 4 (measured ratio {ratio:.3f})")
        assert ratio <= 0.35


def test_criterion_5_sort_share(runs):
    with criterion(5, "Sorted share <= 10% at M=1000") as info:
        shares = {k: runs(k, 1000)[0].report.share("Sorted") for k in (1, 2, 4, 8)}
        info.append(", ".join(f"np={k} {100 * s:.2f}%" for k, s in shares.items()))
        assert all(s <= 0.10 for s in shares.values())


def test_criterion_6_legacy_io(truth14, tmp_path):
    with criterion(6, "legacy I/O >= 2x wall, 5 reads + 3 writes per medium") as info:
        config = SearchConfig(R=10, M=100, N=N14)
        fold(config, truth14.records)  # warm-up
        t0 = time.perf_counter()
        plain = fold(config, truth14.records, WorkerPool(1))
        t_plain = time.perf_counter() - t0
        t0 = time.perf_counter()
        legacy = fold(config, truth14.records, WorkerPool(1), legacy_io=True,
                      scratch_dir=tmp_path)
        t_legacy = time.perf_counter() - t0
        rep = legacy.report
        media = 2
        info.append(f"{t_legacy:.1f} s vs {t_plain:.2f} s ({t_legacy / t_plain:.0f}x), "
                    f"{rep.io_reads} reads / {rep.io_writes} writes for "
                    f"{rep.evaluations} evaluations")
        assert legacy.beam == plain.beam
        assert rep.io_reads == 5 * media * rep.evaluations
        assert rep.io_writes == 3 * media * rep.evaluations
        assert t_legacy >= 2.0 * t_plain


def test_criterion_7_linear_in_m(runs):
    with criterion(7, "wall(M=2000) / wall(M=1000) in [1.5, 3.0]") as info:
        w1 = runs(1, 1000)[1]
        w2 = runs(1, 2000)[1]
        info.append(f"{w2:.1f} s / {w1:.1f} s = {w2 / w1:.2f}")
        assert 1.5 <= w2 / w1 <= 3.0


def test_criterion_8_tensor_fit():
    with criterion(8, "tensor recovery 1e-9, noisy rmsd band 95/100") as info:
        rng = np.random.default_rng(2024)
        worst = 0.0
        for _ in range(20):
            s = random_tensor(rng).s
            v = rng.normal(size=(20, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            d = 21700.0 * np.array([u @ saupe_matrix(s) @ u for u in v])
            t, _ = fit_order_tensor(v, d, 21700.0)
            worst = max(worst, np.linalg.norm(t.s - s) / np.linalg.norm(s))
        assert worst <= 1e-9
        inside = 0
        for _ in range(100):
            s = random_tensor(rng).s
            v = rng.normal(size=(100, 3))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
            d = 21700.0 * np.array([u @ saupe_matrix(s) @ u for u in v])
            _, rmsd = fit_order_tensor(v, d + rng.normal(0.0, 0.5, 100), 21700.0)
            inside += 0.25 <= rmsd <= 0.75
        info.append(f"worst relative error {worst:.2e}, {inside}/100 in band")
        assert inside >= 95


def test_criterion_9_calculators(runs, capsys):
    with criterion(9, "36^98 exactly; evaluations <= (N-1) M^2") as info:
        assert main(["analyze", "-R", "10", "-N", "50"]) == 0
        text = capsys.readouterr().out
        assert "36^98" in text and f"C = {36 ** 98}\n" in text
        assert math.isclose(98 * math.log10(36), 152.517645, abs_tol=1e-6)
        checked = []
        for M in (1000, 2000):
            rep = runs(1, M)[0].report
            bound = bounded_evaluations(N14, M)
            assert rep.evaluations <= bound
            checked.append(f"M={M}: {rep.evaluations} <= {bound}")
        for M in (5, 40, 300):
            small = synthesize_dataset(8, 10.0, 2, 0.2, seed=M)
            rep = fold(SearchConfig(R=10, M=M, N=8), small.records).report
            assert rep.evaluations <= bounded_evaluations(8, M)
        info.append("; ".join(checked))
