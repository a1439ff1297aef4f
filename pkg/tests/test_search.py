import itertools
import math
import warnings

import numpy as np
import pytest

from oracles import exhaustive_best, oracle_fitness
from rdcfold.beam import Beam
from rdcfold.exceptions import SearchError, ValidationError
from rdcfold.filters import RamachandranTable, ScalarCouplingRecord
from rdcfold.geometry import DihedralPair, build_backbone
from rdcfold.parallel import WorkerPool
from rdcfold.rdc import DEFAULT_DMAX, RdcRecord, fragment_fitness
from rdcfold.search import (AngleCandidateList, FilterInputs, FoldContext, SearchConfig,
                            bounded_evaluations, cross_lists, fold, generate_dihedral_grid,
                            initial_beam, stage1, stage2_iteration, total_search_space)
from rdcfold.synth import synthesize_dataset


class TestGrid:
    def test_r10(self):
        grid = generate_dihedral_grid(10)
        assert len(grid) == 1296
        assert len({d.phi for d in grid}) == 36

    def test_r360(self):
        assert generate_dihedral_grid(360) == [DihedralPair(-180, -180)]

    def test_r90_exhaustive(self):
        axis = [-180, -90, 0, 90]
        assert [d.as_tuple() for d in generate_dihedral_grid(90)] == [
            (float(p), float(s)) for p in axis for s in axis]

    @pytest.mark.parametrize("R", [0, -5, 361])
    def test_bad_resolution(self, R):
        with pytest.raises(ValidationError):
            generate_dihedral_grid(R)

    def test_non_divisor_warns(self):
        with pytest.warns(UserWarning, match="divide"):
            SearchConfig(R=7, M=5, N=3)

    @pytest.mark.parametrize("kw", [{"M": 0}, {"N": 1}, {"N": 3, "sequence": ["general"]}])
    def test_config_validation(self, kw):
        with pytest.raises(ValidationError):
            SearchConfig(**kw)


class TestCalculators:
    def test_r10_n50_example(self):
        est = total_search_space(10, 50)
        assert est.c == 36 ** 98
        assert est.log10 == pytest.approx(98 * math.log10(36))
        assert est.log10 == pytest.approx(152.5176, abs=1e-4)

    def test_single(self):
        assert total_search_space(360, 2).c == 1

    def test_r90_n3_enumerated(self):
        axis = [-180, -90, 0, 90]
        paths = set(itertools.product(axis, repeat=4))
        assert total_search_space(90, 3).c == len(paths) == 256

    def test_bound(self):
        assert bounded_evaluations(50, 100) == 490_000
        assert bounded_evaluations(2, 37) == 37 ** 2

    def test_bad_inputs(self):
        with pytest.raises(ValidationError):
            total_search_space(10, 1)
        with pytest.raises(ValidationError):
            bounded_evaluations(3, 0)


class TestStage1:
    def test_all_pass_full_length(self, small_truth):
        f = FilterInputs(RamachandranTable.allow_all())
        lists = stage1(SearchConfig(R=10, M=2000, N=6), small_truth.records, f)
        assert all(len(l) == 1296 for l in lists)

    def test_m1(self, small_truth):
        lists = stage1(SearchConfig(R=10, M=1, N=6), small_truth.records)
        assert [len(l) for l in lists] == [1] * 5

    def test_sorted_unique(self, small_truth):
        for l in stage1(SearchConfig(R=10, M=2000, N=6), small_truth.records):
            scores = l.scores()
            assert np.all(np.diff(scores) >= 0)
            assert len({d for d, _ in l}) == len(l) == 345

    def test_truth_near_top(self):
        for seed in range(20):
            truth = synthesize_dataset(6, 10.0, 2, 0.0, seed=100 + seed)
            lists = stage1(SearchConfig(R=10, M=1296, N=6), truth.records)
            ranks = [[d for d, _ in l].index(truth.dihedrals[k]) / len(l)
                     for k, l in enumerate(lists)]
            assert sum(r < 0.05 for r in ranks) >= 0.9 * len(ranks)

    def test_scores_match_oracle(self, small_truth):
        recs = [RdcRecord(r.residue_index, r.vector_type, r.medium_id, r.value + 0.3, r.error)
                for r in small_truth.records]
        lst = stage1(SearchConfig(R=30, M=5, N=6), recs)[2]
        for d, score in lst:
            want = oracle_fitness([d.as_tuple()], recs, DEFAULT_DMAX, first_residue=3)
            assert score == pytest.approx(want, rel=1e-8)

    def test_empty_filter_falls_back(self, small_truth):
        couplings = {2: ScalarCouplingRecord(2, 500.0, 0.5)}
        with pytest.warns(UserWarning, match="unfiltered"):
            lists = stage1(SearchConfig(R=30, M=1000, N=6), small_truth.records,
                           FilterInputs(couplings=couplings))
        assert len(lists[0]) == 144
        assert len(lists[1]) < 144

    def test_sparse_data_fallback(self):
        recs = [RdcRecord(r, vt, 1, 1.0) for r in (1, 2, 3) for vt in ("NH", "CAHA", "CAC")]
        lists = stage1(SearchConfig(R=30, M=1000, N=4), recs)
        assert lists[2].fallback
        assert np.all(lists[2].scores() == 0)
        # fallback keeps filter order
        rects = RamachandranTable.default().rectangles("general")
        grid = [d for d in generate_dihedral_grid(30)
                if any(r.contains(d.phi, d.psi) for r in rects)]
        assert [d for d, _ in lists[2]] == grid

    def test_writes_files(self, small_truth, tmp_path):
        stage1(SearchConfig(R=30, M=10, N=6), small_truth.records, out_dir=tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == [
            f"pair_{k:03d}.txt" for k in range(1, 6)]

    def test_deterministic(self, small_truth):
        cfg = SearchConfig(R=20, M=50, N=6)
        a = stage1(cfg, small_truth.records)
        b = stage1(cfg, list(reversed(small_truth.records)))
        assert a == b


def _list(pairs, scores=None, index=1):
    scores = scores or [0.0] * len(pairs)
    return AngleCandidateList(index, tuple((DihedralPair(*p), s) for p, s in zip(pairs, scores)))


class TestCross:
    def test_order(self):
        beam = initial_beam(_list([(-60, -40), (-70, -50), (-80, 120)]), 10)
        cr = cross_lists(beam, _list([(-100, 100), (-110, 110)]))
        got = [tuple(d.as_tuple() for d in e.dihedrals) for e in cr]
        want = [(a, b) for a in [(-60, -40), (-70, -50), (-80, 120)]
                for b in [(-100, 100), (-110, 110)]]
        assert got == [tuple((float(x), float(y)) for x, y in w) for w in want]
        assert cr.stats.combinations == 6

    def test_identity(self):
        cr = cross_lists(initial_beam(_list([(-60, -40)]), 5), _list([(-90, 90)]))
        assert len(cr) == 1
        assert cr[0].dihedrals == (DihedralPair(-60, -40), DihedralPair(-90, 90))

    def test_count(self):
        grid = generate_dihedral_grid(10)
        beam = initial_beam(_list([d.as_tuple() for d in grid[:100]]), 100)
        cr = cross_lists(beam, _list([d.as_tuple() for d in grid[100:180]]))
        assert len(cr) == 8000 == cr.stats.m1 * cr.stats.m2
        assert (cr.stats.m1, cr.stats.m2) == (100, 80)

    def test_empty(self):
        with pytest.raises(ValidationError):
            cross_lists(initial_beam(_list([(-60, -40)]), 5), np.empty((0, 2)))


class TestStage2:
    def test_forced_path(self, small_truth):
        ctx = FoldContext(small_truth.records)
        beam = initial_beam(_list([d.as_tuple() for d in small_truth.dihedrals[:1]]), 5)
        with WorkerPool(1) as pool:
            out = stage2_iteration(beam, _list([small_truth.dihedrals[1].as_tuple()], index=2),
                                   ctx, pool, M=5)
        assert len(out) == 1
        assert out[0].dihedrals == tuple(small_truth.dihedrals[:2])
        chain = build_backbone(small_truth.dihedrals[:2], 3)
        assert out[0].score == fragment_fitness(chain, small_truth.records).rmsd

    @pytest.mark.parametrize("M", [1, 7, 12, 100])
    def test_length(self, small_truth, M):
        lists = stage1(SearchConfig(R=30, M=4, N=6), small_truth.records)
        ctx = FoldContext(small_truth.records)
        with WorkerPool(2) as pool:
            out = stage2_iteration(initial_beam(lists[0], M), lists[1], ctx, pool, M=M)
        assert len(out) == min(M, 4 * 4)
        assert np.all(np.diff(out.scores) >= 0)

    def test_insufficient_data_names_iteration(self, small_truth):
        # medium 2 only has data on residues 4 and 5: residues 1..3 cannot fit it
        recs = [r for r in small_truth.records if r.medium_id == 1]
        recs += [RdcRecord(r, vt, 2, 1.0) for r in (4, 5) for vt in ("NH", "CAHA", "CAC")]
        with pytest.raises(SearchError) as err:
            fold(SearchConfig(R=30, M=5, N=6), recs)
        assert err.value.iteration == 3


def _tiny_instance(seed=21, depth=8):
    truth = synthesize_dataset(4, 10.0, 2, 0.0, seed=seed)
    lists = stage1(SearchConfig(R=10, M=1000, N=4, list_depth=depth), truth.records)
    return truth, lists


class TestFold:
    def test_n2_base_case(self, small_truth):
        recs = [r for r in small_truth.records if r.residue_index <= 2]
        res = fold(SearchConfig(R=30, M=10, N=2), recs)
        first = stage1(SearchConfig(R=30, M=10, N=2), recs)[0]
        assert res.best.dihedrals == (first.entries[0][0],)
        assert res.best.score == first.entries[0][1]
        assert res.report.evaluations == 0

    @pytest.mark.parametrize("seed", [21, 22, 23])
    def test_exhaustive_optimum(self, seed):
        truth, lists = _tiny_instance(seed)
        res = fold(SearchConfig(R=10, M=512, N=4), truth.records, lists=lists)

        def score(path):
            return fragment_fitness(build_backbone(path, 4), truth.records).rmsd

        path, best = exhaustive_best([[d.as_tuple() for d, _ in l] for l in lists], score)
        assert [d.as_tuple() for d in res.best.dihedrals] == list(path)
        assert res.best.score == best
        # the independent scorer ranks the same path on top (within float noise)
        oracle = oracle_fitness(path, truth.records, DEFAULT_DMAX)
        assert oracle == pytest.approx(best, abs=1e-9)

    def test_truth_recovered_small(self):
        truth = synthesize_dataset(7, 10.0, 2, 0.0, seed=4)
        res = fold(SearchConfig(R=10, M=200, N=7), truth.records)
        assert list(res.best.dihedrals) == truth.dihedrals
        assert res.best.score <= 1e-6

    def test_beam_monotone_in_m(self):
        truth = synthesize_dataset(8, None, 2, 1.0, seed=31)
        scores = [fold(SearchConfig(R=20, M=m, N=8), truth.records).best.score
                  for m in (10, 50, 250)]
        assert scores[0] >= scores[1] >= scores[2]

    def test_deterministic(self, small_truth):
        cfg = SearchConfig(R=20, M=40, N=6)
        a = fold(cfg, small_truth.records, WorkerPool(3))
        b = fold(cfg, small_truth.records, WorkerPool(3))
        assert a.beam == b.beam

    def test_evaluations_bounded(self, small_truth):
        for m in (3, 17, 60):
            res = fold(SearchConfig(R=20, M=m, N=6), small_truth.records)
            assert res.report.evaluations <= bounded_evaluations(6, m)
            assert res.report.evaluations == sum(c["combinations"] for c in res.report.cross_stats)

    def test_combinations_linear_in_m(self, small_truth):
        cfg = dict(R=10, N=6, list_depth=30)
        a = fold(SearchConfig(M=40, **cfg), small_truth.records).report.cross_stats
        b = fold(SearchConfig(M=80, **cfg), small_truth.records).report.cross_stats
        for sa, sb in zip(a, b):
            assert sa["combinations"] == sa["m1"] * sa["m2"]
            assert sa["m2"] == sb["m2"] == 30
        # once m1 saturates at M, combinations scale with M
        assert a[-1]["m1"] == 40 and b[-1]["m1"] == 80
        assert b[-1]["combinations"] == 2 * a[-1]["combinations"]

    def test_unpacks(self, small_truth):
        best, chain, report = fold(SearchConfig(R=30, M=5, N=6), small_truth.records)
        assert chain.n_residues == 6 and report.N == 6 and best.score >= 0

    def test_checkpoints(self, small_truth, tmp_path):
        from rdcfold.formats import parse_beam

        res = fold(SearchConfig(R=30, M=5, N=6), small_truth.records, checkpoint_dir=tmp_path)
        files = sorted(tmp_path.iterdir())
        assert [f.name for f in files] == [f"beam_{k:03d}.txt" for k in (3, 4, 5, 6)]
        last = parse_beam(files[-1])
        np.testing.assert_array_equal(last.angles, res.beam.angles)

    def test_wrong_list_count(self, small_truth):
        lists = stage1(SearchConfig(R=30, M=5, N=6), small_truth.records)
        with pytest.raises(ValidationError):
            fold(SearchConfig(R=30, M=5, N=6), small_truth.records, lists=lists[:3])

    def test_no_warnings_on_normal_run(self, small_truth):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            fold(SearchConfig(R=30, M=5, N=6), small_truth.records, WorkerPool(2))

    def test_beam_type(self, small_truth):
        res = fold(SearchConfig(R=30, M=5, N=6), small_truth.records)
        assert isinstance(res.beam, Beam) and len(res.beam) == 5
