import numpy as np
import pytest

from rdcfold.exceptions import ValidationError
from rdcfold.filters import karplus_coupling
from rdcfold.formats import parse_coupling_file, parse_rdc_file, parse_truth
from rdcfold.rdc import fragment_fitness
from rdcfold.synth import random_rotation, random_tensor, synthesize_dataset


def test_noiseless_fits_exactly():
    for seed in range(5):
        truth = synthesize_dataset(10, 10.0, 2, 0.0, seed=seed)
        assert fragment_fitness(truth.chain, truth.records).rmsd <= 1e-8


def test_seed_reproducible(tmp_path):
    a = synthesize_dataset(8, 10.0, 2, 0.3, seed=11, out_dir=tmp_path / "a", couplings=True)
    synthesize_dataset(8, 10.0, 2, 0.3, seed=11, out_dir=tmp_path / "b", couplings=True)
    for name in ("rdc.txt", "truth.txt", "couplings.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert parse_rdc_file(a.paths["rdc"]) == a.records
    pairs, tensors = parse_truth(a.paths["truth"])
    assert pairs == a.dihedrals
    assert np.array_equal(tensors[1], a.tensors[1].s)


def test_noise_level():
    # 110 records over 2 media; the weight-normalized rmsd stays in Hz
    inside = 0
    for seed in range(20):
        truth = synthesize_dataset(14, 10.0, 2, 0.5, seed=100 + seed)
        rmsd = fragment_fitness(truth.chain, truth.records).rmsd
        inside += 0.25 <= rmsd <= 0.75
    assert inside >= 19


def test_on_grid_and_off_grid():
    on = synthesize_dataset(6, 10.0, seed=1)
    assert all(d.phi % 10 == 0 and d.psi % 10 == 0 for d in on.dihedrals)
    off = synthesize_dataset(6, None, seed=1)
    assert any(d.phi % 10 != 0 for d in off.dihedrals)


def test_couplings_follow_phi():
    truth = synthesize_dataset(6, 10.0, seed=2, couplings=True)
    for rec in truth.couplings:
        assert rec.j == karplus_coupling(truth.dihedrals[rec.residue_index - 2].phi)


def test_coupling_file(tmp_path):
    truth = synthesize_dataset(5, 10.0, seed=2, couplings=True, out_dir=tmp_path)
    assert sorted(parse_coupling_file(truth.paths["couplings"])) == [2, 3, 4, 5]


def test_tensor_and_rotation_draws():
    rng = np.random.default_rng(0)
    for _ in range(50):
        q = random_rotation(rng)
        np.testing.assert_allclose(q @ q.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(q) == pytest.approx(1.0)
        ev = np.linalg.eigvalsh(random_tensor(rng).matrix())
        assert abs(ev.sum()) < 1e-15
        assert 2e-4 <= np.max(np.abs(ev)) <= 1e-3 + 1e-15


@pytest.mark.parametrize("kw", [{"n_residues": 1}, {"media": 0}, {"noise": -1.0}])
def test_validation(kw):
    args = {"n_residues": 5, "media": 2, "noise": 0.0}
    args.update(kw)
    with pytest.raises(ValidationError):
        synthesize_dataset(args["n_residues"], 10.0, args["media"], args["noise"])
