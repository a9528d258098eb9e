import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.config import DatasetSpec, NoiseSpec
from core.decomp import TTRep, eval_field
from core.errors import DatasetError, DomainError
from core.tensor import DenseTensor, almost_symmetrize
from modules.ident import informativity_check
from modules.simdata import (
    TrajectoryData,
    add_noise,
    gen_cp_model,
    gen_ht_model,
    gen_sparse_model,
    gen_tt_model,
    integrate,
    load_dataset,
    sample_dataset,
    sample_from_spec,
    save_dataset,
)


def _linear(matrix) -> DenseTensor:
    """Order-2 tensor whose field is x -> matrix @ x."""
    return DenseTensor.from_array(np.asarray(matrix, dtype=float).T)


class TestGenerators:
    def test_tt_model_ranks_and_scale(self):
        model = gen_tt_model(9, 4, [1, 9, 10, 3, 1], seed=0)
        assert isinstance(model, TTRep)
        assert model.ranks == [1, 9, 10, 3, 1]
        X = np.random.default_rng(99).standard_normal((9, 2000))
        X /= np.linalg.norm(X, axis=0)
        median = float(np.median(np.linalg.norm(eval_field(model, X), axis=0)))
        assert 0.5 < median < 2.0

    def test_tt_model_rejects_unattainable_rank(self):
        with pytest.raises(DomainError):
            gen_tt_model(2, 3, [1, 5, 1, 1], seed=0)

    def test_ht_model_on_nine_state_tree(self):
        model = gen_ht_model(9, 4, [1, 10, 10, 9, 9, 9, 3], seed=0)
        assert model.ranks == [1, 10, 10, 9, 9, 9, 3]

    def test_ht_model_rejects_rank_above_child_product(self):
        with pytest.raises(DomainError):
            gen_ht_model(3, 4, [1, 5, 2, 2, 2, 2, 2], seed=0)

    def test_cp_model_is_deterministic(self):
        a = gen_cp_model(4, 3, 3, seed=5)
        b = gen_cp_model(4, 3, 3, seed=5)
        assert_allclose(a.last_factor, b.last_factor, rtol=0, atol=0)

    def test_sparse_model_is_almost_symmetric(self):
        model = gen_sparse_model(4, 3, 0.3, seed=2)
        assert np.count_nonzero(model.data) > 0
        assert_allclose(almost_symmetrize(model).data, model.data, atol=1e-14)

    def test_sparse_model_without_draws_is_zero(self):
        model = gen_sparse_model(3, 3, 1e-12, seed=0)
        assert not model.data.any()

    def test_sparse_model_bad_sparsity(self):
        with pytest.raises(DomainError):
            gen_sparse_model(3, 3, 0.0, seed=0)


class TestIntegration:
    def test_zero_state_stays_at_origin(self):
        model = gen_cp_model(3, 3, 2, seed=1)
        traj = integrate(model, np.zeros(3), 0.1, 5)
        assert traj.T == 5
        assert not traj.X0.any()
        assert not traj.X1.any()

    def test_linear_decay_closed_form(self):
        x0 = np.array([1.0, -2.0])
        traj = integrate(_linear(-np.eye(2)), x0, 0.01, 11)
        assert_allclose(traj.X0[:, -1], math.exp(-0.1) * x0, rtol=1e-9)
        assert_allclose(traj.X1, -traj.X0)

    def test_fourth_order_convergence(self):
        model = _linear([[-1.0, 2.0], [-2.0, -1.0]])
        x0 = np.array([1.0, 0.5])
        t_end = 2.0

        def error(tau):
            steps = int(round(t_end / tau)) + 1
            final = integrate(model, x0, tau, steps).X0[:, -1]
            c, s = math.cos(2 * t_end), math.sin(2 * t_end)
            exact = math.exp(-t_end) * np.array([[c, s], [-s, c]]) @ x0
            return float(np.linalg.norm(final - exact))

        order = math.log2(error(0.1) / error(0.05))
        assert order >= 3.8

    def test_blowup_truncates_segment(self):
        traj = integrate(_linear(np.eye(2)), np.array([0.9, 0.0]), 0.1, 10, blowup=1.0)
        assert traj.T == 2
        assert len(traj.notes) == 1

    def test_nonpositive_step(self):
        with pytest.raises(DomainError):
            integrate(_linear(np.eye(2)), np.ones(2), 0.0, 3)


class TestSampling:
    def test_single_trajectory(self):
        model = gen_cp_model(3, 3, 2, seed=4)
        data = sample_dataset(model, num_trajectories=1, steps=6, tau=0.05, seed=3)
        x0 = np.random.default_rng([3, 0]).uniform(-0.5, 0.5, 3)
        assert_allclose(data.X0, integrate(model, x0, 0.05, 6).X0)
        assert data.segments == [(0, 6)]

    def test_bookkeeping_and_determinism(self):
        model = gen_tt_model(4, 3, [1, 2, 2, 1], seed=1)
        a = sample_dataset(model, num_trajectories=7, steps=4, seed=9)
        b = sample_dataset(model, num_trajectories=7, steps=4, seed=9)
        assert a.T == 28
        assert a.segments[-1] == (24, 28)
        assert_allclose(a.X0, b.X0, rtol=0, atol=0)
        assert_allclose(a.X1, eval_field(model, a.X0), rtol=1e-12)

    def test_informative_for_twenty_starts(self):
        model = gen_cp_model(4, 3, 2, seed=8)
        data = sample_dataset(model, num_trajectories=20, steps=10, seed=8)
        info = informativity_check(data.X0, 3)
        assert info.required == 10
        assert info.satisfied

    def test_all_segments_escaping(self):
        with pytest.raises(DatasetError):
            sample_dataset(_linear(np.eye(2)), num_trajectories=3, steps=4, half_width=5.0, blowup=0.1)

    def test_spec_seed_overrides(self):
        model = gen_cp_model(3, 3, 2, seed=4)
        spec = DatasetSpec(num_trajectories=3, steps=2, seed=17)
        assert_allclose(sample_from_spec(model, spec, seed=0).X0, sample_dataset(model, 3, 2, seed=17).X0)


class TestNoise:
    @pytest.fixture
    def data(self):
        model = gen_cp_model(4, 3, 2, seed=6)
        return sample_dataset(model, num_trajectories=10, steps=10, seed=6)

    def test_zero_sigma_keeps_data(self, data):
        noisy = add_noise(data, NoiseSpec(0.0))
        assert_allclose(noisy.X1, data.X1, rtol=0, atol=0)
        assert noisy.noise["sigma"] == 0.0

    def test_fixed_seed_is_bit_identical(self, data):
        a = add_noise(data, NoiseSpec(1e-2, seed=4))
        b = add_noise(data, NoiseSpec(1e-2, seed=4))
        assert_allclose(a.X1, b.X1, rtol=0, atol=0)
        assert_allclose(a.X0, data.X0, rtol=0, atol=0)

    def test_relative_energy(self, data):
        sigma = 0.05
        energies = [
            float(np.sum((add_noise(data, NoiseSpec(sigma, seed=s)).X1 - data.X1) ** 2)) for s in range(100)
        ]
        expected = sigma ** 2 * float(np.sum(data.X1 ** 2))
        assert np.mean(energies) == pytest.approx(expected, rel=0.1)

    def test_absolute_mode(self, data):
        noisy = add_noise(data, NoiseSpec(0.1, mode="absolute", seed=1))
        assert np.std(noisy.X1 - data.X1) == pytest.approx(0.1, rel=0.2)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        model = gen_cp_model(3, 3, 2, seed=2)
        data = add_noise(sample_dataset(model, num_trajectories=4, steps=3, seed=2), NoiseSpec(1e-3, seed=1))
        save_dataset(data, tmp_path / "ds", {"k": 3})
        loaded = load_dataset(tmp_path / "ds")
        assert_allclose(loaded.X0, data.X0, rtol=0, atol=0)
        assert_allclose(loaded.X1, data.X1, rtol=0, atol=0)
        assert loaded.segments == data.segments
        assert loaded.noise["sigma"] == 1e-3

    def test_single_sample_dataset(self, tmp_path):
        data = TrajectoryData(np.ones((3, 1)), np.zeros((3, 1)), tau=0.1)
        save_dataset(data, tmp_path)
        assert load_dataset(tmp_path).X0.shape == (3, 1)

    def test_missing_files(self, tmp_path):
        with pytest.raises(DatasetError):
            load_dataset(tmp_path / "nowhere")

    def test_mismatched_shapes(self):
        with pytest.raises(DatasetError):
            TrajectoryData(np.ones((3, 2)), np.ones((3, 3)), tau=0.1)
