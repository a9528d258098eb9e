import itertools
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from core.config import IdentConfig, NoiseSpec
from core.decomp import CPRep, eval_field, random_cp, random_ht, to_full
from core.errors import DomainError
from core.registry import registry
from core.tensor import DenseTensor, almost_symmetrize, frobenius_relative, hpds_apply_batch
from core.tree import balanced_tree
from modules.ident import (
    cp_als_fit,
    ht_als_fit,
    identification_error,
    informativity_check,
    lifting_fit,
    lifting_identify,
    lifting_memory_estimate,
    objective,
    required_rank,
    tt_als_fit,
)
from modules.simdata import (
    TrajectoryData,
    add_noise,
    gen_cp_model,
    gen_ht_model,
    gen_sparse_model,
    gen_tt_model,
    sample_dataset,
)


def assert_monotone(values):
    for prev, nxt in zip(values, values[1:]):
        assert nxt <= prev * (1 + 1e-10) + 1e-12, f"objective rose from {prev!r} to {nxt!r}"


@pytest.fixture
def dense_data(rng):
    """Dense almost-symmetric truth with informative noiseless data, n=3, k=3."""
    truth = almost_symmetrize(DenseTensor.from_array(rng.standard_normal((3, 3, 3))))
    X0 = rng.uniform(-1, 1, (3, 40))
    return truth, X0, hpds_apply_batch(truth, X0)


class TestInformativity:
    def test_small_values(self):
        assert required_rank(2, 3) == 3
        assert required_rank(9, 4) == 165 == math.comb(11, 3)
        assert required_rank(5, 2) == 5

    def test_matches_monomial_count(self):
        for n in range(1, 7):
            for k in range(2, 6):
                monomials = sum(1 for _ in itertools.combinations_with_replacement(range(n), k - 1))
                assert required_rank(n, k) == monomials, (n, k)

    def test_generic_data_is_informative(self, rng):
        info = informativity_check(rng.standard_normal((4, 30)), 3)
        assert info.required == 10
        assert info.rank == 10
        assert info.satisfied

    def test_too_few_samples(self, rng):
        info = informativity_check(rng.standard_normal((4, 6)), 3)
        assert not info.satisfied

    def test_memory_estimate(self):
        assert lifting_memory_estimate(12, 7) == 8 * 7 * 12 ** 7
        assert lifting_memory_estimate(12, 7) > 256 * 1024 * 1024


class TestLifting:
    def test_worked_example_recovered(self, example_tensor, rng):
        X0 = rng.uniform(-1, 1, (2, 6))
        X1 = hpds_apply_batch(example_tensor, X0)
        fitted = lifting_identify(X0, X1, 3)
        assert_allclose(fitted.data, almost_symmetrize(example_tensor).data, atol=1e-8)

    def test_linear_case(self, rng):
        A = rng.standard_normal((3, 3))
        X0 = rng.standard_normal((3, 10))
        fitted = lifting_identify(X0, A @ X0, 2)
        assert_allclose(fitted.to_array(), A.T, atol=1e-10)

    def test_uninformative_data_is_noted(self, rng):
        truth = gen_sparse_model(3, 3, 1.0, seed=1)
        X0 = rng.standard_normal((3, 4))
        notes = []
        lifting_identify(X0, hpds_apply_batch(truth, X0), 3, notes=notes)
        assert notes and "below" in notes[0]

    def test_report(self, dense_data):
        truth, X0, X1 = dense_data
        tensor, report = lifting_fit(X0, X1, 3, truth=truth)
        assert report.method == "lift"
        assert report.converged and report.sweeps_run == 1
        assert report.e_pred <= 1e-10
        assert report.e_ident <= 1e-8
        assert report.param_count == tensor.size == 27


class TestErrors:
    def test_identification_error(self, rng):
        truth = gen_cp_model(3, 3, 2, seed=3)
        doubled = DenseTensor(truth.dims, 2 * to_full(truth).data)
        assert identification_error(truth, truth) == 0.0
        assert identification_error(truth, doubled) == pytest.approx(1.0)

    def test_identification_error_ignores_asymmetric_part(self, rng):
        arr = rng.standard_normal((2, 2, 2))
        skew = np.zeros_like(arr)
        skew[0, 1, 0], skew[1, 0, 0] = 1.0, -1.0
        a = DenseTensor.from_array(arr)
        b = DenseTensor.from_array(arr + skew)
        assert identification_error(a, b) == pytest.approx(0.0, abs=1e-14)

    def test_objective(self, example_tensor, rng):
        X0 = rng.standard_normal((2, 5))
        X1 = hpds_apply_batch(example_tensor, X0)
        assert objective(example_tensor, X0, X1) == 0.0
        assert objective(example_tensor, X0, X1 + 1.0) == pytest.approx(10.0)


class TestTensorTrainALS:
    def test_full_rank_train_reproduces_data(self, dense_data):
        truth, X0, X1 = dense_data
        cfg = IdentConfig(max_sweeps=10)
        fitted, report = tt_als_fit(X0, X1, cfg, ranks=[1, 3, 3, 1], truth=truth)
        assert_monotone(report.objective_per_sweep)
        assert report.e_pred <= 1e-8
        assert report.e_ident <= 1e-6
        assert len(report.e_ident_per_sweep) == report.sweeps_run

    def test_matched_structure_is_monotone(self, rng):
        truth = gen_tt_model(4, 3, [1, 2, 2, 1], seed=5)
        data = sample_dataset(truth, num_trajectories=20, steps=5, seed=5)
        _, report = tt_als_fit(data.X0, data.X1, IdentConfig(max_sweeps=30, seed=2), ranks=[1, 2, 2, 1])
        assert_monotone(report.objective_per_sweep)
        assert report.objective_per_sweep[-1] <= report.initial_objective
        assert report.status in ("converged", "max_sweeps")
        assert report.block_ranks.keys() == {"tt.core1", "tt.core2", "tt.core3"}

    def test_single_sweep(self, dense_data):
        _, X0, X1 = dense_data
        _, report = tt_als_fit(X0, X1, IdentConfig(max_sweeps=1), ranks=[1, 2, 2, 1])
        assert report.sweeps_run == 1
        assert len(report.objective_per_sweep) == 1

    def test_rank_deficient_blocks_are_noted(self, rng):
        truth = gen_sparse_model(3, 3, 1.0, seed=2)
        X0 = rng.standard_normal((3, 2))
        _, report = tt_als_fit(X0, hpds_apply_batch(truth, X0), IdentConfig(max_sweeps=2), ranks=[1, 3, 3, 1])
        assert any("minimum-norm" in note for note in report.notes)
        rank, cols = report.block_ranks["tt.core2"]
        assert rank < cols

    def test_rank_adaptation_keeps_valid_ranks(self, dense_data):
        _, X0, X1 = dense_data
        cfg = IdentConfig(max_sweeps=5, rank_adapt=True, trunc=1e-8)
        fitted, _ = tt_als_fit(X0, X1, cfg, ranks=[1, 3, 3, 1])
        assert fitted.ranks[0] == fitted.ranks[-1] == 1
        assert all(1 <= r <= 3 for r in fitted.ranks)

    def test_needs_ranks(self, dense_data):
        _, X0, X1 = dense_data
        with pytest.raises(DomainError):
            tt_als_fit(X0, X1, IdentConfig())

    def test_shape_mismatch(self, rng):
        with pytest.raises(DomainError):
            tt_als_fit(rng.standard_normal((3, 5)), rng.standard_normal((3, 4)), IdentConfig(), ranks=[1, 2, 2, 1])


class TestHierarchicalTuckerALS:
    @pytest.mark.parametrize("update", ["jacobi", "sequential"])
    def test_objective_is_monotone(self, update):
        truth = gen_ht_model(3, 4, 2, seed=11)
        data = sample_dataset(truth, num_trajectories=25, steps=3, seed=11)
        cfg = IdentConfig(max_sweeps=15, ht_update=update, seed=4)
        fitted, report = ht_als_fit(data.X0, data.X1, balanced_tree(4, 2), cfg, truth=truth)
        assert_monotone(report.objective_per_sweep)
        assert report.objective_per_sweep[-1] <= report.initial_objective
        assert report.e_ident is not None
        assert fitted.tree.ranks == [1, 2, 2, 2, 2, 2, 2]

    def test_full_rank_tree_reproduces_data(self, dense_data):
        truth, X0, X1 = dense_data
        tree = balanced_tree(3, [1, 9, 3, 3, 3])
        _, report = ht_als_fit(X0, X1, tree, IdentConfig(max_sweeps=10), truth=truth)
        assert_monotone(report.objective_per_sweep)
        assert report.e_pred <= 1e-6
        assert report.e_ident <= 1e-4

    def test_initial_representation_is_used(self, dense_data, rng):
        _, X0, X1 = dense_data
        init = random_ht(3, balanced_tree(3, 2), rng)
        before = objective(init, X0, X1)
        _, report = ht_als_fit(X0, X1, None, IdentConfig(max_sweeps=3), init=init)
        assert report.initial_objective == pytest.approx(before)

    def test_needs_tree(self, dense_data):
        _, X0, X1 = dense_data
        with pytest.raises(DomainError):
            ht_als_fit(X0, X1, None, IdentConfig())


class TestCanonicalPolyadicALS:
    def test_objective_is_monotone(self):
        truth = gen_cp_model(4, 3, 2, seed=7)
        data = sample_dataset(truth, num_trajectories=20, steps=5, seed=7)
        fitted, report = cp_als_fit(data.X0, data.X1, IdentConfig(max_sweeps=40, seed=1), rank=2, truth=truth)
        assert_monotone(report.objective_per_sweep)
        assert fitted.rank == 2
        for u in fitted.factors:
            assert_allclose(np.linalg.norm(u, axis=0), 1.0)
        assert report.block_ranks.keys() == {"cp.factor1", "cp.factor2", "cp.factor3"}

    def test_time_budget(self, dense_data):
        _, X0, X1 = dense_data
        cfg = IdentConfig(max_sweeps=50, tol=1e-300, max_time=1e-9)
        _, report = cp_als_fit(X0, X1, cfg, k=3, rank=2)
        assert report.status == "timeout"
        assert report.sweeps_run == 1
        assert not report.converged

    def test_vanished_column_is_reported_once(self, dense_data, rng):
        _, X0, X1 = dense_data
        init = random_cp(3, 3, 2, rng)
        init.last_factor[:, 1] = 0.0
        fitted, report = cp_als_fit(X0, X1, IdentConfig(max_sweeps=5, min_sweeps=5), init=init)
        assert report.sweeps_run == 5
        assert sum("vanished" in note for note in report.notes) == 1
        assert sum("Khatri-Rao" in note for note in report.notes) == 1
        assert not fitted.last_factor[:, 1].any()

    def test_needs_order(self, dense_data):
        _, X0, X1 = dense_data
        with pytest.raises(DomainError):
            cp_als_fit(X0, X1, IdentConfig(), rank=2)


def test_linear_systems_identified_by_every_method(rng):
    A = rng.standard_normal((3, 3))
    truth = DenseTensor.from_array(A.T)
    X0 = rng.standard_normal((3, 20))
    X1 = A @ X0
    cfg = IdentConfig(max_sweeps=20, tt_ranks=[1, 3, 1], ht_ranks=[1, 3, 3], cp_rank=3)
    fits = {}
    for method in ("tt", "ht", "cp", "lift"):
        rep, report = registry.get_fitter(method).fit(X0, X1, 2, cfg, truth=truth)
        assert report.e_pred <= 1e-8, method
        fits[method] = to_full(rep).data
    for method, data in fits.items():
        assert frobenius_relative(fits["lift"], data) <= 1e-8, method


def test_fitted_field_matches_reconstruction(dense_data):
    _, X0, X1 = dense_data
    fitted, _ = cp_als_fit(X0, X1, IdentConfig(max_sweeps=3), k=3, rank=2)
    assert_allclose(eval_field(fitted, X0), hpds_apply_batch(to_full(fitted), X0), rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("method", ["tt", "ht", "cp"])
def test_objective_never_rises_on_random_data(method, seed):
    rng = np.random.default_rng(seed)
    X0 = rng.standard_normal((3, 30))
    X1 = rng.standard_normal((3, 30)) / math.sqrt(90)
    cfg = IdentConfig(max_sweeps=15, min_sweeps=15, seed=seed, tt_ranks=[1, 2, 2, 1], ht_ranks=2, cp_rank=2)
    _, report = registry.get_fitter(method).fit(X0, X1, 3, cfg)
    trace = [report.initial_objective, *report.objective_per_sweep]
    assert len(trace) == 16
    for prev, nxt in zip(trace, trace[1:]):
        assert nxt <= prev + 1e-12, f"{method} objective rose from {prev!r} to {nxt!r}"


@pytest.mark.parametrize("method", ["tt", "ht"])
def test_prediction_error_tracks_noise_level(dense_data, method):
    _, X0, X1 = dense_data
    clean = TrajectoryData(X0=X0, X1=X1, tau=0.1)
    cfg = IdentConfig(max_sweeps=10, tt_ranks=[1, 3, 3, 1], ht_ranks=[1, 9, 3, 3, 3])
    errors = []
    for sigma in (1e-4, 1e-3, 1e-2):
        noisy = add_noise(clean, NoiseSpec(sigma, seed=3))
        _, report = registry.get_fitter(method).fit(noisy.X0, noisy.X1, 3, cfg)
        assert report.e_pred <= 10 * sigma, (method, sigma)
        errors.append(report.e_pred)
    assert errors == sorted(errors)
