"""Tests for starting values, E-step, M-step and the GHQ-EM estimator."""

import numpy as np
import pytest

from grmfit.core.errors import DegenerateItemError, DimensionError
from grmfit.models.schemas import FitConfig, FitStatus, ItemParameters, Method, ParameterBounds
from grmfit.services import reparam
from grmfit.services.em_service import (
    GhqEmEstimator,
    e_step,
    fit_ghq_em,
    item_derivatives,
    item_objective,
    m_step,
    projected_change,
    slope_from_correlation,
    starting_values,
    thresholds_from_exceedance,
)
from grmfit.services.grm import category_probabilities_grid
from grmfit.services.quadrature import dataset_loglik_ghq, gauss_hermite_normal
from grmfit.services.simulation_service import sample_item_parameters, simulate_dataset
from grmfit.services.types import ExpectedCounts, ItemSet, ResponseMatrix

RULE = gauss_hermite_normal(61)


def expected_counts(item: ItemParameters, total: float = 1000.0) -> ExpectedCounts:
    """Exact expected counts for one item when the items are the truth."""
    probs = category_probabilities_grid(ItemSet.from_parameters([item]), RULE.nodes)[:, 0, :]
    mass = total * RULE.weights[None, :] * probs.T  # (5, Q)
    return ExpectedCounts(node_mass=total * RULE.weights, category_mass=mass[None], loglik=0.0)


class TestStartingValues:
    def test_slope_from_correlation(self) -> None:
        assert slope_from_correlation(0.6) == pytest.approx(1.5)
        assert slope_from_correlation(0.0) == pytest.approx(0.2)
        assert slope_from_correlation(0.99) == pytest.approx(5.0)
        assert slope_from_correlation(float("nan")) == pytest.approx(0.2)

    def test_thresholds_forced_apart(self) -> None:
        b = thresholds_from_exceedance([0.5, 0.5, 0.5, 0.2], a=1.0)
        np.testing.assert_allclose(b, [0.0, 0.05, 0.10, np.log(4.0)], atol=1e-12)

    def test_thresholds_clipped(self) -> None:
        b = thresholds_from_exceedance([0.999999, 0.9, 0.5, 1e-7], a=0.2, n_subjects=10**7)
        assert b[0] == pytest.approx(-8.0)
        assert b[-1] == pytest.approx(8.0)

    def test_values_are_valid_and_inside_default_box(self, small_dataset) -> None:
        init = starting_values(small_dataset)
        assert [i.item_id for i in init] == list(small_dataset.item_ids)
        for item in init:
            assert 0.2 <= item.a <= 5.0
            assert FitConfig().bounds.contains(item)
            assert min(np.diff(item.b)) >= 0.05 - 1e-12

    def test_constant_column(self) -> None:
        y = np.tile(np.arange(5), (2, 1)).T.copy()
        y[:, 1] = 3
        with pytest.raises(DegenerateItemError):
            starting_values(ResponseMatrix(y))


class TestEStep:
    def test_counts_are_consistent(self, five_items, small_dataset) -> None:
        counts = e_step(small_dataset, five_items, RULE)
        n = small_dataset.n_subjects
        assert counts.node_mass.sum() == pytest.approx(n)
        np.testing.assert_allclose(counts.category_mass.sum(axis=(1, 2)), n)
        np.testing.assert_allclose(counts.category_mass.sum(axis=1), np.tile(counts.node_mass, (5, 1)))
        observed = np.stack([np.bincount(small_dataset.responses[:, j], minlength=5) for j in range(5)])
        np.testing.assert_allclose(counts.category_mass.sum(axis=2), observed)
        assert counts.loglik == pytest.approx(dataset_loglik_ghq(five_items, small_dataset, RULE), rel=1e-12)

    def test_dimension_mismatch(self, five_items, small_dataset) -> None:
        with pytest.raises(DimensionError):
            e_step(small_dataset, five_items[:4], RULE)


class TestItemDerivatives:
    def test_match_finite_differences(self, rng) -> None:
        h = 1e-5
        for trial in range(40):
            item = sample_item_parameters(1, 900 + trial)[0]
            counts = expected_counts(item).category_mass[0]
            counts = counts * rng.uniform(0.5, 1.5, size=counts.shape)
            c = reparam.pack(ItemSet.from_parameters([item]))[0] + rng.normal(0, 0.2, size=5)
            _, grad, hess = item_derivatives(c, counts, RULE.nodes)
            for k in range(5):
                step = np.zeros(5)
                step[k] = h
                fd_grad = (
                    item_objective(c + step, counts, RULE.nodes) - item_objective(c - step, counts, RULE.nodes)
                ) / (2 * h)
                fd_hess = (
                    item_derivatives(c + step, counts, RULE.nodes)[1]
                    - item_derivatives(c - step, counts, RULE.nodes)[1]
                ) / (2 * h)
                assert grad[k] == pytest.approx(fd_grad, rel=1e-6, abs=1e-5)
                np.testing.assert_allclose(hess[:, k], fd_hess, rtol=1e-6, atol=1e-5)
            np.testing.assert_allclose(hess, hess.T, atol=1e-9)


class TestMStep:
    def test_truth_is_a_fixed_point(self) -> None:
        item = ItemParameters(item_id=0, a=1.5, b=(-2.0, -0.5, 0.5, 1.8))
        updated = m_step(expected_counts(item), [item], RULE)[0]
        assert updated.a == pytest.approx(item.a, abs=1e-6)
        np.testing.assert_allclose(updated.b, item.b, atol=1e-6)

    def test_recovers_truth_from_elsewhere(self) -> None:
        truth = ItemParameters(item_id=0, a=1.5, b=(-2.0, -0.5, 0.5, 1.8))
        start = ItemParameters(item_id=0, a=1.0, b=(-1.0, -0.3, 0.3, 1.0))
        updated = m_step(expected_counts(truth), [start], RULE)[0]
        assert updated.a == pytest.approx(truth.a, abs=1e-2)
        np.testing.assert_allclose(updated.b, truth.b, atol=1e-2)

    def test_never_decreases_item_objective(self, five_items, small_dataset) -> None:
        init = starting_values(small_dataset)
        counts = e_step(small_dataset, init, RULE)
        updated = m_step(counts, init, RULE)
        before = reparam.pack(ItemSet.from_parameters(init))
        after = reparam.pack(ItemSet.from_parameters(updated))
        for j in range(5):
            q_before = item_objective(before[j], counts.category_mass[j], RULE.nodes)
            q_after = item_objective(after[j], counts.category_mass[j], RULE.nodes)
            assert q_after >= q_before


class TestProjectedChange:
    BOUNDS = ParameterBounds(a_upper=5.0, b_lower=-4.0, b_upper=4.0)

    @staticmethod
    def itemset(a, b) -> ItemSet:
        return ItemSet(a=np.asarray(a, dtype=float), b=np.asarray(b, dtype=float), item_ids=np.arange(len(a)))

    def test_free_items_report_largest_move(self) -> None:
        old = self.itemset([1.0, 2.0], [[-1, 0, 1, 2], [-2, -1, 0, 1]])
        new = self.itemset([1.1, 2.0], [[-1, 0, 1, 2], [-2, -1, 0.3, 1]])
        assert projected_change(old, new, self.BOUNDS) == pytest.approx(0.3)

    def test_item_with_slope_on_bound_is_ignored(self) -> None:
        old = self.itemset([4.0, 2.0], [[-1, 0, 1, 2], [-2, -1, 0, 1]])
        new = self.itemset([5.0, 2.0], [[-1.5, 0, 1, 2], [-2, -1, 0, 1.001]])
        assert projected_change(old, new, self.BOUNDS) == pytest.approx(0.001)

    def test_threshold_on_bound_is_ignored(self) -> None:
        old = self.itemset([1.0], [[-3.5, 0, 1, 2]])
        new = self.itemset([1.0], [[-4.0, 0, 1, 2.0002]])
        assert projected_change(old, new, self.BOUNDS) == pytest.approx(0.0002)


class TestGhqEmEstimator:
    def test_fit_is_monotone_and_converges(self, small_dataset) -> None:
        init = starting_values(small_dataset)
        result = fit_ghq_em(small_dataset, init, FitConfig())
        assert result.method is Method.GHQ_EM
        assert result.status is FitStatus.CONVERGED
        assert result.outer_iterations >= 1
        trace = np.asarray(result.loglik_trace)
        assert np.all(np.diff(trace) >= -1e-10)
        assert result.loglik == pytest.approx(dataset_loglik_ghq(result.estimates, small_dataset, RULE))
        assert result.loglik > dataset_loglik_ghq(init, small_dataset, RULE)

    def test_iteration_cap(self, small_dataset) -> None:
        result = GhqEmEstimator(FitConfig(max_outer_iterations=2)).fit(
            small_dataset, starting_values(small_dataset)
        )
        assert result.status is FitStatus.MAX_ITERATIONS
        assert not result.converged
        assert result.outer_iterations == 2

    def test_bounded_mode_keeps_estimates_in_box(self, small_dataset) -> None:
        config = FitConfig(em_bounded=True)
        result = GhqEmEstimator(config).fit(small_dataset, starting_values(small_dataset))
        for item in result.estimates:
            assert config.bounds.contains(item)

    def test_slope_held_on_bound_still_converges(self, five_items) -> None:
        steep = [five_items[0].model_copy(update={"a": 8.0}), *five_items[1:]]
        data = simulate_dataset(steep, 400, seed=5).data
        config = FitConfig(em_bounded=True, bounds=ParameterBounds(a_upper=3.0))
        result = fit_ghq_em(data, starting_values(data), config)
        assert result.status is FitStatus.CONVERGED
        assert result.estimates[0].a == pytest.approx(3.0, rel=1e-9)

    def test_identical_inputs_give_identical_fits(self, small_dataset) -> None:
        init = starting_values(small_dataset)
        first = fit_ghq_em(small_dataset, init)
        second = fit_ghq_em(small_dataset, init)
        assert first.estimates == second.estimates
        assert first.loglik == second.loglik
        assert first.loglik_trace == second.loglik_trace

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_monotone_on_random_datasets(self, seed: int) -> None:
        items = sample_item_parameters(5, seed)
        data = simulate_dataset(items, 200, seed).data
        result = fit_ghq_em(data, starting_values(data))
        assert np.all(np.diff(result.loglik_trace) >= -1e-10)


@pytest.mark.slow
def test_monotone_on_twenty_datasets() -> None:
    for seed in range(20):
        m = 20 if seed % 2 else 5
        items = sample_item_parameters(m, 100 + seed)
        data = simulate_dataset(items, 250, 100 + seed).data
        result = fit_ghq_em(data, starting_values(data))
        assert np.all(np.diff(result.loglik_trace) >= -1e-10)
