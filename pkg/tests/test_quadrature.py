"""Tests for Gauss-Hermite rules and GHQ marginal likelihoods."""

import numpy as np
import pytest

from grmfit.core.errors import DimensionError, DomainError, ResourceError
from grmfit.services.grm import pattern_loglik
from grmfit.services.quadrature import (
    dataset_loglik_ghq,
    gauss_hermite_normal,
    marginal_loglik_ghq,
)
from grmfit.services.simulation_service import simulate_dataset


class TestGaussHermiteNormal:
    def test_single_node(self) -> None:
        rule = gauss_hermite_normal(1)
        assert rule.nodes.tolist() == [0.0]
        assert rule.weights.tolist() == [1.0]

    def test_two_nodes(self) -> None:
        rule = gauss_hermite_normal(2)
        np.testing.assert_allclose(rule.nodes, [-1.0, 1.0], atol=1e-14)
        np.testing.assert_allclose(rule.weights, [0.5, 0.5], atol=1e-14)

    @pytest.mark.parametrize("q", [3, 21, 61, 121])
    def test_moments_of_standard_normal(self, q: int) -> None:
        rule = gauss_hermite_normal(q)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-14)
        assert np.all(rule.weights > 0)
        np.testing.assert_allclose(rule.nodes, -rule.nodes[::-1], atol=0)
        assert np.dot(rule.weights, rule.nodes) == pytest.approx(0.0, abs=1e-13)
        assert np.dot(rule.weights, rule.nodes**2) == pytest.approx(1.0, rel=1e-10)
        if q >= 3:
            assert np.dot(rule.weights, rule.nodes**4) == pytest.approx(3.0, rel=1e-9)

    @pytest.mark.parametrize("q", [61, 121, 201])
    def test_tail_weights_stay_positive(self, q: int) -> None:
        rule = gauss_hermite_normal(q)
        assert np.all(np.isfinite(rule.log_weights))
        assert np.all(rule.weights > 0)
        np.testing.assert_allclose(rule.weights, rule.weights[::-1], rtol=1e-12, atol=0)
        np.testing.assert_allclose(rule.nodes, -rule.nodes[::-1], atol=1e-12)
        assert rule.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert np.dot(rule.weights, rule.nodes**2) == pytest.approx(1.0, rel=1e-10)

    def test_three_nodes(self) -> None:
        rule = gauss_hermite_normal(3)
        np.testing.assert_allclose(rule.nodes, [-np.sqrt(3.0), 0.0, np.sqrt(3.0)], atol=1e-14)
        np.testing.assert_allclose(rule.weights, [1 / 6, 2 / 3, 1 / 6], atol=1e-14)

    def test_large_rule_is_finite(self) -> None:
        rule = gauss_hermite_normal(2000)
        assert np.all(np.isfinite(rule.log_weights))
        assert rule.log_weights[0] < -700

    def test_ascending_nodes(self) -> None:
        rule = gauss_hermite_normal(61)
        assert np.all(np.diff(rule.nodes) > 0)

    @pytest.mark.parametrize("q", [0, -3])
    def test_too_few_nodes(self, q: int) -> None:
        with pytest.raises(DomainError):
            gauss_hermite_normal(q)

    def test_too_many_nodes(self) -> None:
        with pytest.raises(ResourceError):
            gauss_hermite_normal(10_001)


class TestMarginalLoglikGhq:
    def test_zero_items(self) -> None:
        rule = gauss_hermite_normal(61)
        assert marginal_loglik_ghq([], [], rule) == pytest.approx(0.0, abs=1e-14)

    def test_single_node_is_loglik_at_zero(self, five_items) -> None:
        pattern = [1, 2, 0, 4, 3]
        assert marginal_loglik_ghq(five_items, pattern, gauss_hermite_normal(1)) == pytest.approx(
            pattern_loglik(five_items, pattern, 0.0)
        )

    @pytest.mark.parametrize("m", [5, 20])
    def test_matches_trapezoid_oracle(self, m: int, random_items, oracle_marginal, rng) -> None:
        rule = gauss_hermite_normal(201)
        for trial in range(12):
            items = random_items(m, 1000 + trial)
            pattern = rng.integers(0, 5, size=m)
            assert marginal_loglik_ghq(items, pattern, rule) == pytest.approx(
                oracle_marginal(items, pattern), abs=1e-6
            )

    @pytest.mark.parametrize(("m", "tolerance"), [(5, 2e-5), (20, 5e-3)])
    def test_default_rule_error(self, m: int, tolerance: float, random_items, oracle_marginal, rng) -> None:
        rule = gauss_hermite_normal(61)
        for trial in range(12):
            items = random_items(m, 1000 + trial)
            pattern = rng.integers(0, 5, size=m)
            assert abs(marginal_loglik_ghq(items, pattern, rule) - oracle_marginal(items, pattern)) < tolerance

    def test_length_mismatch(self, five_items) -> None:
        with pytest.raises(DimensionError):
            marginal_loglik_ghq(five_items, [0, 1], gauss_hermite_normal(5))

    def test_dataset_is_sum_of_rows(self, five_items) -> None:
        rule = gauss_hermite_normal(41)
        data = simulate_dataset(five_items, 60, seed=3).data
        expected = sum(marginal_loglik_ghq(five_items, row, rule) for row in data.responses)
        assert dataset_loglik_ghq(five_items, data, rule) == pytest.approx(expected, rel=1e-12)

    def test_dataset_dimension_mismatch(self, five_items) -> None:
        data = simulate_dataset(five_items, 60, seed=3).data
        with pytest.raises(DimensionError):
            dataset_loglik_ghq(five_items[:3], data, gauss_hermite_normal(11))


@pytest.mark.slow
def test_oracle_equivalence_hundred_pairs(random_items, oracle_marginal, rng) -> None:
    rule = gauss_hermite_normal(201)
    for trial in range(100):
        m = 5 if trial % 2 else 20
        items = random_items(m, 5000 + trial)
        pattern = rng.integers(0, 5, size=m)
        assert abs(marginal_loglik_ghq(items, pattern, rule) - oracle_marginal(items, pattern)) < 1e-6
