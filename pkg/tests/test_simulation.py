"""Tests for true-parameter sampling and response simulation."""

import numpy as np
import pytest

from grmfit.core.errors import DomainError, InfeasibleSimulationError
from grmfit.models.schemas import ItemParameters, SimulationSpec
from grmfit.services.grm import category_probabilities_grid
from grmfit.services.quadrature import gauss_hermite_normal
from grmfit.services.simulation_service import (
    REPLICATE_STRIDE,
    SimulationService,
    draw_responses,
    make_rng,
    sample_item_parameters,
    simulate_dataset,
    stream_id,
)
from grmfit.services.types import ItemSet


class TestSampleItemParameters:
    def test_threshold_ranges(self) -> None:
        for item in sample_item_parameters(500, seed=5):
            b1, b2, b3, b4 = item.b
            assert -2.5 <= b1 < -1.1
            assert -1.0 <= b2 < -0.1
            assert 0.1 <= b3 < 1.0
            assert 1.1 <= b4 < 2.5
            assert item.a > 0

    def test_slope_median(self) -> None:
        slopes = np.array([item.a for item in sample_item_parameters(100_000, seed=9)])
        assert np.median(slopes) == pytest.approx(np.exp(0.05), abs=0.02)

    def test_deterministic(self) -> None:
        assert sample_item_parameters(20, seed=3) == sample_item_parameters(20, seed=3)

    def test_streams_differ(self) -> None:
        first = sample_item_parameters(5, seed=3, stream=(stream_id(0, 0),))
        second = sample_item_parameters(5, seed=3, stream=(stream_id(0, 1),))
        assert first != second

    def test_needs_an_item(self) -> None:
        with pytest.raises(DomainError):
            sample_item_parameters(0, seed=1)


class TestStreams:
    def test_stream_id_layout(self) -> None:
        assert stream_id(0, 7) == 7
        assert stream_id(3, 2) == 3 * REPLICATE_STRIDE + 2

    def test_replicate_out_of_range(self) -> None:
        with pytest.raises(DomainError):
            stream_id(0, REPLICATE_STRIDE)

    def test_purposes_are_independent(self) -> None:
        a = make_rng(1, (5,), purpose=0).random(4)
        b = make_rng(1, (5,), purpose=1).random(4)
        assert not np.allclose(a, b)


class TestSimulateDataset:
    def test_every_category_present(self, five_items) -> None:
        simulated = simulate_dataset(five_items, 100, seed=4)
        data = simulated.data
        assert data.responses.shape == (100, 5)
        assert data.missing_categories() == {}
        assert simulated.psi.shape == (100,)
        assert simulated.resimulations >= 0

    def test_deterministic(self, five_items) -> None:
        first = simulate_dataset(five_items, 80, seed=4, stream=(12,))
        second = simulate_dataset(five_items, 80, seed=4, stream=(12,))
        np.testing.assert_array_equal(first.data.responses, second.data.responses)
        assert first.resimulations == second.resimulations

    def test_small_samples_resimulate(self) -> None:
        items = [ItemParameters(item_id=0, a=1.0, b=(-3.0, -1.0, 1.0, 3.0))]
        simulated = simulate_dataset(items, 5, seed=2, max_resimulations=5000)
        assert simulated.resimulations > 0
        assert simulated.data.missing_categories() == {}

    def test_infeasible(self, five_items) -> None:
        with pytest.raises(InfeasibleSimulationError):
            simulate_dataset(five_items, 4, seed=1, max_resimulations=3)

    def test_marginal_frequencies(self) -> None:
        item = ItemParameters(item_id=0, a=1.3, b=(-1.7, -0.4, 0.6, 1.9))
        n = 100_000
        data = simulate_dataset([item], n, seed=21).data
        freq = np.bincount(data.responses[:, 0], minlength=5) / n
        rule = gauss_hermite_normal(201)
        probs = category_probabilities_grid(ItemSet.from_parameters([item]), rule.nodes)[:, 0, :]
        marginal = rule.weights @ probs
        se = np.sqrt(marginal * (1 - marginal) / n)
        assert np.all(np.abs(freq - marginal) < 4 * se)

    def test_inverse_cdf_draw(self) -> None:
        items = ItemSet.from_parameters([ItemParameters(item_id=0, a=1.0, b=(-1.0, 0.0, 1.0, 2.0))])
        psi = np.zeros(4)
        # P(Y>=s | 0) = 0.731, 0.5, 0.269, 0.119
        u = np.array([[0.9], [0.6], [0.3], [0.05]])
        np.testing.assert_array_equal(draw_responses(items, psi, u)[:, 0], [0, 1, 2, 4])


class TestSimulationService:
    def test_simulate_spec(self) -> None:
        spec = SimulationSpec(n_items=3, n_subjects=150, seed=10)
        items, simulated = SimulationService().simulate(spec, stream=(1,))
        assert len(items) == 3
        assert simulated.data.responses.shape == (150, 3)
        assert simulated.seed == 10
        assert simulated.stream == (1,)
        assert items == sample_item_parameters(3, 10, (1,))
