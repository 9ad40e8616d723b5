"""
Perturbation Tests - Rankings, cumulative masking, curves, the fidelity area and bootstrap
"""

import numpy as np
import pytest
from config.settings import settings
from exceptions import DataError, GridMismatchError
from models import (
    Direction,
    PerturbationCurve,
    Reduction,
    SaliencyMap2D,
    SampleCurve,
    Signedness,
    mlp_layers,
)
from services.model_service import build_model, logits_array
from services.perturbation_service import (
    aggregate_curves,
    bootstrap_ci,
    check_fraction_grid,
    curve_value_at,
    evaluate_estimator,
    fidelity_area,
    fraction_grid,
    masked_copies,
    masked_counts,
    perturbation_curve,
    perturbation_curves,
    rank_pixels,
    ranked_score_series,
)
from services.saliency_service import reduce, vanilla_gradient

from tests.toy_models import brute_force_curve, linear_model

pytestmark = pytest.mark.unit


def _map(scores, signedness=Signedness.SIGNED):
    return SaliencyMap2D(
        scores=np.asarray(scores, dtype=np.float32),
        signedness=signedness,
        reduction=None,
        estimator="test",
    )


def _curve(per_sample, fractions=None, ids=None, **metadata):
    per_sample = np.asarray(per_sample, dtype=np.float64)
    if fractions is None:
        fractions = np.linspace(0.0, 1.0, per_sample.shape[1])
    return PerturbationCurve(
        fractions=np.asarray(fractions, dtype=np.float64),
        mean_normalized_logits=per_sample.mean(axis=0),
        per_sample=per_sample,
        sample_ids=np.arange(per_sample.shape[0]) if ids is None else np.asarray(ids),
        metadata=metadata,
    )


def _sample_curve(raw_logits, sample_id=0, fractions=(0.0, 0.5, 1.0)):
    raw = np.asarray(raw_logits, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        values = raw / raw[0]
    return SampleCurve(
        fractions=np.asarray(fractions, dtype=np.float64),
        values=values,
        raw_logits=raw,
        class_index=0,
        sample_id=sample_id,
    )


def _small_mlp(height, width, seed=0):
    return build_model(mlp_layers([6], 3), (height, width, 1), init_seed=seed)


# =============================================================================
# Rankings
# =============================================================================


class TestRanking:
    """Most- and least-important-first pixel orders"""

    def test_descending_row_major(self):
        ranking = rank_pixels(_map([[3.0, 1.0], [-2.0, 0.0]]))

        assert ranking.order.tolist() == [0, 1, 3, 2]
        assert ranking.direction == Direction.MIF

    def test_ties_keep_row_major_order(self):
        ranking = rank_pixels(_map([[1.0, 2.0], [1.0, 2.0]]))
        assert ranking.order.tolist() == [1, 3, 0, 2]

    def test_reversal_gives_least_important_first(self):
        ranking = rank_pixels(_map([[3.0, 1.0], [-2.0, 0.0]], Signedness.UNSIGNED))

        reverse = ranking.reversed()

        assert reverse.order.tolist() == [2, 3, 1, 0]
        assert reverse.direction == Direction.LIF
        assert reverse.signedness == Signedness.UNSIGNED
        assert reverse.reversed().order.tolist() == ranking.order.tolist()

    def test_score_series(self, rng):
        saliency = _map(rng.normal(size=(5, 6)))
        mif = rank_pixels(saliency)

        mif_series = ranked_score_series(saliency, mif)
        lif_series = ranked_score_series(saliency, mif.reversed())

        assert np.all(np.diff(mif_series) <= 0)
        assert np.all(np.diff(lif_series) >= 0)
        np.testing.assert_array_equal(lif_series, mif_series[::-1])
        assert lif_series[0] == saliency.scores.min()


# =============================================================================
# Fraction grid and masking
# =============================================================================


class TestMasking:
    """Cumulative masking along the fraction grid"""

    def test_default_grid(self):
        grid = fraction_grid(50)

        assert len(grid) == 51
        assert grid[0] == 0.0 and grid[-1] == 1.0
        assert grid[1] == pytest.approx(0.02)

    def test_grid_validation(self):
        with pytest.raises(ValueError):
            fraction_grid(0)
        with pytest.raises(GridMismatchError, match="start at 0"):
            check_fraction_grid([0.1, 0.5])
        with pytest.raises(GridMismatchError, match="increasing"):
            check_fraction_grid([0.0, 0.5, 0.5])
        with pytest.raises(GridMismatchError):
            check_fraction_grid([0.0])

    def test_masked_counts_floor(self):
        counts = masked_counts(fraction_grid(50), 784)
        assert counts[0] == 0
        assert counts[1] == 15
        assert counts[25] == 392
        assert counts[-1] == 784
        assert masked_counts([0.3], 10).tolist() == [3]

    def test_masked_sets_are_nested(self, rng):
        x = rng.uniform(1.0, 2.0, size=(6, 5, 2))
        ranking = rank_pixels(_map(rng.normal(size=(6, 5))))
        fractions = fraction_grid(7)

        copies = masked_copies(x, ranking, fractions, mask_value=0.0)

        masked = (copies == 0.0).all(axis=-1)
        counts = masked_counts(fractions, 30)
        for i in range(len(fractions)):
            assert masked[i].sum() == counts[i]
            if i > 0:
                assert np.all(masked[i - 1] <= masked[i])
        np.testing.assert_array_equal(masked[2].reshape(-1)[ranking.order[: counts[2]]], True)

    def test_source_image_untouched(self, rng):
        x = rng.uniform(1.0, 2.0, size=(4, 4, 1))
        before = x.copy()
        masked_copies(x, rank_pixels(_map(rng.normal(size=(4, 4)))), fraction_grid(4), 0.0)
        np.testing.assert_array_equal(x, before)


# =============================================================================
# Curves
# =============================================================================


class TestPerturbationCurve:
    """Normalized logits along the masking grid"""

    def test_starts_at_one(self, rng):
        model = _small_mlp(4, 4)
        x = rng.uniform(-1.0, 1.0, size=(4, 4, 1)).astype(np.float32)
        c = int(np.argmax(np.abs(logits_array(model, x[None])[0])))
        ranking = rank_pixels(_map(rng.normal(size=(4, 4))))

        curve = perturbation_curve(model, x, ranking, fraction_grid(8), -1.0, c)

        assert curve.values[0] == 1.0
        assert curve.raw_logits[0] == pytest.approx(float(logits_array(model, x[None])[0, c]))

    def test_full_masking_ignores_the_ranking(self, rng):
        model = _small_mlp(4, 4)
        x = rng.uniform(-1.0, 1.0, size=(4, 4, 1)).astype(np.float32)
        c = int(np.argmax(np.abs(logits_array(model, x[None])[0])))
        first = rank_pixels(_map(rng.normal(size=(4, 4))))
        second = rank_pixels(_map(rng.normal(size=(4, 4))))

        a = perturbation_curve(model, x, first, fraction_grid(8), -1.0, c)
        b = perturbation_curve(model, x, second, fraction_grid(8), -1.0, c)

        assert a.values[-1] == b.values[-1]

    @pytest.mark.parametrize("size, steps", [(2, 4), (2, 3), (4, 16), (4, 5)])
    def test_matches_brute_force(self, rng, size, steps):
        model = _small_mlp(size, size, seed=size)
        x = rng.uniform(-1.0, 1.0, size=(size, size, 1)).astype(np.float32)
        c = int(np.argmax(np.abs(logits_array(model, x[None])[0])))
        ranking = rank_pixels(_map(rng.normal(size=(size, size))))
        fractions = fraction_grid(steps)

        curve = perturbation_curve(model, x, ranking, fractions, 0.0, c)

        expected = brute_force_curve(model, x, ranking.order, fractions, 0.0, c)
        np.testing.assert_allclose(curve.values, expected, rtol=1e-6, atol=1e-9)

    def test_packed_passes_match_single_samples(self, rng, monkeypatch):
        monkeypatch.setattr(settings, "eval_batch_size", 12)
        model = _small_mlp(3, 3)
        images = rng.uniform(-1.0, 1.0, size=(5, 3, 3, 1)).astype(np.float32)
        rankings = [rank_pixels(_map(rng.normal(size=(3, 3)))) for _ in range(5)]
        fractions = fraction_grid(3)

        packed = perturbation_curves(model, images, rankings, fractions, 0.0, [0, 1, 2, 0, 1], [10, 11, 12, 13, 14])

        assert [curve.sample_id for curve in packed] == [10, 11, 12, 13, 14]
        for k, curve in enumerate(packed):
            single = perturbation_curve(model, images[k], rankings[k], fractions, 0.0, curve.class_index)
            np.testing.assert_allclose(curve.raw_logits, single.raw_logits, rtol=1e-6)

    def test_non_monotone_grid_rejected(self, rng):
        model = _small_mlp(2, 2)
        x = np.zeros((2, 2, 1), dtype=np.float32)
        ranking = rank_pixels(_map(np.zeros((2, 2))))
        with pytest.raises(GridMismatchError):
            perturbation_curve(model, x, ranking, np.array([0.0, 0.75, 0.5]), 0.0, 0)


class TestAggregateCurves:
    """Mean curve with exclusion bookkeeping"""

    def test_mean_with_exclusions(self):
        curves = [
            _sample_curve([2.0, 1.0, 0.0], 0),
            _sample_curve([4.0, 4.0, 2.0], 1),
            _sample_curve([1e-7, 5.0, 5.0], 2),
            _sample_curve([-2.0, -1.0, -1.0], 3),
        ]

        result = aggregate_curves(curves, {"estimator": "ig_sum"})

        np.testing.assert_allclose(result.mean_normalized_logits, [1.0, 2.0 / 3.0, 1.0 / 3.0])
        assert result.metadata["excluded_samples"] == 1
        assert result.metadata["excluded_ids"] == [2]
        assert result.metadata["negative_logit_samples"] == 1
        assert result.metadata["estimator"] == "ig_sum"
        assert result.sample_ids.tolist() == [0, 1, 3]
        assert result.num_samples == 3

    def test_empty(self):
        with pytest.raises(ValueError):
            aggregate_curves([])

    def test_mixed_grids(self):
        curves = [_sample_curve([1.0, 1.0, 1.0]), _sample_curve([1.0, 1.0, 1.0], fractions=(0.0, 0.4, 1.0))]
        with pytest.raises(GridMismatchError):
            aggregate_curves(curves)

    def test_every_sample_excluded(self):
        with pytest.raises(DataError, match="near-zero"):
            aggregate_curves([_sample_curve([0.0, 1.0, 1.0]), _sample_curve([5e-7, 1.0, 1.0])])

    def test_value_at_interpolates(self):
        curve = _curve([[1.0, 0.5, 0.0]])
        assert curve_value_at(curve, 0.25) == pytest.approx(0.75)
        assert curve_value_at(curve, 1.0) == pytest.approx(0.0)


# =============================================================================
# Fidelity area and bootstrap
# =============================================================================


class TestFidelityArea:
    """Area between LIF and MIF in percentage points"""

    def test_identical_curves(self):
        curve = _curve([[1.0, 0.7, 0.2]])
        assert fidelity_area(curve, curve) == 0.0

    def test_full_separation(self):
        lif = _curve([[1.0, 1.0, 1.0]])
        mif = _curve([[0.0, 0.0, 0.0]])
        assert fidelity_area(lif, mif) == pytest.approx(100.0)

    def test_linear_gap(self):
        fractions = fraction_grid(10)
        lif = _curve([np.ones(11)], fractions)
        mif = _curve([1.0 - fractions], fractions)
        assert fidelity_area(lif, mif) == pytest.approx(50.0)

    def test_sign_follows_orientation(self):
        lif = _curve([[1.0, 0.2, 0.0]])
        mif = _curve([[1.0, 0.8, 0.0]])
        assert fidelity_area(lif, mif) == pytest.approx(-30.0)

    def test_grid_mismatch(self):
        lif = _curve([[1.0, 0.5, 0.0]])
        mif = _curve([[1.0, 0.5, 0.0]], fractions=[0.0, 0.4, 1.0])
        with pytest.raises(GridMismatchError):
            fidelity_area(lif, mif)


class TestBootstrap:
    """Percentile bootstrap of the fidelity area"""

    def test_identical_samples_collapse_the_interval(self):
        lif = _curve([[1.0, 1.0, 1.0]] * 5)
        mif = _curve([[1.0, 0.5, 0.0]] * 5)

        result = bootstrap_ci(lif, mif, resamples=50, seed=1)

        assert result.A == pytest.approx(50.0)
        assert result.ci_low == pytest.approx(50.0)
        assert result.ci_high == pytest.approx(50.0)
        assert result.num_samples == 5

    def test_needs_two_samples(self):
        with pytest.raises(DataError, match="at least 2"):
            bootstrap_ci(_curve([[1.0, 1.0]]), _curve([[1.0, 0.0]]))

    def test_needs_paired_curves(self):
        with pytest.raises(GridMismatchError, match="paired"):
            bootstrap_ci(_curve([[1.0, 1.0]] * 3), _curve([[1.0, 0.0]] * 4))
        with pytest.raises(GridMismatchError, match="paired"):
            bootstrap_ci(_curve([[1.0, 1.0]] * 3), _curve([[1.0, 0.0]] * 3, ids=[5, 6, 7]))

    def test_needs_resamples(self):
        with pytest.raises(ValueError):
            bootstrap_ci(_curve([[1.0, 1.0]] * 3), _curve([[1.0, 0.0]] * 3), resamples=0)

    def test_reproducible_and_ordered(self, rng):
        lif = _curve(1.0 - rng.uniform(0, 0.3, size=(30, 6)))
        mif = _curve(1.0 - rng.uniform(0, 0.9, size=(30, 6)))

        first = bootstrap_ci(lif, mif, resamples=200, seed=4)
        second = bootstrap_ci(lif, mif, resamples=200, seed=4)
        other = bootstrap_ci(lif, mif, resamples=200, seed=5)

        assert first == second
        assert first.ci_low <= first.A <= first.ci_high
        assert (other.ci_low, other.ci_high) != (first.ci_low, first.ci_high)

    @pytest.mark.slow
    def test_interval_coverage(self):
        fractions = fraction_grid(10)
        true_area = 50.0
        covered = 0
        for trial in range(200):
            rng = np.random.default_rng(trial)
            slopes = rng.normal(1.0, 1.0, size=40)
            lif = _curve(np.ones((40, 11)), fractions)
            mif = _curve(1.0 - slopes[:, None] * fractions[None, :], fractions)
            result = bootstrap_ci(lif, mif, resamples=200, seed=1000 + trial)
            covered += result.ci_low <= true_area <= result.ci_high
        assert 0.88 <= covered / 200 <= 0.99


class TestEvaluateEstimator:
    """Paired curves and fidelity for one estimator"""

    def test_input_product_map_on_positive_linear_model(self, rng):
        weights = rng.uniform(0.1, 1.0, size=(4, 4, 1)).astype(np.float32)
        model = linear_model(weights, bias=0.5)
        images = rng.uniform(0.1, 1.0, size=(6, 4, 4, 1)).astype(np.float32)
        maps = [
            reduce(vanilla_gradient(model, x, 0, sample_id=k), Reduction.INPUT_PRODUCT_SUM, x, "vgx_sum")
            for k, x in enumerate(images)
        ]

        result = evaluate_estimator(
            model, images, maps, fraction_grid(8), 0.0, resamples=100, seed=2,
            metadata={"augmentation": "none"},
        )

        assert result.estimator == "vgx_sum"
        assert result.fidelity.estimator == "vgx_sum"
        assert result.fidelity.augmentation == "none"
        assert result.fidelity.A > 0
        assert np.all(result.lif.mean_normalized_logits >= result.mif.mean_normalized_logits - 1e-9)
        assert result.mif.mean_normalized_logits[0] == pytest.approx(1.0)
        assert result.mif.metadata["direction"] == "MIF"
        assert result.lif.metadata["direction"] == "LIF"
        assert result.lif.mean_normalized_logits[-1] == pytest.approx(result.mif.mean_normalized_logits[-1])
        assert result.excluded_ids == []

    def test_maps_must_match_images(self, rng):
        model = linear_model(np.ones((2, 2, 1)))
        images = np.ones((2, 2, 2, 1), dtype=np.float32)
        with pytest.raises(ValueError, match="maps"):
            evaluate_estimator(model, images, [_map(np.ones((2, 2)))], fraction_grid(4), 0.0)
