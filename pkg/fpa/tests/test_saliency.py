"""
Saliency Tests - Closed forms on linear models, estimator identities and reductions
"""

import numpy as np
import pytest
from exceptions import DoubleMultiplicationError
from models import (
    DEFAULT_ESTIMATORS,
    BaseEstimator,
    EstimatorConfig,
    Reduction,
    SaliencyMap3D,
    Signedness,
)
from pydantic import ValidationError
from services.model_service import logits_array
from services.saliency_service import (
    RANDOM_STREAM,
    SG_STREAM,
    compute_saliency,
    input_gradients,
    integrated_gradients,
    predicted_class,
    random_saliency,
    reduce,
    sample_rng,
    smoothgrad,
    squared_smoothgrad,
    vanilla_gradient,
)

from tests.toy_models import identity_classifier, linear_model

pytestmark = pytest.mark.unit

WEIGHTS = np.array(
    [[[1.0, -2.0], [0.5, 0.0]], [[-1.5, 3.0], [0.0, 0.25]], [[2.0, -0.5], [1.0, -1.0]]],
    dtype=np.float32,
)  # 3 x 2 x 2


@pytest.fixture
def linear():
    return linear_model(WEIGHTS, bias=0.3)


@pytest.fixture
def image(rng):
    return rng.uniform(-1.0, 1.0, size=WEIGHTS.shape).astype(np.float32)


# =============================================================================
# Vanilla gradient
# =============================================================================


class TestVanillaGradient:
    """Gradient of the selected logit"""

    def test_linear_gradient_is_the_weights(self, linear, image):
        result = vanilla_gradient(linear, image, 0, sample_id=4)

        np.testing.assert_allclose(result.scores, WEIGHTS, rtol=1e-6)
        assert result.estimator == BaseEstimator.VG
        assert result.sample_id == 4

    def test_zero_weight_inputs_get_no_credit(self, linear, image):
        scores = vanilla_gradient(linear, image, 0).scores
        assert np.all(scores[WEIGHTS == 0.0] == 0.0)

    def test_batched_rows_do_not_interact(self, toy_cnn, synthetic_test):
        images = synthetic_test.images[:3]
        classes = [0, 4, 9]

        batched = input_gradients(toy_cnn, images, classes)

        for k in range(3):
            single = input_gradients(toy_cnn, images[k : k + 1], [classes[k]])[0]
            np.testing.assert_allclose(batched[k], single, rtol=1e-5, atol=1e-7)

    def test_predicted_class_is_argmax(self):
        model = identity_classifier(3)
        x = np.array([0.1, 0.9, 0.3], dtype=np.float32).reshape(1, 1, 3)
        assert predicted_class(model, x) == 1


# =============================================================================
# Integrated gradients
# =============================================================================


class TestIntegratedGradients:
    """Right Riemann path integral"""

    @pytest.mark.parametrize("steps", [1, 7, 200])
    def test_linear_closed_form(self, linear, image, steps):
        baseline = np.zeros_like(image)

        result = integrated_gradients(linear, image, 0, EstimatorConfig(ig_steps=steps), baseline)

        np.testing.assert_allclose(result.scores, image * WEIGHTS, rtol=1e-5, atol=1e-7)

    def test_linear_with_shifted_baseline(self, linear, image):
        baseline = np.full_like(image, -1.0)

        result = integrated_gradients(linear, image, 0, EstimatorConfig(ig_steps=5), baseline)

        np.testing.assert_allclose(result.scores, (image + 1.0) * WEIGHTS, rtol=1e-5, atol=1e-7)

    def test_null_path(self, toy_cnn, synthetic_test):
        x = synthetic_test.images[0]

        result = integrated_gradients(toy_cnn, x, 0, EstimatorConfig(ig_steps=10), x.copy())

        assert np.all(result.scores == 0.0)

    def test_zero_steps_rejected(self, linear, image):
        with pytest.raises(ValidationError):
            EstimatorConfig(ig_steps=0)
        unchecked = EstimatorConfig.model_construct(ig_steps=0, sg_samples=1, sg_sigma=0.2)
        with pytest.raises(ValueError, match="ig_steps"):
            integrated_gradients(linear, image, 0, unchecked, np.zeros_like(image))

    def test_baseline_shape_checked(self, linear, image):
        with pytest.raises(ValueError, match="baseline shape"):
            integrated_gradients(linear, image, 0, EstimatorConfig(), np.zeros((3, 2, 1)))

    @pytest.mark.integration
    def test_completeness_on_trained_cnn(self, toy_cnn, synthetic_train, synthetic_test):
        baseline = synthetic_train.normalization.black_image(synthetic_test.image_shape)
        candidates = synthetic_test.images[:10]
        classes = logits_array(toy_cnn, candidates).argmax(axis=1)
        start = logits_array(toy_cnn, baseline[None])[0]
        end = logits_array(toy_cnn, candidates)
        deltas = end[np.arange(10), classes] - start[classes]

        gaps = {50: [], 200: [], 400: []}
        for i in range(10):
            for steps in gaps:
                result = integrated_gradients(
                    toy_cnn, candidates[i], int(classes[i]), EstimatorConfig(ig_steps=steps), baseline
                )
                attributed = result.scores.astype(np.float64).sum()
                gaps[steps].append(abs(attributed - deltas[i]) / abs(deltas[i]))

        assert max(gaps[200]) < 0.005
        for fine, coarse in zip(gaps[400], gaps[50]):
            assert fine <= coarse + 1e-12


# =============================================================================
# SmoothGrad and its squared variant
# =============================================================================


class TestSmoothGrad:
    """Noise-averaged gradients"""

    def test_zero_noise_equals_vanilla_gradient(self, toy_cnn, synthetic_test):
        x = synthetic_test.images[1]
        cfg = EstimatorConfig(sg_samples=3, sg_sigma=0.0)

        smooth = smoothgrad(toy_cnn, x, 2, cfg, np.random.default_rng(0))
        vanilla = vanilla_gradient(toy_cnn, x, 2)

        np.testing.assert_array_equal(smooth.scores, vanilla.scores)

    def test_linear_model_ignores_noise(self, linear, image):
        cfg = EstimatorConfig(sg_samples=6, sg_sigma=0.5)

        result = smoothgrad(linear, image, 0, cfg, np.random.default_rng(0))

        np.testing.assert_allclose(result.scores, WEIGHTS, rtol=1e-6)

    def test_single_draw_replays_the_noise(self, toy_cnn, synthetic_test):
        x = synthetic_test.images[2]
        cfg = EstimatorConfig(sg_samples=1, sg_sigma=0.3)

        result = smoothgrad(toy_cnn, x, 5, cfg, np.random.default_rng(21))

        noise = np.random.default_rng(21).normal(0.0, 0.3, size=(1,) + x.shape)[0]
        noisy = (x.astype(np.float64) + noise).astype(np.float32)
        np.testing.assert_array_equal(result.scores, vanilla_gradient(toy_cnn, noisy, 5).scores)

    def test_squared_variant_is_non_negative(self, toy_cnn, synthetic_test):
        cfg = EstimatorConfig(sg_samples=4, sg_sigma=0.2)
        result = squared_smoothgrad(toy_cnn, synthetic_test.images[3], 1, cfg, np.random.default_rng(3))
        assert result.scores.min() >= 0.0
        assert result.estimator == BaseEstimator.SQ_SG

    def test_squared_variant_without_noise(self, toy_cnn, synthetic_test):
        x = synthetic_test.images[4]
        cfg = EstimatorConfig(sg_samples=2, sg_sigma=0.0)

        squared = squared_smoothgrad(toy_cnn, x, 7, cfg, np.random.default_rng(0))
        vanilla = vanilla_gradient(toy_cnn, x, 7).scores.astype(np.float64)

        np.testing.assert_allclose(squared.scores, vanilla**2, rtol=1e-6, atol=1e-12)

    def test_squared_variant_on_linear_model(self, linear, image):
        cfg = EstimatorConfig(sg_samples=5, sg_sigma=0.4)
        result = squared_smoothgrad(linear, image, 0, cfg, np.random.default_rng(1))
        np.testing.assert_allclose(result.scores, WEIGHTS.astype(np.float64) ** 2, rtol=1e-6)


# =============================================================================
# Channel reductions
# =============================================================================


def _map(values, estimator=BaseEstimator.VG):
    scores = np.asarray(values, dtype=np.float32).reshape(1, 1, -1)
    return SaliencyMap3D(scores=scores, estimator=estimator, class_index=0, sample_id=0)


class TestReduce:
    """Collapsing the channel axis"""

    def test_abs_sum(self):
        result = reduce(_map([1.0, -2.0]), Reduction.ABS_SUM)
        assert result.scores[0, 0] == pytest.approx(3.0)
        assert result.signedness == Signedness.UNSIGNED

    def test_input_product_sum(self):
        x = np.array([0.5, 0.5], dtype=np.float32).reshape(1, 1, 2)

        result = reduce(_map([1.0, -2.0]), Reduction.INPUT_PRODUCT_SUM, x)

        assert result.scores[0, 0] == pytest.approx(-0.5)
        assert result.signedness == Signedness.SIGNED

    def test_input_product_abs_sum(self):
        x = np.array([0.5, 0.5], dtype=np.float32).reshape(1, 1, 2)
        result = reduce(_map([1.0, -2.0]), Reduction.INPUT_PRODUCT_ABS_SUM, x)
        assert result.scores[0, 0] == pytest.approx(1.5)

    def test_plain_sum(self):
        result = reduce(_map([1.0, -2.0], BaseEstimator.IG), Reduction.PLAIN_SUM)
        assert result.scores[0, 0] == pytest.approx(-1.0)
        assert result.signedness == Signedness.SIGNED

    def test_zero_input_zeroes_input_products(self):
        x = np.zeros((1, 1, 2), dtype=np.float32)
        for mode in (Reduction.INPUT_PRODUCT_SUM, Reduction.INPUT_PRODUCT_ABS_SUM):
            assert reduce(_map([4.0, -3.0]), mode, x).scores[0, 0] == 0.0

    def test_integrated_gradients_are_not_multiplied_again(self):
        x = np.ones((1, 1, 2), dtype=np.float32)
        with pytest.raises(DoubleMultiplicationError):
            reduce(_map([1.0, 1.0], BaseEstimator.IG), Reduction.INPUT_PRODUCT_SUM, x)

    def test_input_product_needs_input(self):
        with pytest.raises(ValueError, match="needs the input"):
            reduce(_map([1.0, 1.0]), Reduction.INPUT_PRODUCT_SUM)

    def test_input_shape_checked(self):
        with pytest.raises(ValueError, match="input shape"):
            reduce(_map([1.0, 1.0]), Reduction.INPUT_PRODUCT_SUM, np.ones((1, 1, 3)))

    def test_squared_plain_sum_is_unsigned(self):
        result = reduce(_map([1.0, 2.0], BaseEstimator.SQ_SG), Reduction.PLAIN_SUM)
        assert result.signedness == Signedness.UNSIGNED


# =============================================================================
# Random baseline and the combined entry point
# =============================================================================


class TestRandomSaliency:
    """Uniform random importance maps"""

    def test_uniform_statistics(self):
        result = random_saliency(100, 100, np.random.default_rng(0))

        assert result.scores.shape == (100, 100)
        assert -1.0 <= result.scores.min() and result.scores.max() < 1.0
        assert abs(result.scores.mean()) < 0.02
        assert abs(result.scores.std() - 1.0 / np.sqrt(3.0)) < 0.01
        assert result.signedness == Signedness.SIGNED
        assert result.reduction is None


class TestComputeSaliency:
    """All estimator combinations for one sample"""

    def test_all_combinations(self, linear, image):
        cfg = EstimatorConfig(ig_steps=4, sg_samples=2)

        maps = compute_saliency(
            linear, image, DEFAULT_ESTIMATORS, cfg, np.zeros_like(image), seed=3, sample_id=9
        )

        assert list(maps) == DEFAULT_ESTIMATORS
        signed = {name for name, m in maps.items() if m.signedness == Signedness.SIGNED}
        assert signed == {"ig_sum", "vgx_sum", "sgx_sum", "random"}
        for name, saliency_map in maps.items():
            assert saliency_map.scores.shape == (3, 2)
            assert saliency_map.estimator == name
            assert saliency_map.sample_id == 9
            assert saliency_map.class_index == 0

    def test_smoothgrad_variants_share_draws(self, toy_cnn, synthetic_test):
        x = synthetic_test.images[5]
        cfg = EstimatorConfig(sg_samples=3, sg_sigma=0.2)
        baseline = np.full_like(x, -1.0)

        maps = compute_saliency(toy_cnn, x, ["sgx_sum", "sq-sg_sum"], cfg, baseline, seed=8, sample_id=5)

        c = maps["sgx_sum"].class_index
        sg = smoothgrad(toy_cnn, x, c, cfg, sample_rng(8, 5, SG_STREAM))
        sq = squared_smoothgrad(toy_cnn, x, c, cfg, sample_rng(8, 5, SG_STREAM))
        np.testing.assert_array_equal(
            maps["sgx_sum"].scores, reduce(sg, Reduction.INPUT_PRODUCT_SUM, x).scores
        )
        np.testing.assert_array_equal(maps["sq-sg_sum"].scores, reduce(sq, Reduction.PLAIN_SUM).scores)

    def test_random_map_follows_the_sample_stream(self, linear, image):
        baseline = np.zeros_like(image)
        cfg = EstimatorConfig()

        first = compute_saliency(linear, image, ["random"], cfg, baseline, seed=3, sample_id=1)
        again = compute_saliency(linear, image, ["random"], cfg, baseline, seed=3, sample_id=1)
        other = compute_saliency(linear, image, ["random"], cfg, baseline, seed=3, sample_id=2)

        expected = random_saliency(3, 2, sample_rng(3, 1, RANDOM_STREAM)).scores
        np.testing.assert_array_equal(first["random"].scores, expected)
        np.testing.assert_array_equal(again["random"].scores, expected)
        assert not np.array_equal(other["random"].scores, expected)

    def test_unknown_estimator(self, linear, image):
        with pytest.raises(KeyError, match="nope"):
            compute_saliency(
                linear, image, ["ig_sum", "nope"], EstimatorConfig(), np.zeros_like(image), 0, 0
            )
