"""
Tests for truncated heatmaps, score statistics and the LIF score series
"""

import numpy as np
import pytest
from models import SaliencyMap2D, Signedness
from services.report_service import (
    check_percentile,
    lif_series_rows,
    score_statistics,
    truncate_heatmap,
)

pytestmark = pytest.mark.unit


@pytest.fixture
def scores(rng):
    return rng.normal(size=(100, 100))


class TestTruncateHeatmap:
    """Keep only the extreme scores on both sides"""

    def test_full_percentile_keeps_nothing(self, scores):
        assert not truncate_heatmap(scores, 100.0).any()

    def test_at_most_two_percent_per_side(self, scores):
        truncated = truncate_heatmap(scores, 98.0)

        assert 0 < (truncated > 0).mean() <= 0.02
        assert 0 < (truncated < 0).mean() <= 0.02

    def test_survivors_keep_their_sign(self, scores):
        truncated = truncate_heatmap(scores, 95.0)

        kept = truncated != 0
        assert np.all(np.sign(truncated[kept]) == np.sign(scores[kept]))

    def test_survivors_are_clipped(self, scores):
        truncated = truncate_heatmap(scores, 98.0)

        assert truncated.max() <= np.percentile(scores, 99.0) + 1e-12
        assert truncated.min() >= np.percentile(scores, 1.0) - 1e-12
        assert truncated.max() == pytest.approx(np.percentile(scores, 99.0))

    def test_unsigned_map_has_no_negative_survivors(self, scores):
        truncated = truncate_heatmap(np.abs(scores), 90.0)
        assert truncated.min() == 0.0
        assert (truncated > 0).any()

    @pytest.mark.parametrize("percentile", [50.0, 40.0, 100.5])
    def test_invalid_percentiles(self, percentile):
        with pytest.raises(ValueError, match="percentile"):
            check_percentile(percentile)

    def test_valid_percentile(self):
        assert check_percentile(98) == 98.0


class TestScoreStatistics:
    """Sign shares and quantiles of a map"""

    def test_shares(self):
        scores = np.array([[1.0, -1.0], [0.0, 2.0]])
        truncated = np.array([[0.0, -1.0], [0.0, 2.0]])

        stats = score_statistics(scores, truncated)

        assert stats["num_pixels"] == 4
        assert stats["positive_fraction"] == 0.5
        assert stats["negative_fraction"] == 0.25
        assert stats["zero_fraction"] == 0.25
        assert stats["kept_positive_share"] == 0.5
        assert stats["kept_negative_share"] == 1.0
        assert stats["positive_quantiles"]["q50"] == pytest.approx(1.5)

    def test_empty_side_reports_zero_quantiles(self):
        stats = score_statistics(np.ones((2, 2)), np.zeros((2, 2)))
        assert stats["negative_quantiles"] == {"q10": 0.0, "q50": 0.0, "q90": 0.0}


class TestLifSeries:
    """Scores in LIF order next to the normalized logit"""

    def test_rows_follow_least_important_first(self, rng):
        grid = rng.normal(size=(4, 5)).astype(np.float32)
        saliency = SaliencyMap2D(
            scores=grid, signedness=Signedness.SIGNED, reduction=None, estimator="sgx_sum"
        )
        fractions = np.array([0.0, 1.0])

        rows = lif_series_rows(saliency, fractions, np.array([1.0, 0.5]))

        assert len(rows) == 20
        assert [row["rank"] for row in rows] == list(range(20))
        scores = [row["score"] for row in rows]
        assert scores == sorted(scores)
        for row in rows:
            assert row["score"] == pytest.approx(float(grid[row["row"], row["col"]]))
            assert row["normalized_logit"] == pytest.approx(1.0 - 0.5 * row["masked_fraction"])
        assert rows[-1]["masked_fraction"] == 1.0
        assert rows[0]["masked_fraction"] == pytest.approx(0.05)
