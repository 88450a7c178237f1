import math

import pytest
from hypothesis import given, settings, strategies as st

from sparseplan import (
    ClusterSpec,
    GraphSpec,
    transform_ps,
)
from sparseplan.simulate import ComputeProfile
from sparseplan.tuning import (
    CostModelParams,
    TuningError,
    fit_theta,
    optimal_p,
    predict_time,
    sample_search,
    tune,
    tune_evaluator,
)
from conftest import dense_var, sparse_var


def model(theta0, theta1, theta2):
    """A CostModelParams with a sampled range wide enough to never clamp."""
    return CostModelParams(theta0, theta1, theta2, samples=((1, 0.0), (1 << 20, 0.0), (4, 0.0)))


class TestPredictTime:
    def test_hand_computed(self):
        params = model(10.0, 1000.0, 0.1)
        assert predict_time(params, 8) == pytest.approx(10 + 125 + 0.8)
        assert predict_time(params, 100) == pytest.approx(10 + 10 + 10)

    def test_invalid_p(self):
        with pytest.raises(TuningError):
            predict_time(model(1, 1, 1), 0)

    def test_negative_slopes_rejected(self):
        with pytest.raises(TuningError):
            CostModelParams(1.0, -1.0, 0.0)
        with pytest.raises(TuningError):
            CostModelParams(1.0, 0.0, -1.0)


class TestFitTheta:
    def test_exact_recovery(self):
        theta = (10.0, 1000.0, 0.1)
        samples = [(p, theta[0] + theta[1] / p + theta[2] * p) for p in (1, 2, 4, 8, 16, 64)]
        params = fit_theta(samples)
        assert params.theta0 == pytest.approx(theta[0], rel=1e-6)
        assert params.theta1 == pytest.approx(theta[1], rel=1e-6)
        assert params.theta2 == pytest.approx(theta[2], rel=1e-6)

    def test_constant_data_gives_flat_model(self):
        params = fit_theta([(1, 50.0), (2, 50.0), (4, 50.0), (8, 50.0)])
        assert params.theta0 == pytest.approx(50.0)
        assert params.theta1 == pytest.approx(0.0, abs=1e-9)
        assert params.theta2 == pytest.approx(0.0, abs=1e-9)

    def test_decreasing_data_clamps_theta2(self):
        # Purely amortizing cost: t = 100/P.  theta2 must not go negative.
        samples = [(p, 100.0 / p) for p in (1, 2, 4, 8)]
        params = fit_theta(samples)
        assert params.theta2 >= 0
        assert params.theta1 == pytest.approx(100.0, rel=1e-6)

    def test_increasing_data_clamps_theta1(self):
        samples = [(p, 5.0 * p) for p in (1, 2, 4, 8)]
        params = fit_theta(samples)
        assert params.theta1 >= 0
        assert params.theta2 == pytest.approx(5.0, rel=1e-6)

    def test_too_few_distinct_counts(self):
        with pytest.raises(TuningError, match="3 distinct"):
            fit_theta([(4, 1.0), (4, 1.1), (8, 2.0)])

    @given(
        st.floats(0.0, 1e4),
        st.floats(0.0, 1e6),
        st.floats(0.0, 1e2),
        st.floats(0.1, 10.0),
    )
    @settings(max_examples=50, deadline=None)
    def test_scale_invariance(self, t0, t1, t2, scale):
        ps = (1, 2, 4, 8, 16, 32)
        samples = [(p, t0 + t1 / p + t2 * p) for p in ps]
        scaled = [(p, t * scale) for p, t in samples]
        a = fit_theta(samples)
        b = fit_theta(scaled)
        for p in ps:
            assert predict_time(b, p) == pytest.approx(predict_time(a, p) * scale, rel=1e-6, abs=1e-6)


class TestOptimalP:
    def test_closed_form_root(self):
        # sqrt(1000 / 0.1) = 100 exactly.
        assert optimal_p(model(10.0, 1000.0, 0.1)) == 100

    def test_rounds_by_predicted_time(self):
        # root = sqrt(2) ~ 1.414; t(1) = 1 + 2 + 1 = 4, t(2) = 1 + 1 + 2 = 4 -> tie, smaller P.
        assert optimal_p(model(1.0, 2.0, 1.0)) == 1

    def test_clamps_to_sampled_range(self):
        params = CostModelParams(10.0, 1000.0, 0.1, samples=((4, 0.0), (8, 0.0), (16, 0.0)))
        assert optimal_p(params) == 16
        params = CostModelParams(10.0, 1000.0, 0.1, samples=((256, 0.0), (512, 0.0), (1024, 0.0)))
        assert optimal_p(params) == 256

    def test_degenerate_slopes(self):
        params = CostModelParams(1.0, 0.0, 1.0, samples=((2, 0.0), (4, 0.0), (8, 0.0)))
        assert optimal_p(params) == 2  # monotone increasing -> smallest sampled P
        params = CostModelParams(1.0, 1.0, 0.0, samples=((2, 0.0), (4, 0.0), (8, 0.0)))
        assert optimal_p(params) == 8  # monotone decreasing -> largest sampled P

    @given(st.floats(0, 100), st.floats(1e-3, 1e6), st.floats(1e-3, 1e2))
    @settings(max_examples=60, deadline=None)
    def test_never_extrapolates(self, t0, t1, t2):
        params = CostModelParams(t0, t1, t2, samples=((4, 0.0), (16, 0.0), (64, 0.0)))
        assert 4 <= optimal_p(params) <= 64


class TestSampleSearch:
    def test_convex_evaluator_brackets_minimum(self):
        calls = []

        def evaluator(p):
            calls.append(p)
            return 10 + 1000 / p + 0.1 * p

        samples = sample_search(evaluator, start_p=8)
        ps = [p for p, _ in samples]
        # Doubling from 8: 16, 32, 64 improve by >10%; 128 does not (kept).
        # Halving: 4 is worse (kept).
        assert ps == [4, 8, 16, 32, 64, 128]
        assert sorted(calls) == ps  # each P evaluated exactly once

    def test_constant_evaluator_three_probes(self):
        samples = sample_search(lambda p: 42.0, start_p=8)
        assert [p for p, _ in samples] == [4, 8, 16]

    def test_strictly_increasing_halves_to_one(self):
        samples = sample_search(lambda p: float(p), start_p=8)
        assert [p for p, _ in samples] == [1, 2, 4, 8, 16]

    def test_max_p_caps_doubling(self):
        samples = sample_search(lambda p: 1000.0 / p, start_p=8, max_p=32)
        assert max(p for p, _ in samples) == 32

    def test_zero_threshold_accepts_any_improvement(self):
        samples = sample_search(lambda p: 100.0 - 0.001 * p, start_p=1, threshold=0.0, max_p=8)
        assert [p for p, _ in samples] == [1, 2, 4, 8]

    def test_failing_evaluator_wrapped(self):
        def bad(p):
            raise RuntimeError("boom")

        with pytest.raises(TuningError, match="P=8"):
            sample_search(bad, start_p=8)

    def test_invalid_arguments(self):
        with pytest.raises(TuningError):
            sample_search(lambda p: 1.0, start_p=0)
        with pytest.raises(TuningError):
            sample_search(lambda p: 1.0, start_p=4, threshold=1.0)

    @given(st.integers(1, 1024))
    @settings(max_examples=40, deadline=None)
    def test_search_economy(self, start_p):
        count = [0]

        def evaluator(p):
            count[0] += 1
            return 10 + 1000 / p + 0.1 * p

        samples = sample_search(evaluator, start_p=start_p)
        # Doubling and halving each visit O(log P) points once.
        assert count[0] == len(samples)
        assert count[0] <= 2 * math.ceil(math.log2(max(start_p, 2))) + 12


class TestTuneEvaluator:
    def test_recovers_known_minimum(self):
        result = tune_evaluator(lambda p: 10 + 1000 / p + 0.1 * p, start_p=8)
        assert abs(result.best_p - 100) <= 1
        assert result.samples_taken <= 12
        assert result.params.theta0 == pytest.approx(10.0, rel=1e-6)
        assert result.params.theta1 == pytest.approx(1000.0, rel=1e-6)
        assert result.params.theta2 == pytest.approx(0.1, rel=1e-6)
        assert result.predicted_time == pytest.approx(30.0, rel=1e-6)

    def test_to_dict_round_trips_fields(self):
        result = tune_evaluator(lambda p: 10 + 1000 / p + 0.1 * p, start_p=8)
        doc = result.to_dict()
        assert doc["best_p"] == result.best_p
        assert doc["samples_taken"] == result.samples_taken
        assert len(doc["theta"]) == 3


class TestTune:
    def test_end_to_end_on_sparse_graph(self, lm_graph, cluster8x6):
        profile = ComputeProfile(lm_graph.compute_us_per_gpu, 25.0, 20.0)

        def builder(p):
            return transform_ps(lm_graph, cluster8x6, partitions={"embedding": p})

        result = tune(lm_graph, cluster8x6, builder, profile)
        lo, hi = result.params.sampled_range
        assert lo <= result.best_p <= hi
        assert result.best_p >= 1

    def test_no_partitionable_variable(self, resnet_graph, cluster8x6):
        with pytest.raises(TuningError, match="partitionable"):
            tune(
                resnet_graph,
                cluster8x6,
                lambda p: transform_ps(resnet_graph, cluster8x6),
                ComputeProfile(),
            )

    def test_tiny_variable_caps_max_p(self, cluster8x6):
        g = GraphSpec("g", (sparse_var("e", elements=3, alpha=0.5),), 0.0)

        def builder(p):
            return transform_ps(g, cluster8x6, partitions={"e": p})

        result = tune(g, cluster8x6, builder, ComputeProfile())
        assert result.best_p <= 3
