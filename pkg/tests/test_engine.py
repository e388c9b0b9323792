import numpy as np
import pytest

from confperm.engine import PermutationRunner, streams_for
from confperm.errors import ContractError, IterationError, UndefinedMetricError
from confperm.shuffle import RngStream


def draw(stream, gen):
    return gen.random()


class TestPermutationRunner:
    def test_stream_order(self):
        values = PermutationRunner().run(draw, streams_for(3, 5))
        expected = [RngStream(3, i).generator().random() for i in range(5)]
        np.testing.assert_array_equal(values, expected)

    def test_thread_count_does_not_change_results(self):
        streams = streams_for(8, 40)
        single = PermutationRunner(threads=1).run(draw, streams)
        multi = PermutationRunner(threads=4).run(draw, streams)
        np.testing.assert_array_equal(single, multi)

    def test_redraws_undefined_iterations(self):
        attempts = []

        def flaky(stream, gen):
            attempts.append(stream.stream_index)
            if len(attempts) < 3:
                raise UndefinedMetricError("single class")
            return 1.0

        assert PermutationRunner().run(flaky, [RngStream(0, 0)]).tolist() == [1.0]
        assert attempts == [0, 0, 0]

    def test_redraw_limit(self):
        def always(stream, gen):
            raise UndefinedMetricError("single class")

        with pytest.raises(IterationError) as info:
            PermutationRunner(max_redraws=3).run(always, streams_for(0, 2))
        assert info.value.index == 0

    def test_failure_names_the_iteration(self):
        def job(stream, gen):
            if stream.stream_index == 2:
                raise ContractError("bad shapes")
            return 0.0

        with pytest.raises(IterationError) as info:
            PermutationRunner().run(job, streams_for(0, 4))
        assert info.value.index == 2
        assert "bad shapes" in info.value.message

    def test_pair_indexes(self):
        def job(stream, gen):
            if stream.stream_index == (1, 0):
                raise ValueError("boom")
            return 0.0

        with pytest.raises(IterationError) as info:
            PermutationRunner().run(job, [RngStream(0, (i, j)) for i in range(2) for j in range(2)])
        assert info.value.index == (1, 0)

    def test_non_finite(self):
        with pytest.raises(IterationError):
            PermutationRunner().run(lambda stream, gen: float("nan"), streams_for(0, 1))

    def test_threads_must_be_positive(self):
        with pytest.raises(ValueError):
            PermutationRunner(threads=0)
