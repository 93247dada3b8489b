import numpy as np
from numpy.testing import assert_array_equal

from pscd.rng import derive_rng, derive_seed, make_rng


class TestStreams:
    def test_make_rng_reproducible(self):
        assert_array_equal(make_rng(5).random(10), make_rng(5).random(10))

    def test_philox(self):
        assert isinstance(make_rng(0).bit_generator, np.random.Philox)

    def test_named_streams_independent(self):
        a = derive_rng(0, "data").random(1000)
        b = derive_rng(0, "sampler").random(1000)
        assert not np.array_equal(a, b)
        assert abs(np.corrcoef(a, b)[0, 1]) < 0.1

    def test_named_stream_stable(self):
        assert_array_equal(derive_rng(3, "a", 1).random(4), derive_rng(3, "a", 1).random(4))
        assert not np.array_equal(derive_rng(3, "a", 1).random(4), derive_rng(3, "a", 2).random(4))

    def test_derive_seed(self):
        s = derive_seed(1, "x")
        assert s == derive_seed(1, "x")
        assert s != derive_seed(1, "y")
        assert 0 <= s < 2**63
