import numpy as np
from hypothesis import given
from hypothesis import strategies as st

from mpal import rng


def test_first_splitmix_output_for_seed_zero():
    # reference value of the first SplitMix64 output with state 0
    assert rng.split(0, 0) == 0xE220A8397B1DCDAF


def test_split_matches_a_sequential_generator():
    state = 12345
    outputs = []
    for _ in range(5):
        state = (state + rng.GOLDEN) & rng.MASK64
        outputs.append(rng.mix64(state))
    assert outputs == [rng.split(12345, i) for i in range(5)]


def test_unit_interval():
    assert rng.unit(0) == 0.0
    assert rng.unit(rng.MASK64) < 1.0


@given(st.integers(0, 2**64 - 1), st.lists(st.integers(-10**6, 10**6), min_size=1, max_size=30))
def test_vectorised_matches_scalar(seed, sites):
    vec = rng.site_uniforms(seed, sites)
    assert [rng.site_uniform(seed, s) for s in sites] == vec.tolist()


def test_site_value_independent_of_request_shape():
    a = rng.site_uniforms(9, [3, -2, 17])
    b = rng.site_uniforms(9, list(range(-5, 20)))
    assert a[0] == b[3 + 5] and a[1] == b[-2 + 5] and a[2] == b[17 + 5]


def test_seeds_decorrelate():
    x = rng.site_uniforms(1, np.arange(20000))
    y = rng.site_uniforms(2, np.arange(20000))
    assert abs(np.corrcoef(x, y)[0, 1]) < 0.03
