import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nervesynth import _jit, _kernels as K
from nervesynth import biomarkers as B
from nervesynth import datagen as G


@pytest.fixture
def backend():
    saved = _jit.backend()
    yield _jit.set_backend
    _jit.set_backend(saved)


def _both(fn, arr, set_backend):
    set_backend("numba")
    a = fn(arr)
    set_backend("numpy")
    b = fn(arr)
    return a, b


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), p=st.floats(0.2, 0.8))
def test_backends_agree_on_random_masks(seed, p):
    saved = _jit.backend()
    try:
        rng = np.random.default_rng(seed)
        m = (rng.uniform(size=(24, 24)) < p).astype(np.uint8)
        a, b = _both(K.zhang_suen, m, _jit.set_backend)
        np.testing.assert_array_equal(a, b)
        c, d = _both(K.cleanup, a, _jit.set_backend)
        np.testing.assert_array_equal(c, d)
    finally:
        _jit.set_backend(saved)


def test_backends_agree_on_generated(backend):
    mask = G.gen_mask(0, 17)[0]
    a, b = _both(B.skeletonize, mask, backend)
    np.testing.assert_array_equal(a, b)


def test_thinning_idempotent(backend):
    mask = G.gen_mask(1, 2)[0]
    for name in ("numba", "numpy"):
        backend(name)
        sk = B.skeletonize(mask)
        np.testing.assert_array_equal(B.skeletonize(sk), sk)


def test_neighbour_counts():
    m = np.zeros((3, 3), np.uint8)
    m[1, :] = 1
    n = K.neighbour_counts(m)
    assert n[1, 1] == 2 and n[1, 0] == 1


def test_ring_components_lut():
    assert K.RING_COMPONENTS[0] == 0
    assert K.RING_COMPONENTS[0b11111111] == 1
    assert K.RING_COMPONENTS[0b00010001] == 2  # north and south only


def test_unknown_backend():
    with pytest.raises(ValueError):
        _jit.set_backend("cuda")
