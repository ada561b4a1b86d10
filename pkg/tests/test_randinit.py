import hashlib
import os

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sltgnn.errors import InputError
from sltgnn.randinit import (
    InitMethod,
    InitSpec,
    generate_weights,
    kaiming_normal,
    kaiming_uniform_scores,
    layer_seed,
    seed_from_hash,
    signed_kaiming_constant,
)

SC, KN = InitMethod.SIGNED_KAIMING_CONSTANT, InitMethod.KAIMING_NORMAL


def test_sc_unit_magnitude():
    w = signed_kaiming_constant(InitSpec(SC, 2, 0.0, 1), 4, 5)
    assert set(np.unique(w)) <= {-1.0, 1.0}


def test_sc_scaled_by_base_sparsity():
    w = signed_kaiming_constant(InitSpec(SC, 2, 0.75, 1), 4, 5)
    np.testing.assert_array_equal(np.abs(w), 2.0)


def test_sc_signs_balanced():
    w = signed_kaiming_constant(InitSpec(SC, 8, 0.0, 11), 100, 100)
    assert abs(np.sign(w).mean()) < 0.05


def test_kn_std():
    w = kaiming_normal(InitSpec(KN, 2, 0.0, 5), 100, 100)
    assert abs(w.std() - 1.0) < 0.05


def test_kn_std_scales_with_fan_in():
    a = kaiming_normal(InitSpec(KN, 2, 0.0, 5), 100, 100).std()
    b = kaiming_normal(InitSpec(KN, 200, 0.0, 6), 100, 100).std()
    assert abs(b / a - 0.1) < 0.01


def test_kn_determinism():
    spec = InitSpec(KN, 3, 0.2, 99)
    np.testing.assert_array_equal(kaiming_normal(spec, 7, 3), kaiming_normal(spec, 7, 3))


def test_method_mismatch():
    with pytest.raises(InputError):
        kaiming_normal(InitSpec(SC, 2, 0.0, 1), 2, 2)
    with pytest.raises(InputError):
        signed_kaiming_constant(InitSpec(KN, 2, 0.0, 1), 2, 2)


def test_spec_invariants():
    with pytest.raises(InputError):
        InitSpec(SC, 0, 0.0, 1)
    with pytest.raises(InputError):
        InitSpec(SC, 1, 1.0, 1)
    with pytest.raises(InputError):
        InitSpec(SC, 1, 0.0, 2**64)


def test_scores_bounds_and_mean():
    s = kaiming_uniform_scores(3, 100, 100, fan_in=6)
    assert s.min() >= -1.0 and s.max() <= 1.0
    assert abs(s.mean()) < 0.05
    np.testing.assert_array_equal(s, kaiming_uniform_scores(3, 100, 100, fan_in=6))


def test_scores_no_exact_zeros():
    assert np.count_nonzero(kaiming_uniform_scores(4, 300, 300, fan_in=3)) == 90000


def test_seed_from_hash_empty_digest():
    assert seed_from_hash(b"") == int.from_bytes(hashlib.sha256(b"").digest()[:8], "big")
    assert seed_from_hash(b"") == 0xE3B0C44298FC1C14


def test_seed_from_hash_no_collisions():
    rng = np.random.default_rng(0)
    blobs = {rng.bytes(int(rng.integers(1, 40))) for _ in range(1000)}
    assert len({seed_from_hash(b) for b in blobs}) == len(blobs)
    blob = os.urandom(16)
    assert seed_from_hash(blob) == seed_from_hash(blob)


def test_layer_seeds_independent():
    seeds = {layer_seed(0, i, role) for i in range(20) for role in ("weight", "score")}
    assert len(seeds) == 40


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([SC, KN]), st.integers(1, 50), st.floats(0, 0.99), st.integers(0, 2**64 - 1),
       st.integers(1, 12), st.integers(1, 12))
def test_regeneration_is_bit_identical(method, fan_in, k1, seed, rows, cols):
    spec = InitSpec(method, fan_in, k1, seed)
    a = generate_weights(spec, rows, cols)
    b = generate_weights(spec, rows, cols)
    assert a.tobytes() == b.tobytes()
    assert not a.flags.writeable
    if method is SC:
        assert len(np.unique(np.abs(a))) == 1
