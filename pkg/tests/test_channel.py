import math

import numpy as np
import pytest

from fecnn import kernels
from fecnn.channel import ChannelSpec, empirical_flip_rate, inject, unprotected


def layers(rng, shapes=((100, 32), (37, 32))):
    return [rng.integers(0, 2, size=s, dtype=np.uint8) for s in shapes]


def test_p_zero_is_identity(rng):
    bits = layers(rng)
    out = inject(bits, unprotected(bits), ChannelSpec(0.0, seed=3))
    for a, b in zip(bits, out):
        np.testing.assert_array_equal(a, b)


def test_full_protection_blocks_certain_flips(rng):
    bits = layers(rng)
    prot = [np.ones_like(b) for b in bits]
    for a, b in zip(bits, inject(bits, prot, ChannelSpec(1.0))):
        np.testing.assert_array_equal(a, b)


def test_p_one_complements_everything(rng):
    bits = layers(rng)
    for a, b in zip(bits, inject(bits, unprotected(bits), ChannelSpec(1.0))):
        np.testing.assert_array_equal(b, 1 - a)


def test_deterministic_and_seed_dependent(rng):
    bits = layers(rng)
    prot = unprotected(bits)
    a = inject(bits, prot, ChannelSpec(0.2, seed=9))
    b = inject(bits, prot, ChannelSpec(0.2, seed=9))
    c = inject(bits, prot, ChannelSpec(0.2, seed=10))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_does_not_modify_input(rng):
    bits = layers(rng)
    snapshot = [b.copy() for b in bits]
    inject(bits, unprotected(bits), ChannelSpec(0.5, seed=1))
    assert all(np.array_equal(x, y) for x, y in zip(bits, snapshot))


def test_mask_respect(rng):
    bits = layers(rng)
    prot = [(rng.random(b.shape) < 0.5).astype(np.uint8) for b in bits]
    out = inject(bits, prot, ChannelSpec(0.7, seed=4))
    for b, p, o in zip(bits, prot, out):
        assert np.array_equal(o[p == 1], b[p == 1])
        assert np.any(o[p == 0] != b[p == 0])


def test_layer_draws_independent_of_other_layers(rng):
    bits = layers(rng)
    chan = ChannelSpec(0.3, seed=2)
    full = inject(bits, unprotected(bits), chan)
    # layer 1 alone still uses its own stream key
    key = kernels.derive_seed(chan.seed, 1)
    alone = kernels.flip_bits(bits[1], np.zeros_like(bits[1]), key, 0.3, kernels.SYMMETRIC)
    np.testing.assert_array_equal(full[1], alone)


@pytest.mark.parametrize("direction,forbidden", [("zero_to_one_only", (1, 0)), ("one_to_zero_only", (0, 1))])
def test_directional_modes_exhaustive(direction, forbidden):
    # every (bit value, protection) combination, many draws, p=1 and p=0.5
    bits = np.tile(np.array([[0, 1]], dtype=np.uint8), (5000, 16))
    for p in (0.5, 1.0):
        for seed in range(5):
            out = inject([bits], unprotected([bits]), ChannelSpec(p, direction, seed))[0]
            src, dst = forbidden
            assert not np.any((bits == src) & (out == dst))
            assert np.any(bits != out)


def test_flip_rate_calibration():
    n_rows = 1_000_000 // 32
    bits = np.zeros((n_rows, 32), dtype=np.uint8)
    out = inject([bits], unprotected([bits]), ChannelSpec(0.01, seed=77))
    rate = empirical_flip_rate([bits], out, unprotected([bits]))
    assert abs(rate - 0.01) <= 3 * math.sqrt(0.01 * 0.99 / bits.size)


def test_trial_seeds_differ():
    chan = ChannelSpec(0.1, seed=5)
    assert chan.for_trial(0).seed != chan.for_trial(1).seed
    assert chan.for_trial(3).seed == kernels.derive_seed(5, 3)


def test_empirical_flip_rate_examples(rng):
    bits = layers(rng)
    prot = unprotected(bits)
    assert empirical_flip_rate(bits, bits, prot) == 0.0
    assert empirical_flip_rate(bits, [1 - b for b in bits], prot) == 1.0


def test_validation(rng):
    with pytest.raises(ValueError):
        ChannelSpec(1.5)
    with pytest.raises(ValueError):
        ChannelSpec(0.1, "sideways")
    bits = layers(rng)
    with pytest.raises(ValueError):
        inject(bits, [np.zeros((3, 32), dtype=np.uint8)] * 2, ChannelSpec(0.1))
    with pytest.raises(ValueError):
        inject(bits, unprotected(bits)[:1], ChannelSpec(0.1))
