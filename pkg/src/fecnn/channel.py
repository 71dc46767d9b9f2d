"""Seeded bit-error injection over per-layer bit matrices.

Bit ``(w, j)`` of layer ``l`` in trial ``t`` draws its uniform from the
counter-based stream keyed by ``derive_seed(seed, t, l)`` at flat index
``w * m + j``. Results are therefore independent of evaluation order and of
which other layers are touched.
"""

from dataclasses import dataclass, replace

import numpy as np

from . import kernels

DIRECTIONS = {
    "symmetric": kernels.SYMMETRIC,
    "zero_to_one_only": kernels.ZERO_TO_ONE,
    "one_to_zero_only": kernels.ONE_TO_ZERO,
}


@dataclass(frozen=True)
class ChannelSpec:
    p: float
    direction: str = "symmetric"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"flip probability must lie in [0, 1], got {self.p}")
        if self.direction not in DIRECTIONS:
            raise ValueError(f"unknown direction {self.direction!r}")

    def for_trial(self, t):
        """Channel for Monte-Carlo trial ``t``: seed becomes ``derive_seed(seed, t)``."""
        return replace(self, seed=trial_seed(self.seed, t))


def trial_seed(seed, t):
    return kernels.derive_seed(seed, t)


def layer_key(seed, layer):
    return kernels.derive_seed(seed, layer)


def inject(bits, protected, chan):
    """Flip each unprotected bit with probability ``chan.p``.

    ``bits`` and ``protected`` are lists of equally shaped uint8 matrices.
    With a directional channel only bits currently holding the source value
    can flip.
    """
    if len(bits) != len(protected):
        raise ValueError("bits and protection masks cover different layer counts")
    direction = DIRECTIONS[chan.direction]
    out = []
    for i, (b, m) in enumerate(zip(bits, protected)):
        if b.shape != m.shape:
            raise ValueError(f"layer {i}: bits {b.shape} vs protection {m.shape}")
        if chan.p == 0.0 or b.size == 0:
            out.append(b.copy())
            continue
        out.append(kernels.flip_bits(b, m, layer_key(chan.seed, i), chan.p, direction))
    return out


def empirical_flip_rate(before, after, protected):
    """Fraction of unprotected bits whose value changed."""
    changed = 0
    total = 0
    for b, a, m in zip(before, after, protected):
        free = np.asarray(m) == 0
        changed += int(np.count_nonzero((np.asarray(b) != np.asarray(a)) & free))
        total += int(np.count_nonzero(free))
    return changed / total if total else 0.0


def unprotected(bits):
    return [np.zeros_like(b, dtype=np.uint8) for b in bits]
