"""Redundancy accounting and probabilistic ECC protection.

Two code families are modelled:

* ``ideal`` - a capacity-achieving code for a BSC with flip probability p.
  Its overhead factor (n-k)/k is H(p) / (1 - H(p)) and decoding always
  succeeds.
* ``block`` - an (n, k) code correcting up to t errors per codeword. A
  codeword fails when more than t of its n bits flip; a failed block keeps
  the raw channel errors on its payload.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .channel import inject

_BLOCK_STREAM = 0xB10C


class DegenerateChannelError(ValueError):
    """Ideal-code overhead requested for a channel with zero capacity loss."""


@dataclass(frozen=True)
class EccSpec:
    kind: str = "ideal"
    n: int | None = None
    k: int | None = None
    t: int | None = None

    def __post_init__(self):
        if self.kind == "ideal":
            return
        if self.kind != "block":
            raise ValueError(f"unknown ECC kind {self.kind!r}")
        if self.n is None or self.k is None or self.t is None:
            raise ValueError("block codes need n, k and t")
        if not 0 < self.k < self.n:
            raise ValueError(f"need 0 < k < n, got n={self.n} k={self.k}")
        if self.t < 1:
            raise ValueError(f"block codes must correct at least one error, got t={self.t}")

    @classmethod
    def parse(cls, text):
        """``ideal`` or ``bch:<n>:<k>:<t>``."""
        text = text.strip()
        if text == "ideal":
            return cls()
        parts = text.split(":")
        if parts[0] in ("bch", "block") and len(parts) == 4:
            return cls("block", int(parts[1]), int(parts[2]), int(parts[3]))
        raise ValueError(f"unknown ECC {text!r}; expected ideal or bch:<n>:<k>:<t>")

    def __str__(self):
        return "ideal" if self.kind == "ideal" else f"bch:{self.n}:{self.k}:{self.t}"

    def overhead(self, p=None):
        """Parity bits per payload bit, (n-k)/k."""
        if self.kind == "block":
            return (self.n - self.k) / self.k
        if p is None:
            raise ValueError("ideal ECC overhead depends on the channel flip probability")
        h = binary_entropy(p)
        if h == 0.0:
            raise DegenerateChannelError(f"p={p} gives H(p)=0")
        if h >= 1.0:
            raise DegenerateChannelError(f"p={p} has zero capacity")
        return h / (1.0 - h)


@dataclass(frozen=True)
class RedundancyReport:
    k_total: int
    k_pro: int
    r: float


def binary_entropy(p):
    if p < 0.0 or p > 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if p == 0.0 or p == 1.0:
        return 0.0
    return -p * math.log2(p) - (1.0 - p) * math.log2(1.0 - p)


def ideal_rate(p):
    """Capacity 1 - H(p) of the binary symmetric channel."""
    if not 0.0 < p < 1.0:
        raise ValueError(f"ideal rate needs 0 < p < 1, got {p}")
    return 1.0 - binary_entropy(p)


def redundancy(masks, layer_sizes, m, ecc, p=None):
    """Parity overhead of protecting the masked bit positions of every layer.

    ``masks`` holds one length-m 0/1 vector per layer (or a plan with a
    ``masks`` attribute). Returns a :class:`RedundancyReport` with
    ``r = k_pro (n-k) / (k_total k)``.
    """
    masks = getattr(masks, "masks", masks)
    if len(masks) != len(layer_sizes):
        raise ValueError(f"{len(masks)} masks for {len(layer_sizes)} layers")
    k_pro = 0
    for mask, size in zip(masks, layer_sizes):
        mask = np.asarray(mask)
        if mask.shape != (m,):
            raise ValueError(f"mask shape {mask.shape} != ({m},)")
        k_pro += int(size) * int(np.count_nonzero(mask))
    k_total = m * sum(int(s) for s in layer_sizes)
    if k_total == 0 or k_pro == 0:
        # still validate the ideal-code channel so p in {0, 1} errors consistently
        if ecc.kind == "ideal":
            ecc.overhead(p)
        return RedundancyReport(k_total, k_pro, 0.0)
    if ecc.kind == "block":
        # exact integer ratio, correctly rounded once
        r = (k_pro * (ecc.n - ecc.k)) / (k_total * ecc.k)
    else:
        r = (k_pro / k_total) * ecc.overhead(p)
    return RedundancyReport(k_total, k_pro, r)


def _log_binom_pmf(x, n, logp, log1mp):
    return math.lgamma(n + 1) - math.lgamma(x + 1) - math.lgamma(n - x + 1) + x * logp + (n - x) * log1mp


def _logsumexp(terms):
    hi = max(terms)
    if hi == -math.inf:
        return -math.inf
    return hi + math.log(math.fsum(math.exp(v - hi) for v in terms))


def block_decode_failure_prob(ecc, p):
    """P[X > t] for X ~ Binomial(n, p), summed in log space."""
    if ecc.kind != "block":
        raise ValueError("failure probability is defined for block codes only")
    n, t = ecc.n, ecc.t
    if t >= n or p <= 0.0:
        return 0.0
    if p >= 1.0:
        return 1.0
    logp, log1mp = math.log(p), math.log1p(-p)
    if t + 1 >= n * p:
        terms = [_log_binom_pmf(x, n, logp, log1mp) for x in range(t + 1, n + 1)]
        return min(1.0, math.exp(_logsumexp(terms)))
    terms = [_log_binom_pmf(x, n, logp, log1mp) for x in range(0, t + 1)]
    return max(0.0, 1.0 - math.exp(_logsumexp(terms)))


def protection_matrices(masks, layer_sizes):
    """Broadcast per-layer masks to ``(|W_i|, m)`` protection matrices."""
    masks = getattr(masks, "masks", masks)
    return [
        np.broadcast_to(np.asarray(mask, dtype=np.uint8), (int(size), len(mask))).copy()
        for mask, size in zip(masks, layer_sizes)
    ]


def failed_blocks(ecc, chan, n_blocks):
    """Boolean failure flag for each payload block of one trial."""
    if n_blocks == 0:
        return np.zeros(0, dtype=bool)
    pf = block_decode_failure_prob(ecc, chan.p)
    if pf == 0.0:
        return np.zeros(n_blocks, dtype=bool)
    key = kernels.derive_seed(chan.seed, _BLOCK_STREAM)
    return kernels.uniform_stream(key, 0, n_blocks) < pf


def simulate_protection(bits, masks, ecc, chan):
    """Channel errors on ``bits`` after ECC protection of the masked positions.

    Ideal codes restore every protected bit. Block codes pack protected bits
    into k-bit payloads in layer-major, weight-major, bit-minor order; each
    payload independently fails with the binomial tail probability, and a
    failed payload keeps its channel-corrupted bits.
    """
    masks = getattr(masks, "masks", masks)
    sizes = [b.shape[0] for b in bits]
    prot = protection_matrices(masks, sizes)
    if ecc.kind == "ideal":
        return inject(bits, prot, chan)

    raw = inject(bits, [np.zeros_like(p) for p in prot], chan)
    counts = [int(np.count_nonzero(p)) for p in prot]
    n_blocks = -(-sum(counts) // ecc.k)
    fail = failed_blocks(ecc, chan, n_blocks)
    out = []
    offset = 0
    for b, r, p, c in zip(bits, raw, prot, counts):
        res = np.where(p == 1, b, r)
        if c and fail.any():
            flat_p = np.flatnonzero(p)
            blk = (offset + np.arange(c)) // ecc.k
            bad = flat_p[fail[blk]]
            flat = res.reshape(-1)
            flat[bad] = r.reshape(-1)[bad]
        offset += c
        out.append(res)
    return out
