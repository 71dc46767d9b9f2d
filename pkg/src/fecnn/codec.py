"""Weight <-> bit conversion for the 32-bit float layout and m-bit fixed point.

Bit vectors are uint8 arrays of 0/1 with index 0 holding the sign bit. Bulk
conversion works on a trailing axis of length m, so a layer of |W| weights
becomes a ``(|W|, m)`` matrix.

The float layout is evaluated literally as

    w = (-1)^b0 * 2^(e - 127) * (1 + f / 2^23)

for every exponent field ``e`` in 0..255. There are no zeros, denormals,
infinities or NaNs: the all-zero pattern is 2^-127 and exponent 255 is an
ordinary binade. Values are produced as float64.
"""

from dataclasses import dataclass

import numpy as np

FLOAT_BITS = 32
_FRAC_ONE = float(1 << 23)

#: smallest / largest magnitude of the literal float layout
FLOAT_MIN = 2.0**-127
FLOAT_MAX = (2.0 - 2.0**-23) * 2.0**128


class CodecRangeError(ValueError):
    """Magnitude too large for the 32-bit float layout."""


# ------------------------------------------------------------------ words


def words_to_bits(words, m=FLOAT_BITS):
    """Unsigned integer words -> (..., m) bit matrix, MSB (sign) first."""
    words = np.asarray(words, dtype=np.uint64)
    shifts = np.arange(m - 1, -1, -1, dtype=np.uint64)
    return ((words[..., None] >> shifts) & np.uint64(1)).astype(np.uint8)


def bits_to_words(bits):
    """Inverse of :func:`words_to_bits` along the last axis."""
    bits = np.asarray(bits)
    m = bits.shape[-1]
    weights = np.uint64(1) << np.arange(m - 1, -1, -1, dtype=np.uint64)
    return (bits.astype(np.uint64) * weights).sum(axis=-1, dtype=np.uint64)


# ------------------------------------------------------------------ float32


def decode_float32_words(words):
    words = np.asarray(words, dtype=np.uint64)
    sign = (words >> np.uint64(31)) & np.uint64(1)
    exp = ((words >> np.uint64(23)) & np.uint64(0xFF)).astype(np.int64)
    frac = (words & np.uint64(0x7FFFFF)).astype(np.float64)
    mag = np.ldexp(1.0 + frac / _FRAC_ONE, exp - 127)
    return np.where(sign == 1, -mag, mag)


def encode_float32_words(w):
    """Nearest pattern (round half to even on the fraction) for each value."""
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise CodecRangeError("non-finite weight")
    sign = np.signbit(w).astype(np.uint64)
    a = np.abs(w)
    a = np.maximum(a, FLOAT_MIN)
    mant, e2 = np.frexp(a)  # a = mant * 2^e2, mant in [0.5, 1)
    exp = e2.astype(np.int64) - 1 + 127
    frac = np.rint((2.0 * mant - 1.0) * _FRAC_ONE).astype(np.int64)
    carry = frac == (1 << 23)
    frac = np.where(carry, 0, frac)
    exp = np.where(carry, exp + 1, exp)
    # frexp of the clamped minimum always gives exp >= 0
    if np.any(exp > 255):
        raise CodecRangeError("magnitude exceeds the float32 layout range")
    return (sign << np.uint64(31)) | (exp.astype(np.uint64) << np.uint64(23)) | frac.astype(np.uint64)


def decode_float32(bits):
    """Value of a single 32-bit pattern (or a stack of them)."""
    bits = _check_bits(bits, FLOAT_BITS)
    out = decode_float32_words(bits_to_words(bits))
    return float(out) if out.ndim == 0 else out


def encode_float32(w):
    words = encode_float32_words(w)
    return words_to_bits(words, FLOAT_BITS)


# ------------------------------------------------------------------ fixed point


@dataclass(frozen=True)
class FixedPointSpec:
    """m-bit sign-magnitude quantiser on [-c, c]."""

    c: float
    m: int

    def __post_init__(self):
        if not self.c > 0:
            raise ValueError(f"clamp bound must be positive, got {self.c}")
        if self.m < 2:
            raise ValueError(f"fixed-point width must be >= 2, got {self.m}")

    @property
    def s(self):
        return self.c / ((1 << (self.m - 1)) - 1)

    @property
    def qmax(self):
        return (1 << (self.m - 1)) - 1


def decode_fixed(bits, spec):
    bits = _check_bits(bits, spec.m)
    words = bits_to_words(bits)
    mag = (words & np.uint64(spec.qmax)).astype(np.float64) * spec.s
    neg = (words >> np.uint64(spec.m - 1)) & np.uint64(1)
    out = np.where(neg == 1, -mag, mag)
    return float(out) if out.ndim == 0 else out


def encode_fixed_words(w, spec):
    w = np.clip(np.asarray(w, dtype=np.float64), -spec.c, spec.c)
    q = np.floor(np.abs(w) / spec.s + 0.5)  # ties away from zero
    q = np.minimum(q, spec.qmax).astype(np.uint64)
    neg = ((w < 0) & (q > 0)).astype(np.uint64)
    return (neg << np.uint64(spec.m - 1)) | q


def encode_fixed(w, spec):
    return words_to_bits(encode_fixed_words(w, spec), spec.m)


def _check_bits(bits, m):
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.shape[-1:] != (m,):
        raise ValueError(f"expected trailing bit axis of length {m}, got shape {bits.shape}")
    if np.any(bits > 1):
        raise ValueError("bit arrays must contain only 0/1")
    return bits


def parse_bits(text):
    """'0101...' -> uint8 array."""
    return np.frombuffer(text.strip().encode(), dtype=np.uint8) - ord("0")


def format_bits(bits):
    return "".join("1" if b else "0" for b in np.asarray(bits).ravel())


# ------------------------------------------------------------------ representation


@dataclass(frozen=True)
class Representation:
    """Selector for how a model's weights become bits.

    ``kind`` is ``"float32"`` or ``"fixed"``. For fixed point, ``c=None``
    means "use max |w| over the whole model".
    """

    kind: str = "float32"
    m: int = FLOAT_BITS
    c: float | None = None

    @classmethod
    def parse(cls, text):
        """Parse ``float32`` or ``fixed:<m>:<c|auto>``."""
        text = text.strip()
        if text == "float32":
            return cls()
        parts = text.split(":")
        if parts[0] == "fixed" and len(parts) == 3:
            m = int(parts[1])
            c = None if parts[2] == "auto" else float(parts[2])
            return cls("fixed", m, c)
        raise ValueError(f"unknown representation {text!r}; expected float32 or fixed:<m>:<c|auto>")

    def __str__(self):
        if self.kind == "float32":
            return "float32"
        return f"fixed:{self.m}:{'auto' if self.c is None else repr(self.c)}"

    def resolve(self, layer_weights):
        """Concrete FixedPointSpec for these weights (None for float32)."""
        if self.kind == "float32":
            return None
        if self.c is not None:
            return FixedPointSpec(self.c, self.m)
        cmax = max((float(np.max(np.abs(w))) for w in layer_weights if np.size(w)), default=1.0)
        return FixedPointSpec(cmax if cmax > 0 else 1.0, self.m)

    def encode(self, w, fixed=None):
        if self.kind == "float32":
            return encode_float32(w)
        return encode_fixed(w, fixed)

    def decode(self, bits, fixed=None):
        if self.kind == "float32":
            return decode_float32_words(bits_to_words(bits))
        return np.asarray(decode_fixed(bits, fixed), dtype=np.float64)


def weights_to_bits(layer_weights, rep, fixed=None):
    """Per-layer weight arrays -> per-layer ``(|W_i|, m)`` bit matrices."""
    if rep.kind == "fixed" and fixed is None:
        fixed = rep.resolve(layer_weights)
    out = []
    for w in layer_weights:
        w = np.asarray(w, dtype=np.float64).ravel()
        out.append(rep.encode(w, fixed).reshape(w.size, rep.m))
    return out


def bits_to_weights(layer_bits, rep, fixed=None):
    return [np.asarray(rep.decode(b, fixed), dtype=np.float64).reshape(-1) for b in layer_bits]


def model_to_bits(model, rep, fixed=None):
    """Bit matrices for every edge layer of ``model`` (canonical weight order)."""
    return weights_to_bits([layer.weights for layer in model.layers], rep, fixed)


def bits_to_model(model, layer_bits, rep, fixed=None):
    """Copy of ``model`` whose weights are decoded from ``layer_bits``."""
    return model.with_weights(bits_to_weights(layer_bits, rep, fixed))
