"""Hot inner loops: counter-based random streams and masked bit flipping.

Every kernel exists twice, as a numba ``@njit`` loop and as a vectorised numpy
expression producing bit-identical output. ``FECNN_DISABLE_NUMBA=1`` in the
environment selects the numpy path at import time (also the fallback when
numba cannot be imported).

The random source is splitmix64 used as a counter-based generator: the
``i``-th uniform of stream ``key`` is ``mix64(key + GAMMA * (i + 1)) >> 11``
scaled by ``2**-53``. Nothing is stateful, so any element can be drawn
independently of all others.
"""

import os

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1

SYMMETRIC = 0
ZERO_TO_ONE = 1
ONE_TO_ZERO = 2


def _env_disabled():
    return os.environ.get("FECNN_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")


try:
    import numba as _nb
except ImportError:  # pragma: no cover
    _nb = None

NUMBA_ENABLED = _nb is not None and not _env_disabled()


def mix64_int(z):
    """splitmix64 finaliser on a python int."""
    z &= _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def derive_seed(seed, *keys):
    """Fold integer keys into a 64-bit seed: ``s <- mix64(s ^ mix64(k + GAMMA))``."""
    s = int(seed) & _MASK64
    for k in keys:
        s = mix64_int(s ^ mix64_int(int(k) + GAMMA))
    return s


# --------------------------------------------------------------------- numpy


def _mix64_np(z):
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def uniform_stream_numpy(key, start, count):
    idx = np.arange(start + 1, start + count + 1, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix64_np(np.uint64(key) + np.uint64(GAMMA) * idx)
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


def flip_bits_numpy(bits, protected, key, p, direction):
    n = bits.size
    u = uniform_stream_numpy(key, 0, n).reshape(bits.shape)
    hit = (u < p) & (protected == 0)
    if direction == ZERO_TO_ONE:
        hit &= bits == 0
    elif direction == ONE_TO_ZERO:
        hit &= bits == 1
    return bits ^ hit.astype(bits.dtype)


# --------------------------------------------------------------------- numba

if _nb is not None:

    @_nb.njit(cache=True, nogil=True)
    def _mix64_nb(z):
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    @_nb.njit(cache=True, nogil=True)
    def _uniform_stream_nb(key, start, count):
        out = np.empty(count, dtype=np.float64)
        k = np.uint64(key)
        g = np.uint64(GAMMA)
        for i in range(count):
            h = _mix64_nb(k + g * np.uint64(start + i + 1))
            out[i] = np.float64(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)
        return out

    @_nb.njit(cache=True, nogil=True)
    def _flip_bits_nb(bits, protected, key, p, direction):
        flat = bits.ravel()
        prot = protected.ravel()
        out = flat.copy()
        k = np.uint64(key)
        g = np.uint64(GAMMA)
        for i in range(flat.size):
            if prot[i] != 0:
                continue
            b = flat[i]
            if direction == 1 and b != 0:
                continue
            if direction == 2 and b != 1:
                continue
            h = _mix64_nb(k + g * np.uint64(i + 1))
            u = np.float64(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)
            if u < p:
                out[i] = b ^ 1
        return out.reshape(bits.shape)

    def uniform_stream_numba(key, start, count):
        return _uniform_stream_nb(np.uint64(key), int(start), int(count))

    def flip_bits_numba(bits, protected, key, p, direction):
        return _flip_bits_nb(
            np.ascontiguousarray(bits, dtype=np.uint8),
            np.ascontiguousarray(protected, dtype=np.uint8),
            np.uint64(key),
            float(p),
            int(direction),
        )

else:  # pragma: no cover
    uniform_stream_numba = uniform_stream_numpy
    flip_bits_numba = flip_bits_numpy


if NUMBA_ENABLED:
    uniform_stream = uniform_stream_numba
    flip_bits = flip_bits_numba
else:
    uniform_stream = uniform_stream_numpy
    flip_bits = flip_bits_numpy


def backend():
    return "numba" if NUMBA_ENABLED else "numpy"
