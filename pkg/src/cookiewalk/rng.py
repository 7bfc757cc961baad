"""Counter-based random streams.

Every random number in the package is a pure function of a 64-bit stream
key and a (site, index) counter, computed with Philox4x32-10.  Nothing is
drawn from shared sequential state, so any replicate, site or toss can be
recomputed in isolation and results do not depend on evaluation order or
worker count.

Stream keys are derived from a master seed with :func:`derive_key`, which
hashes ``(master, purpose, replicate)`` through the SplitMix64 finalizer.
"""

import numba as nb
import numpy as np

MASK32 = 0xFFFFFFFF
MASK64 = 0xFFFFFFFFFFFFFFFF

_PHILOX_M0 = np.uint64(0xD2511F53)
_PHILOX_M1 = np.uint64(0xCD9E8D57)
_PHILOX_W0 = np.uint64(0x9E3779B9)
_PHILOX_W1 = np.uint64(0xBB67AE85)
_M32 = np.uint64(MASK32)
_S32 = np.uint64(32)

# purpose tags mixed into stream keys
ENV = 1
COINS = 2
MIGRATION = 3
OFFSPRING = 4
TREE = 5


@nb.njit(cache=True)
def philox4x32(c0, c1, c2, c3, k0, k1):
    """Philox4x32-10 block function on uint64-held 32-bit words."""
    c0 = np.uint64(c0)
    c1 = np.uint64(c1)
    c2 = np.uint64(c2)
    c3 = np.uint64(c3)
    k0 = np.uint64(k0)
    k1 = np.uint64(k1)
    for r in range(10):
        p0 = _PHILOX_M0 * c0
        p1 = _PHILOX_M1 * c2
        n0 = (p1 >> _S32) ^ c1 ^ k0
        n2 = (p0 >> _S32) ^ c3 ^ k1
        c1 = p1 & _M32
        c3 = p0 & _M32
        c0 = n0
        c2 = n2
        k0 = (k0 + _PHILOX_W0) & _M32
        k1 = (k1 + _PHILOX_W1) & _M32
    return c0, c1, c2, c3


@nb.njit(cache=True)
def block(key, site, index):
    """Four 32-bit words for counter ``(index, site)`` under a 64-bit ``key``."""
    k = np.uint64(key)
    s = np.uint64(site)
    i = np.uint64(index)
    return philox4x32(i & _M32, i >> _S32, s & _M32, s >> _S32, k & _M32, k >> _S32)


@nb.njit(cache=True)
def uniform(key, site, index):
    """Uniform double in [0, 1) with 53 random bits."""
    w0, w1, w2, w3 = block(key, site, index)
    a = w0 >> np.uint64(5)
    b = w1 >> np.uint64(6)
    return (float(a) * 67108864.0 + float(b)) * (1.0 / 9007199254740992.0)


@nb.njit(cache=True)
def popcount32(w):
    w = w - ((w >> np.uint64(1)) & np.uint64(0x55555555))
    w = (w & np.uint64(0x33333333)) + ((w >> np.uint64(2)) & np.uint64(0x33333333))
    w = (w + (w >> np.uint64(4))) & np.uint64(0x0F0F0F0F)
    return int(((w * np.uint64(0x01010101)) & _M32) >> np.uint64(24))


@nb.njit(cache=True)
def fair_negbin(key, site, start, r):
    """Number of heads before the ``r``-th tail in a fair bit stream.

    Bits are read 128 at a time from consecutive Philox blocks at
    ``(site, start), (site, start + 1), ...``.  Returns the count and the
    first unused block index.  This is the law of a sum of ``r`` independent
    Geom(1/2) variables.
    """
    heads = 0
    idx = start
    while r > 0:
        words = block(key, site, idx)
        idx += 1
        for j in range(4):
            w = words[j]
            ones = popcount32(w)
            zeros = 32 - ones
            if zeros < r:
                heads += ones
                r -= zeros
                continue
            for b in range(32):
                if (w >> np.uint64(b)) & np.uint64(1):
                    heads += 1
                else:
                    r -= 1
                    if r == 0:
                        break
            break
    return heads, idx


@nb.njit(cache=True)
def mix64(x):
    """SplitMix64 finalizer (a bijection of uint64)."""
    z = np.uint64(x)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


_GOLDEN = np.uint64(0x9E3779B97F4A7C15)


@nb.njit(cache=True)
def derive_key_nb(master, purpose, replicate):
    h = mix64(np.uint64(master) + _GOLDEN)
    h = mix64(h ^ mix64(np.uint64(purpose) * _GOLDEN + np.uint64(1)))
    return mix64(h ^ mix64(np.uint64(replicate) + _GOLDEN * np.uint64(2)))


def _mix64_py(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def derive_key(master, purpose, replicate=0):
    """Stream key for ``(master seed, purpose tag, replicate id)``.

    Pure-Python twin of the jitted derivation; both give identical keys.
    """
    g = 0x9E3779B97F4A7C15
    h = _mix64_py(master + g)
    h = _mix64_py(h ^ _mix64_py(purpose * g + 1))
    return _mix64_py(h ^ _mix64_py(replicate + 2 * g))


def as_uint64(x):
    """Two's-complement embedding of a Python int into uint64 range."""
    return int(x) & MASK64
