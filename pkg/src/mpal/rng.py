"""Stateless, splittable random numbers.

Everything is derived from the SplitMix64 output function, so streams are
reproducible from any language with 64-bit unsigned arithmetic:

    mix64(z):
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9   (mod 2**64)
        z = (z ^ (z >> 27)) * 0x94D049BB133111EB   (mod 2**64)
        return z ^ (z >> 31)

    split(seed, i)   = mix64(seed + (i + 1) * 0x9E3779B97F4A7C15)   (mod 2**64)
    unit(z)          = (z >> 11) * 2**-53                          in [0, 1)
    site_uniform(seed, u) = unit(split(seed, u mod 2**64))

``split(seed, i)`` is the ``i``-th output (0-based) of a SplitMix64 generator
seeded with ``seed``.  A site value therefore depends only on ``(seed, u)``
and never on which other sites are requested.
"""

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB


def mix64(z):
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def split(seed, i):
    """Child seed number ``i`` of ``seed``."""
    return mix64((seed + (i + 1) * GOLDEN) & MASK64)


def unit(z):
    return (z >> 11) * 2.0**-53


def site_uniform(seed, site):
    return unit(split(seed, site & MASK64))


def site_uniforms(seed, sites):
    """Vectorised :func:`site_uniform` over an integer array of sites."""
    sites = np.asarray(sites, dtype=np.int64)
    u = sites.astype(np.uint64)  # two's complement reinterpretation
    with np.errstate(over="ignore"):
        z = np.uint64(seed & MASK64) + (u + np.uint64(1)) * np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(_M1)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(_M2)
        z = z ^ (z >> np.uint64(31))
    return (z >> np.uint64(11)).astype(np.float64) * 2.0**-53
