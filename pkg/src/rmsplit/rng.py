"""Counter-based splittable random streams.

Every random quantity in the package is a pure function of a 64-bit master
seed and a handful of integer labels (replicate index, lattice site, walker
index, step number).  The construction is the SplitMix64 one: a stream is a
64-bit key, and output ``i`` of the stream is ``mix64(key + (i + 1) * GAMMA)``
where ``mix64`` is the Stafford "variant 13" finalizer.  Sub-streams are
derived by using an output of the parent stream as the child key.

The derivation tree used by the simulation:

    root                = mix64(seed ^ SEED_SALT)
    env(seed, r)        = out(out(root, DOM_REPLICATE), r)
    site count u(k)     = out(out(env, DOM_SITE), u64(k))        -> Poisson(1)
    walker key(k, i)    = out(out(out(env, DOM_WALKER), u64(k)), i)
    walker step bits    = bit (t mod 64) of out(walker_key, t div 64)
    walk key(w)         = out(out(env, DOM_WALK), w)
    walk uniform at t   = unit(out(walk_key, t))
    lazy walk uniforms  = unit(out(out(root, DOM_LAZY), w), t)

Because a walker's stream is keyed only by (seed, replicate, site, index),
adding sites to the simulation window or dropping walkers of the other
parity class never perturbs the walkers that are already there.  That is
what makes the light-cone window tests and the fused streaming kernels
exact rather than approximate.

Scalar reference implementations live here (plain Python integers, masked
to 64 bits); the hot vectorized/compiled versions in ``rmsplit.kernels``
must agree with them bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
SEED_SALT = 0x243F6A8885A308D3

# Domain labels for child streams.
DOM_REPLICATE = 0x01
DOM_SITE = 0x02
DOM_WALKER = 0x03
DOM_WALK = 0x04
DOM_LAZY = 0x05

# 2^-53, for mapping the top 53 bits of a word to [0, 1).
UNIT_SCALE = 2.0 ** -53


def mix64(z: int) -> int:
    """Stafford variant-13 finalizer on a 64-bit word."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_out(key: int, i: int) -> int:
    """Output ``i`` (i >= 0, or any u64 label) of the stream with this key."""
    return mix64((key + ((i + 1) & MASK64) * GAMMA) & MASK64)


def to_unit(word: int) -> float:
    """Map a 64-bit word to a double in [0, 1)."""
    return (word >> 11) * UNIT_SCALE


def u64(x: int) -> int:
    """Two's-complement embedding of a (possibly negative) int into u64."""
    return x & MASK64


def root_key(seed: int) -> int:
    return mix64(u64(seed) ^ SEED_SALT)


def env_key(seed: int, replicate: int = 0) -> int:
    return stream_out(stream_out(root_key(seed), DOM_REPLICATE), u64(replicate))


def site_uniform(env_k: int, site: int) -> float:
    return to_unit(stream_out(stream_out(env_k, DOM_SITE), u64(site)))


def walker_key(env_k: int, site: int, index: int) -> int:
    return stream_out(stream_out(stream_out(env_k, DOM_WALKER), u64(site)), index)


def walker_sign(wkey: int, t: int) -> int:
    """Step sign (+1/-1) of a walker at time t: bit (t mod 64) of word t//64."""
    word = stream_out(wkey, t >> 6)
    return 1 if (word >> (t & 63)) & 1 else -1


def walk_key(env_k: int, walk_id: int) -> int:
    return stream_out(stream_out(env_k, DOM_WALK), walk_id)


def walk_uniform(wkey: int, t: int) -> float:
    return to_unit(stream_out(wkey, t))


# ---------------------------------------------------------------------------
# Poisson(1) sampling by inversion.
# ---------------------------------------------------------------------------

_PCDF_LEN = 32


def _poisson1_cdf() -> np.ndarray:
    cdf = np.empty(_PCDF_LEN, dtype=np.float64)
    acc: list[float] = []
    term = math.exp(-1.0)
    for k in range(_PCDF_LEN):
        acc.append(term)
        cdf[k] = math.fsum(acc)
        term /= k + 1
    # The tail mass beyond k=31 is ~1e-34, far below double resolution.
    cdf[-1] = 1.0
    return cdf


POISSON1_CDF = _poisson1_cdf()


def poisson1_from_unit(u: float) -> int:
    """Poisson(1) count from a uniform in [0, 1): smallest m with u < cdf[m]."""
    return int(np.searchsorted(POISSON1_CDF, u, side="right"))


def site_count(env_k: int, site: int, size_biased_origin: bool) -> int:
    """Initial occupancy of a site.

    Under the size-biased measure the origin count is 1 + Poisson(1), which
    is exactly the size-biased Poisson(1) law k * e^-1 / k!.
    """
    c = poisson1_from_unit(site_uniform(env_k, site))
    if size_biased_origin and site == 0:
        c += 1
    return c
