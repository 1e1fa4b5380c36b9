"""Counter-based random streams.

Every uniform draw is a pure function of (master seed, purpose tag, particle
index, rebound index, draw index), so results do not depend on how particles
are partitioned across worker threads.  The generator is a splitmix64-style
avalanche applied to the packed counters.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = np.uint64(0xCBF29CE484222325)
_FNV_PRIME = np.uint64(0x100000001B3)


def _mix(z):
    # splitmix64 finalizer; wraparound is intentional
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


def tag_hash(tag: str) -> np.uint64:
    """Stable 64-bit FNV-1a hash of a purpose tag."""
    with np.errstate(over="ignore"):
        h = _FNV_OFFSET
        for b in tag.encode("utf-8"):
            h = (h ^ np.uint64(b)) * _FNV_PRIME
    return h


def _absorb(state, word):
    return _mix((state ^ word) + _GOLDEN)


def event_uniforms(seed, tag, particle, rebound, ndraws):
    """Uniform draws in [0, 1) for one wall event per particle.

    particle may be a scalar or an integer array; rebound is a matching
    scalar or array.  Returns shape particle.shape + (ndraws,).
    """
    particle = np.asarray(particle, dtype=np.uint64)
    rebound = np.broadcast_to(np.asarray(rebound, dtype=np.uint64),
                              particle.shape)
    out = np.empty(particle.shape + (ndraws,))
    with np.errstate(over="ignore"):
        state = _absorb(np.uint64(seed), tag_hash(tag) if isinstance(tag, str)
                        else np.uint64(tag))
        state = _absorb(state, particle)
        state = _absorb(state, rebound)
        for i in range(ndraws):
            word = _mix(state + np.uint64(i + 1) * _GOLDEN)
            out[..., i] = (word >> np.uint64(11)).astype(np.float64) * 2.0 ** -53
    return out


def stream_uniforms(seed, tag, index, ndraws):
    """Draws keyed by a single counter (no rebound axis)."""
    return event_uniforms(seed, tag, index, 0, ndraws)
