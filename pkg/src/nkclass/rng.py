"""Deterministic seed derivation.

All randomness in the package flows from explicit 64-bit seeds. Derived
streams (per-tree, per-stage) are obtained with a splitmix64-style mixer so
that results never depend on call order, thread count, or library version.
"""

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15


def mix64(z: int) -> int:
    """splitmix64 finalizer: a bijective avalanche mix of a 64-bit value."""
    z = (z + _GAMMA) & _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return (z ^ (z >> 31)) & _MASK


def derive(seed: int, *tags: "int | str") -> int:
    """Derive an independent 64-bit stream seed from ``seed`` and tags.

    Tags may be integers (e.g. a tree index) or short strings (a stage
    name); the same (seed, tags) always yields the same value.
    """
    state = mix64(seed & _MASK)
    for tag in tags:
        if isinstance(tag, str):
            for byte in tag.encode("utf-8"):
                state = mix64(state ^ byte)
        else:
            state = mix64(state ^ (int(tag) & _MASK))
    return state
