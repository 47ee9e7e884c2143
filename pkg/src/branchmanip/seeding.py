"""Deterministic 64-bit seed derivation.

``mix_seed(a, b, ...)`` folds each integer into a splitmix64 state:
``s = splitmix64(s ^ (v mod 2**64))`` starting from ``s = 0``. Each trial's
seed depends only on its own (base_seed, start_id, trial_id), so adding or
removing trials never shifts the randomness of the others.
"""

MASK = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK
    return x ^ (x >> 31)


def mix_seed(*values: int) -> int:
    s = 0
    for v in values:
        s = splitmix64(s ^ (int(v) & MASK))
    return s
