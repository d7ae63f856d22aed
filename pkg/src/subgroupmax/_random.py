"""Counter-based seed derivation so results never depend on scheduling."""

import numpy as np

MULTIPLIERS = ("rademacher", "gaussian", "mammen")
_SQ5 = np.sqrt(5.0)


def child_rng(seed, *keys) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys)))


def child_seed(seed, *keys) -> int:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def draw_multipliers(rng: np.random.Generator, n: int, kind: str = "rademacher") -> np.ndarray:
    """Mean-zero, unit-variance wild-bootstrap weights."""
    if kind == "rademacher":
        return rng.integers(0, 2, size=n) * 2.0 - 1.0
    if kind == "gaussian":
        return rng.standard_normal(n)
    if kind == "mammen":
        lo, hi = (1.0 - _SQ5) / 2.0, (1.0 + _SQ5) / 2.0
        return np.where(rng.random(n) < (_SQ5 + 1.0) / (2.0 * _SQ5), lo, hi)
    raise ValueError(f"unknown multiplier {kind!r}; choose from {MULTIPLIERS}")
