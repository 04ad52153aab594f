"""Cost of exact unlearning with sharded retraining versus one gradient."""

import math


def sisa_cost_ratio(shards: int, slices: int) -> float:
    """Best-case fraction of a full retrain: ``2S / (R + 1)``."""
    if shards < 1 or slices < 1:
        raise ValueError("shards and slices must be positive")
    return 2.0 * shards / (slices + 1)


def single_gradient_cost_ratio(n_steps: int) -> float:
    """One gradient out of ``N`` training steps."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    return 1.0 / n_steps


def sisa_breakeven(n_steps: int) -> float:
    """Smallest shard/slice count at which sharding could match one gradient: ``sqrt(N)/2 - 1``."""
    if n_steps < 1:
        raise ValueError("n_steps must be positive")
    return math.sqrt(n_steps) / 2.0 - 1.0
