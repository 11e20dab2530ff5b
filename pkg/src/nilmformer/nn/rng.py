"""Process-wide random generator for init, shuffling, and dropout.

Seeding this generator (plus the explicit seeds carried by data specs)
makes every stochastic component of the toolkit reproducible.
"""

import numpy as np

_rng = np.random.default_rng(0)


def set_seed(seed):
    """Reset the global generator; all later draws depend only on ``seed``."""
    global _rng
    _rng = np.random.default_rng(seed)


def get_rng():
    return _rng
