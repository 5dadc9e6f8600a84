"""Gaussian tail function and quadrature rules."""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import special


def qfunc(z):
    """Standard normal upper tail Q(z) = P(Z > z).

    ``scipy.special.ndtr`` keeps full relative precision deep into both
    tails (it switches to erfc for negative arguments), so no separate
    asymptotic branch is needed for small meta-probabilities.
    """
    return special.ndtr(-np.asarray(z, dtype=float))


def normal_quantile(p):
    return special.ndtri(p)


@lru_cache(maxsize=None)
def hermite_rule(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for E[f(Z)], Z ~ N(0, 1), with n Gauss-Hermite points."""
    t, w = np.polynomial.hermite.hermgauss(n)
    return np.sqrt(2.0) * t, w / np.sqrt(np.pi)
