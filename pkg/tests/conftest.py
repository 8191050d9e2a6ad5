"""Shared independent oracles for the test suite.

The oracles deliberately avoid the code paths they check: quantiles come
from bisection on the cdf, moments from adaptive quadrature, and reference
distributions from scipy.stats routines.
"""

import numpy as np
import pytest
from scipy import integrate


def bisection_solve(f, target, lo, hi, tol=1e-13, max_iter=200):
    """Solve f(x) = target for increasing f by bisection."""
    flo, fhi = f(lo) - target, f(hi) - target
    assert flo <= 0.0 <= fhi, "bisection oracle not bracketed"
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fm = f(mid) - target
        if fm == 0.0 or (hi - lo) < tol:
            return mid
        if fm < 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def quadrature_abs_moment(r):
    """E|Z|^r by adaptive quadrature, split at 1 to isolate the origin."""

    def integrand(z):
        return 2.0 * z**r * np.exp(-z * z / 2.0) / np.sqrt(2.0 * np.pi)

    head, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=0.0, epsrel=1e-12)
    tail, _ = integrate.quad(integrand, 1.0, np.inf, epsabs=0.0, epsrel=1e-12)
    return head + tail


@pytest.fixture
def rng():
    return np.random.default_rng(20240808)
