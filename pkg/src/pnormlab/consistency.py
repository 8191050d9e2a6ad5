"""Consistency criteria, alternative families, growth traces, contour grids.

The criteria are finite-dimensional functionals whose divergence along a
dimension grid characterizes when a norm test's power tends to one.  The
lab reports fitted log-log slopes plus the raw trace and never a boolean
"consistent" verdict: divergence is a limit property, and desk-scale grids
can only shadow it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import DomainError
from .gaussmath import detection_weight, sup_centering, sup_detection_weight
from .norms import Exponent

__all__ = [
    "AlternativeFamily",
    "dense",
    "sparse",
    "semi_sparse",
    "power_sparse",
    "custom_family",
    "finite_p_criterion",
    "SupCriterion",
    "sup_criterion",
    "CriterionTrace",
    "criterion_trace",
    "geometric_dgrid",
    "RewriteParts",
    "rewrite_check",
    "sparsity_diagnostic",
    "minimax_radius",
    "contour_grid",
]

# Ratio-form terms saturate at the value attained where the Gaussian cdf
# leaves double range (cdf > 1e-300); beyond that the term only certifies
# divergence, and the saturation flag is raised.
_RATIO_ARG_FLOOR = float(special.ndtri(1e-300))
_RATIO_CAP = float(
    np.exp(special.log_ndtr(-_RATIO_ARG_FLOOR) - special.log_ndtr(_RATIO_ARG_FLOOR))
)


# ---------------------------------------------------------------------------
# Alternative families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlternativeFamily:
    """A rule mapping dimension d to a unit-scale mean vector.

    ``theta(d, scale)`` returns the mean vector; ``support(d)`` returns the
    index array of its nonzero coordinates together with the unit values, so
    Monte Carlo kernels can apply sparse shifts incrementally.
    """

    kind: str
    label: str
    rule: Callable[[int], np.ndarray] | None = None
    exponent: float | None = None  # for the power-law one-spike family
    min_d: int = 1

    def _unit(self, d: int) -> np.ndarray:
        d = int(d)
        if d < self.min_d:
            raise DomainError(f"family {self.label!r} requires d >= {self.min_d}")
        if self.kind == "dense":
            return np.ones(d)
        if self.kind == "sparse":
            out = np.zeros(d)
            out[0] = 1.0
            return out
        if self.kind == "semi_sparse":
            logd = math.log(d)
            tau = math.sqrt(2.0 * logd) / math.log(logd)
            k = math.ceil(math.sqrt(d) / logd)
            out = np.zeros(d)
            out[:k] = tau
            return out
        if self.kind == "power_sparse":
            out = np.zeros(d)
            out[0] = d ** (1.0 / (2.0 * self.exponent))
            return out
        if self.kind == "custom":
            out = np.asarray(self.rule(d), dtype=float)
            if out.shape != (d,):
                raise DomainError("custom family rule returned the wrong shape")
            return out
        raise DomainError(f"unknown family kind {self.kind!r}")

    def theta(self, d: int, scale: float = 1.0) -> np.ndarray:
        return float(scale) * self._unit(d)

    def support(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        unit = self._unit(d)
        idx = np.flatnonzero(unit)
        return idx, unit[idx]


def dense() -> AlternativeFamily:
    """All coordinates equal: ``scale * (1, ..., 1)``."""
    return AlternativeFamily(kind="dense", label="dense")


def sparse() -> AlternativeFamily:
    """One nonzero coordinate: ``scale * (1, 0, ..., 0)``."""
    return AlternativeFamily(kind="sparse", label="sparse")


def semi_sparse() -> AlternativeFamily:
    """ceil(sqrt(d)/log d) leading coordinates at sqrt(2 log d)/log log d.

    The semi-sparse array detected by every norm exponent above 2 but by
    neither the Euclidean- nor the sup-norm test in the limit.  Needs
    d >= 16 so that log log d is safely positive.
    """
    return AlternativeFamily(kind="semi_sparse", label="semi-sparse", min_d=16)


def power_sparse(exponent: float) -> AlternativeFamily:
    """One spike of height d**(1/(2 p)): borderline for the p-norm test."""
    p = float(exponent)
    if not (p > 0.0 and math.isfinite(p)):
        raise DomainError(f"power-sparse exponent must be positive, got {exponent!r}")
    return AlternativeFamily(
        kind="power_sparse", label=f"power-sparse(p={p:g})", exponent=p
    )


def custom_family(rule: Callable[[int], np.ndarray], label: str = "custom") -> AlternativeFamily:
    return AlternativeFamily(kind="custom", label=label, rule=rule)


# ---------------------------------------------------------------------------
# Criteria
# ---------------------------------------------------------------------------


def finite_p_criterion(theta, p: float, cutoff: float = 1.0) -> float:
    """Normalized detection-weight sum whose divergence in d characterizes
    consistency of the p-norm test: ``sum_i w_p(theta_i) / sqrt(d)``."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size == 0:
        raise DomainError("theta must be a non-empty vector")
    w = detection_weight(theta, p, cutoff=cutoff)
    return float(np.sum(w)) / math.sqrt(theta.size)


@dataclass(frozen=True)
class SupCriterion:
    """Both equivalent forms of the sup-norm criterion.

    ``ratio_sum`` is the cancellation-safe tail/cdf ratio form (weight-free);
    ``weight_sum`` uses the sup detection weight and therefore depends on the
    chosen tail weight below the kink.  ``saturated`` flags ratio terms
    capped because the cdf underflowed, which certifies divergence.
    """

    ratio_sum: float
    weight_sum: float
    saturated: bool


def sup_criterion(theta, tail_weight: Callable | None = None) -> SupCriterion:
    """Sup-norm consistency criterion at the centering for dimension d."""
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size == 0:
        raise DomainError("theta must be a non-empty vector")
    d = theta.size
    args = sup_centering(d) - np.abs(theta)
    low = args < _RATIO_ARG_FLOOR
    safe = np.where(low, 0.0, args)
    with np.errstate(over="ignore"):
        log_ratio = special.log_ndtr(-safe) - special.log_ndtr(safe)
        terms = np.where(low, _RATIO_CAP, np.exp(log_ratio))
    ratio_sum = float(np.sum(terms))
    weight_sum = float(np.sum(sup_detection_weight(args, tail_weight)))
    return SupCriterion(
        ratio_sum=ratio_sum, weight_sum=weight_sum, saturated=bool(low.any())
    )


# ---------------------------------------------------------------------------
# Traces over dimension grids
# ---------------------------------------------------------------------------


def geometric_dgrid(d_min: int, d_max: int) -> tuple[int, ...]:
    """Quarter-decade grid ceil(10**(k/4)) covering [d_min, d_max]."""
    d_min, d_max = int(d_min), int(d_max)
    if not (1 <= d_min <= d_max):
        raise DomainError("need 1 <= d_min <= d_max")
    ks = range(math.floor(4 * math.log10(d_min)), math.ceil(4 * math.log10(d_max)) + 1)
    grid = sorted({math.ceil(10.0 ** (k / 4.0)) for k in ks})
    return tuple(d for d in grid if d_min <= d <= d_max)


@dataclass(frozen=True)
class CriterionTrace:
    """Criterion values over a dimension grid with the fitted log-log slope."""

    d_grid: tuple[int, ...]
    values: tuple[float, ...]
    exponent: Exponent
    family_label: str
    fitted_log_slope: float
    saturated: bool = False

    def rows(self):
        return list(zip(self.d_grid, self.values))


def _fit_log_slope(d_grid, values) -> float:
    v = np.asarray(values, dtype=float)
    if np.any(v <= 0.0) or not np.all(np.isfinite(v)):
        return float("nan")
    x = np.log(np.asarray(d_grid, dtype=float))
    return float(np.polyfit(x, np.log(v), 1)[0])


def criterion_trace(
    family: AlternativeFamily,
    exponent: Exponent,
    d_grid: Sequence[int],
    cutoff: float = 1.0,
) -> CriterionTrace:
    """Evaluate the matching criterion on every grid dimension and fit the
    least-squares slope of log(value) on log(d).

    Sup traces use the weight-free ratio form so that reported numbers do
    not silently depend on the tail-weight choice.
    """
    grid = tuple(int(d) for d in d_grid)
    if len(grid) < 2 or any(grid[i] >= grid[i + 1] for i in range(len(grid) - 1)):
        raise DomainError("d_grid must be strictly increasing with >= 2 points")
    if grid[0] < 3:
        raise DomainError("d_grid entries must be >= 3")
    values = []
    saturated = False
    for d in grid:
        theta = family.theta(d)
        if exponent.is_sup:
            crit = sup_criterion(theta)
            saturated = saturated or crit.saturated
            values.append(crit.ratio_sum)
        else:
            values.append(finite_p_criterion(theta, exponent.p, cutoff=cutoff))
    return CriterionTrace(
        d_grid=grid,
        values=tuple(values),
        exponent=exponent,
        family_label=family.label,
        fitted_log_slope=_fit_log_slope(grid, values),
        saturated=saturated,
    )


# ---------------------------------------------------------------------------
# Structure diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RewriteParts:
    """Norm decomposition of the finite-p criterion."""

    two_norm_part: float
    p_norm_part: float
    criterion: float


def rewrite_check(theta, p: float) -> RewriteParts:
    """Scaled squared-Euclidean and p-th-power parts next to the criterion.

    For p >= 2 the criterion is sandwiched between half the larger part and
    the sum of the parts; that sandwich is asserted here.  For p < 2 the
    criterion is dominated by the smaller part (no two-sided bound exists).
    """
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size == 0:
        raise DomainError("theta must be a non-empty vector")
    p = float(p)
    if not (p > 0.0 and math.isfinite(p)):
        raise DomainError(f"exponent must be a positive real, got {p!r}")
    rd = math.sqrt(theta.size)
    a = np.abs(theta)
    two_part = float(np.sum(a * a)) / rd
    with np.errstate(over="ignore"):
        p_part = float(np.sum(a**p)) / rd
    crit = finite_p_criterion(theta, p)
    if p >= 2.0:
        hi = two_part + p_part
        lo = 0.5 * max(two_part, p_part)
        assert lo <= crit * (1 + 1e-12) and crit <= hi * (1 + 1e-12), (
            "criterion left its two-sided norm sandwich; this indicates a bug"
        )
    return RewriteParts(two_norm_part=two_part, p_norm_part=p_part, criterion=crit)


def sparsity_diagnostic(theta, delta: float, p: float) -> tuple[float, float, float]:
    """(normalized exceedance count, max magnitude, delta^p * exceedance).

    Diagnostic summaries of approximate sparsity; no limit claims attached.
    """
    if not (float(delta) > 0.0):
        raise DomainError(f"delta must be positive, got {delta!r}")
    theta = np.asarray(theta, dtype=float)
    if theta.ndim != 1 or theta.size == 0:
        raise DomainError("theta must be a non-empty vector")
    a = np.abs(theta)
    exceed = float(np.count_nonzero(a > delta)) / math.sqrt(theta.size)
    return exceed, float(a.max()), float(delta) ** float(p) * exceed


def minimax_radius(p: float, d: int) -> float:
    """Critical separation radius of the p-norm ball testing problem:
    ``d**((4-p)/(4p))`` for p <= 2 and ``d**(1/(2p))`` for p > 2 (both give
    d**(1/4) at p = 2)."""
    p = float(p)
    if not (p > 0.0 and math.isfinite(p)):
        raise DomainError(f"exponent must be a positive real, got {p!r}")
    d = int(d)
    if d < 1:
        raise DomainError("dimension must be >= 1")
    if p <= 2.0:
        return float(d) ** ((4.0 - p) / (4.0 * p))
    return float(d) ** (1.0 / (2.0 * p))


# ---------------------------------------------------------------------------
# Contour grids (two-dimensional criterion surfaces)
# ---------------------------------------------------------------------------


def contour_grid(
    exponent: Exponent,
    lo: float = -5.0,
    hi: float = 5.0,
    resolution: int = 101,
) -> tuple[np.ndarray, np.ndarray]:
    """Criterion surface on a square (x1, x2) grid at dimension two.

    Finite p: ``w_p(x1)/sqrt(2) + w_p(x2)/sqrt(2)``.  Sup: the ratio form at
    the two-dimensional centering.  Returns (axis, matrix) with
    ``matrix[i, j]`` the value at ``(x1=axis[i], x2=axis[j])``.
    """
    resolution = int(resolution)
    if resolution < 2:
        raise DomainError("resolution must be >= 2")
    lo, hi = float(lo), float(hi)
    if not (lo < hi):
        raise DomainError("need lo < hi")
    axis = np.linspace(lo, hi, resolution)
    if exponent.is_sup:
        c2 = sup_centering(2)
        args = c2 - np.abs(axis)
        low = args < _RATIO_ARG_FLOOR
        safe = np.where(low, 0.0, args)
        terms = np.where(
            low,
            _RATIO_CAP,
            np.exp(special.log_ndtr(-safe) - special.log_ndtr(safe)),
        )
        grid = terms[:, None] + terms[None, :]
    else:
        w = detection_weight(axis, exponent.p) / math.sqrt(2.0)
        grid = w[:, None] + w[None, :]
    return axis, grid
