"""Test statistics, critical-value schedules, and test builders.

Three calibration routes coexist:

* analytic critical values from the Gaussian CLT of the p-th power statistic
  (finite p) or the double-exponential limit of the absolute maximum (sup),
  with every vanishing correction term set to zero;
* Monte-Carlo-exact critical values: conservative empirical quantiles of
  simulated null statistics (deterministic given a plan);
* combined ("max of scaled norms") tests whose member critical values and
  global scale are calibrated on one shared simulated null sample, so the
  joint law behind the size constraint is coherent.

All test objects are frozen dataclasses implementing a tiny protocol:
``d``, ``label``, ``norm_exponents()``, ``coordinate_indices()`` and
``decide_batch(norms, coords)`` operating on equal-shape arrays.
"""

from __future__ import annotations

import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .errors import CalibrationError, ConfigError, DomainError
from .gaussmath import gauss_moments, std_normal_cdf, std_normal_quantile
from .mc import MonteCarloPlan, empirical_upper_quantile, simulate_null_statistics
from .norms import SUP, Exponent, batch_norms, parse_exponent

__all__ = [
    "CalibrationWarning",
    "asymptotic_critical_value",
    "sup_asymptotic_critical_value",
    "minimax_critical_value",
    "AsymptoticFiniteSchedule",
    "AsymptoticSupSchedule",
    "MonteCarloSchedule",
    "mc_calibrate",
    "AlphaBudget",
    "geometric_budget",
    "custom_budget",
    "member_exponents",
    "PNormTest",
    "CombinedTest",
    "MinimaxAdaptiveTest",
    "EnhancedTest",
    "UnionTest",
    "ConstantTest",
    "make_single_test",
    "build_combined",
    "build_minimax_adaptive",
    "mc_scale_minimax",
    "build_enhanced",
    "is_permutation_symmetric",
    "reject_matrix",
    "evaluate",
    "save_test",
    "load_test",
]


class CalibrationWarning(UserWarning):
    """Non-fatal notice that a finite-d surrogate of an asymptotic
    side condition is violated, or that an unverifiable input is accepted."""


# ---------------------------------------------------------------------------
# Critical values
# ---------------------------------------------------------------------------

_LOG_SPACE_P = 30.0  # beyond this, assemble the CLT bracket in log space


def _clt_bracket_root(p: float, d: int, z: float) -> float:
    """[z * sqrt(d * var|Z|^p) + d * E|Z|^p] ** (1/p), overflow-safe."""
    if int(d) < 1:
        raise DomainError("dimension must be >= 1")
    mom = gauss_moments(p)
    if p <= _LOG_SPACE_P and math.isfinite(mom.variance):
        bracket = z * math.sqrt(d * mom.variance) + d * mom.mean
        if bracket <= 0.0:
            raise CalibrationError(
                "analytic critical value undefined: the centering bracket is "
                "non-positive at this (p, d, alpha); use Monte Carlo calibration"
            )
        return bracket ** (1.0 / p)
    log_mu_term = math.log(d) + mom.log_mean
    if z == 0.0:
        return math.exp(log_mu_term / p)
    log_sd_term = math.log(abs(z)) + 0.5 * (math.log(d) + mom.log_variance)
    if z > 0.0:
        log_bracket = np.logaddexp(log_mu_term, log_sd_term)
    else:
        if log_sd_term >= log_mu_term:
            raise CalibrationError(
                "analytic critical value undefined: the centering bracket is "
                "non-positive at this (p, d, alpha); use Monte Carlo calibration"
            )
        log_bracket = log_mu_term + math.log1p(-math.exp(log_sd_term - log_mu_term))
    return math.exp(float(log_bracket) / p)


def asymptotic_critical_value(p: float, d: int, alpha: float) -> float:
    """CLT critical value of the p-norm test at level alpha (finite p),
    with the vanishing correction set to zero."""
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    z = std_normal_quantile(1.0 - alpha)
    return _clt_bracket_root(float(p), int(d), z)


def sup_asymptotic_critical_value(d: int, alpha: float) -> float:
    """Double-exponential-limit critical value of the sup-norm test.

    Requires d >= 3 so that the log log d norming is positive at working
    precision.
    """
    d = int(d)
    if d < 3:
        raise DomainError("sup-norm asymptotic critical value requires d >= 3")
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    root = math.sqrt(2.0 * math.log(d))
    val = root
    val -= (math.log(math.log(d)) + math.log(4.0 * math.pi)) / (2.0 * root)
    val -= math.log(-math.log1p(-alpha) / 2.0) / root
    return val


def minimax_critical_value(p: float, d: int, margin: float) -> float:
    """Analytic critical value with an explicit separation margin in place of
    the normal quantile; used by the minimax-adaptive construction."""
    margin = float(margin)
    if not (margin > 0.0 and math.isfinite(margin)):
        raise DomainError(f"margin must be a positive real, got {margin!r}")
    return _clt_bracket_root(float(p), int(d), margin)


@dataclass(frozen=True)
class AsymptoticFiniteSchedule:
    """Critical-value schedule from the finite-p CLT formula."""

    exponent: Exponent
    alpha: float
    kind: str = "asymptotic_finite"

    def value(self, d: int) -> float:
        return asymptotic_critical_value(self.exponent.p, d, self.alpha)

    @property
    def provenance(self) -> str:
        return f"asymptotic_finite(p={self.exponent.p:g}, alpha={self.alpha:g})"


@dataclass(frozen=True)
class AsymptoticSupSchedule:
    """Critical-value schedule from the absolute-maximum limit law."""

    alpha: float
    kind: str = "asymptotic_sup"
    exponent: Exponent = SUP

    def value(self, d: int) -> float:
        return sup_asymptotic_critical_value(d, self.alpha)

    @property
    def provenance(self) -> str:
        return f"asymptotic_sup(alpha={self.alpha:g})"


@dataclass(frozen=True)
class MonteCarloSchedule:
    """Monte-Carlo-exact critical value, valid for one dimension only."""

    exponent: Exponent
    alpha: float
    d: int
    critical_value: float
    plan_descriptor: str
    kind: str = "monte_carlo"

    def value(self, d: int) -> float:
        if int(d) != self.d:
            raise DomainError(
                f"Monte Carlo schedule was calibrated at d={self.d}, not d={d}"
            )
        return self.critical_value

    @property
    def provenance(self) -> str:
        return f"monte_carlo({self.plan_descriptor})"


def mc_calibrate(
    exponent: Exponent,
    d: int,
    alpha: float,
    plan: MonteCarloPlan,
    workers: int = 1,
) -> MonteCarloSchedule:
    """Empirical critical value of one norm statistic under the null.

    The critical value is the ceil(R*(1-alpha))-th order statistic of R
    simulated null statistics; deterministic for a fixed plan.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if plan.replications < 1000:
        raise ConfigError("Monte Carlo calibration needs at least 1000 replications")
    if alpha * plan.replications < 10:
        raise ConfigError(
            "Monte Carlo calibration needs alpha * replications >= 10 for a "
            "meaningful tail order statistic"
        )
    stats = simulate_null_statistics(d, [exponent], plan, workers=workers)[exponent]
    kappa = empirical_upper_quantile(stats, alpha)
    return MonteCarloSchedule(
        exponent=exponent,
        alpha=alpha,
        d=int(d),
        critical_value=kappa,
        plan_descriptor=plan.descriptor(),
    )


# ---------------------------------------------------------------------------
# Alpha budgets and member exponents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlphaBudget:
    """Per-member size allocation of a combined test.

    ``alphas[j]`` is the marginal level of member j (0-based, ordered by
    exponent).  The geometric generator spreads a ``1 - last_share`` fraction
    of the total level over the first ``m - 1`` members proportionally to a
    geometric mass function with the given success parameter, and puts
    ``last_share`` of the level on the largest exponent.
    """

    alphas: tuple[float, ...]
    generator: str = "custom"
    success: float | None = None
    last_share: float | None = None

    def __post_init__(self):
        if len(self.alphas) < 1:
            raise DomainError("budget needs at least one member")
        for a in self.alphas:
            if not (0.0 < a < 1.0):
                raise DomainError(f"every member level must lie in (0, 1), got {a!r}")
        if not (0.0 < self.total < 1.0):
            raise DomainError("total level must lie in (0, 1)")

    @property
    def total(self) -> float:
        return float(math.fsum(self.alphas))

    @property
    def member_count(self) -> int:
        return len(self.alphas)

    def limit_alpha(self, index: int) -> float:
        """Large-dimension limit of the member level (0-based index).

        Exact for the geometric generator; for custom budgets the finite
        allocation itself is returned with a warning, since no limit rule is
        known.
        """
        m = self.member_count
        if not (0 <= index < m):
            raise DomainError(f"member index out of range: {index!r}")
        if self.generator == "geometric":
            if index == m - 1:
                return self.last_share * self.total
            head = (1.0 - self.last_share) * self.total
            return head * self.success * (1.0 - self.success) ** index
        warnings.warn(
            "custom budget has no declared limit rule; using the finite "
            "allocation as its own limit",
            CalibrationWarning,
            stacklevel=2,
        )
        return self.alphas[index]


def geometric_budget(
    members: int, alpha: float, success: float = 0.5, last_share: float = 0.5
) -> AlphaBudget:
    """Geometric size allocation over ``members`` ordered exponents."""
    members = int(members)
    if members < 2:
        raise DomainError("geometric budget requires at least two members")
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    for name, v in (("success", success), ("last_share", last_share)):
        if not (0.0 < v < 1.0):
            raise DomainError(f"{name} must lie in (0, 1), got {v!r}")
    weights = [success * (1.0 - success) ** j for j in range(members - 1)]
    wsum = math.fsum(weights)
    head = (1.0 - last_share) * alpha
    alphas = tuple(head * w / wsum for w in weights) + (last_share * alpha,)
    return AlphaBudget(
        alphas=alphas, generator="geometric", success=success, last_share=last_share
    )


def custom_budget(alphas: Sequence[float]) -> AlphaBudget:
    """Budget from explicit member levels (accepted with a warning: the
    side conditions a combined test needs are only guaranteed for the
    geometric generator)."""
    warnings.warn(
        "custom alpha budgets are accepted but their large-dimension side "
        "conditions cannot be verified",
        CalibrationWarning,
        stacklevel=2,
    )
    return AlphaBudget(alphas=tuple(float(a) for a in alphas), generator="custom")


def member_exponents(d: int, preset: str = "exp") -> tuple[int, tuple[float, ...]]:
    """Member count and exponents of the combined test for dimension d.

    ``exp`` preset: m = ceil(log log(d^6)) members with exponents
    ``e**(j-1) + 1`` (so the first member is the Euclidean norm).
    ``linear`` preset: m = ceil(3 log d) + 1 members with exponents j + 1.
    """
    d = int(d)
    if d < 3:
        raise DomainError("member presets require d >= 3")
    if preset == "exp":
        m = math.ceil(math.log(6.0 * math.log(d)))
        exps = tuple(math.exp(j) + 1.0 for j in range(m))
    elif preset == "linear":
        m = math.ceil(3.0 * math.log(d)) + 1
        exps = tuple(float(j + 2) for j in range(m))
    else:
        raise DomainError(f"unknown member preset {preset!r} (use 'exp' or 'linear')")
    return m, exps


# ---------------------------------------------------------------------------
# Test objects
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PNormTest:
    """Single norm test: reject when the statistic reaches the critical value."""

    d: int
    exponent: Exponent
    critical_value: float
    alpha: float
    provenance: str = ""

    @property
    def label(self) -> str:
        return self.exponent.label

    def norm_exponents(self) -> tuple[Exponent, ...]:
        return (self.exponent,)

    def coordinate_indices(self) -> tuple[int, ...]:
        return ()

    def decide_batch(self, norms: Mapping[Exponent, np.ndarray], coords=None):
        return np.asarray(norms[self.exponent]) >= self.critical_value


@dataclass(frozen=True)
class CombinedTest:
    """Max of scaled member norms with an exact-size multiplier.

    Rejects when ``max_j ||y||_{p_j} / kappa_j >= scale``; ``scale <= 1``
    restores exact size after the conservative union allocation.
    """

    d: int
    exponents: tuple[float, ...]
    kappas: tuple[float, ...]
    scale: float
    alpha: float
    budget: AlphaBudget
    calibration_size: float = float("nan")
    provenance: str = ""

    @property
    def label(self) -> str:
        return f"combined(m={len(self.exponents)})"

    def norm_exponents(self) -> tuple[Exponent, ...]:
        return tuple(Exponent.finite(p) for p in self.exponents)

    def coordinate_indices(self) -> tuple[int, ...]:
        return ()

    def ratio_statistic(self, norms: Mapping[Exponent, np.ndarray]) -> np.ndarray:
        parts = [
            np.asarray(norms[Exponent.finite(p)]) / k
            for p, k in zip(self.exponents, self.kappas)
        ]
        return np.maximum.reduce(parts)

    def decide_batch(self, norms: Mapping[Exponent, np.ndarray], coords=None):
        return self.ratio_statistic(norms) >= self.scale


@dataclass(frozen=True)
class MinimaxAdaptiveTest:
    """Max over integer-norm members with analytic critical values.

    With ``threshold = 1`` this is the separation-margin construction whose
    size vanishes with the margin; ``mc_scale_minimax`` replaces the
    threshold by an empirical quantile to pin the size at a target level.
    """

    d: int
    margin: float
    max_power: int
    kappas: tuple[float, ...]
    threshold: float = 1.0
    alpha: float | None = None
    provenance: str = ""

    @property
    def label(self) -> str:
        return f"minimax(pmax={self.max_power})"

    def norm_exponents(self) -> tuple[Exponent, ...]:
        return tuple(Exponent.finite(float(j)) for j in range(1, self.max_power + 1))

    def coordinate_indices(self) -> tuple[int, ...]:
        return ()

    def ratio_statistic(self, norms: Mapping[Exponent, np.ndarray]) -> np.ndarray:
        parts = [
            np.asarray(norms[Exponent.finite(float(j))]) / self.kappas[j - 1]
            for j in range(1, self.max_power + 1)
        ]
        return np.maximum.reduce(parts)

    def decide_batch(self, norms: Mapping[Exponent, np.ndarray], coords=None):
        return self.ratio_statistic(norms) >= self.threshold


@dataclass(frozen=True)
class EnhancedTest:
    """Base test augmented with a one-coordinate spike detector.

    Rejects when the base rejects or the designated coordinate exceeds the
    spike threshold in absolute value, so it dominates the base pointwise.
    """

    base: object
    d: int
    coordinate: int  # 0-based index of the scanned weakest coordinate
    spike_threshold: float
    spike_mean: float

    @property
    def label(self) -> str:
        return f"enhanced({self.base.label})"

    @property
    def alpha(self) -> float:
        return getattr(self.base, "alpha", float("nan"))

    def norm_exponents(self) -> tuple[Exponent, ...]:
        return self.base.norm_exponents()

    def coordinate_indices(self) -> tuple[int, ...]:
        return tuple(dict.fromkeys((self.coordinate,) + self.base.coordinate_indices()))

    def decide_batch(self, norms, coords):
        spike = np.abs(np.asarray(coords[self.coordinate])) >= self.spike_threshold
        return np.asarray(self.base.decide_batch(norms, coords)) | spike


@dataclass(frozen=True)
class UnionTest:
    """Reject when any member rejects (the max-combination of tests)."""

    members: tuple
    name: str = "max-comb"

    @property
    def d(self) -> int:
        return self.members[0].d

    @property
    def label(self) -> str:
        return self.name

    @property
    def alpha(self) -> float:
        return float(math.fsum(getattr(t, "alpha", 0.0) or 0.0 for t in self.members))

    def norm_exponents(self) -> tuple[Exponent, ...]:
        return required_exponents(self.members)

    def coordinate_indices(self) -> tuple[int, ...]:
        return required_coordinates(self.members)

    def decide_batch(self, norms, coords=None):
        out = np.asarray(self.members[0].decide_batch(norms, coords), dtype=bool)
        for t in self.members[1:]:
            out = out | np.asarray(t.decide_batch(norms, coords), dtype=bool)
        return out


@dataclass(frozen=True)
class ConstantTest:
    """Always-accept or always-reject test; useful as a degenerate base."""

    d: int
    always_reject: bool = False

    @property
    def label(self) -> str:
        return "always-reject" if self.always_reject else "never-reject"

    @property
    def alpha(self) -> float:
        return 1.0 if self.always_reject else 0.0

    def norm_exponents(self) -> tuple[Exponent, ...]:
        return ()

    def coordinate_indices(self) -> tuple[int, ...]:
        return ()

    def decide_batch(self, norms, coords=None):
        for arr in (norms or {}).values():
            n = np.shape(arr)
            break
        else:
            if coords:
                n = np.shape(next(iter(coords.values())))
            else:
                raise DomainError("constant test needs at least one statistic column")
        return np.full(n, self.always_reject, dtype=bool)


def make_single_test(
    d: int,
    exponent: Exponent,
    alpha: float,
    method: str = "mc",
    plan: MonteCarloPlan | None = None,
    workers: int = 1,
) -> PNormTest:
    """Single norm test with an asymptotic or Monte-Carlo-exact critical value."""
    if method == "asymptotic":
        if exponent.is_sup:
            schedule = AsymptoticSupSchedule(alpha=alpha)
        else:
            schedule = AsymptoticFiniteSchedule(exponent=exponent, alpha=alpha)
        kappa = schedule.value(d)
        prov = schedule.provenance
    elif method == "mc":
        if plan is None:
            raise ConfigError("Monte Carlo calibration requires a plan")
        schedule = mc_calibrate(exponent, d, alpha, plan, workers=workers)
        kappa = schedule.critical_value
        prov = schedule.provenance
    else:
        raise ConfigError(f"unknown calibration method {method!r}")
    return PNormTest(d=int(d), exponent=exponent, critical_value=kappa,
                     alpha=alpha, provenance=prov)


def build_combined(
    d: int,
    exponents: Sequence[float],
    budget: AlphaBudget,
    plan: MonteCarloPlan,
    workers: int = 1,
    stats: Mapping[Exponent, np.ndarray] | None = None,
) -> CombinedTest:
    """Calibrate a combined test on one shared simulated null sample.

    Member critical values are the empirical quantiles of their own columns;
    the global scale is the empirical quantile of the max-ratio statistic on
    the same sample.  Selecting the order statistic directly is the exact
    fixed point of a bisection on the empirical size, which is a step
    function crossing the target between adjacent order statistics.

    ``stats`` may carry precomputed columns from
    :func:`simulate_null_statistics` under the *same* plan, letting several
    calibrations share one simulated sample (the noise a plan generates does
    not depend on which statistics are evaluated on it).
    """
    exps = tuple(float(p) for p in exponents)
    if len(exps) != budget.member_count:
        raise DomainError("budget length must match the number of exponents")
    if any(not (p > 0.0) for p in exps) or any(
        exps[i] >= exps[i + 1] for i in range(len(exps) - 1)
    ):
        raise DomainError("exponents must be strictly increasing positive reals")
    if plan.replications < 1000:
        raise ConfigError("combined calibration needs at least 1000 replications")
    if min(budget.alphas) * plan.replications < 10:
        raise ConfigError(
            "smallest member level needs alpha_j * replications >= 10"
        )
    members = [Exponent.finite(p) for p in exps]
    if stats is None:
        stats = simulate_null_statistics(d, members, plan, workers=workers)
    elif any(e not in stats for e in members) or any(
        np.asarray(stats[e]).shape != (plan.replications,) for e in members
    ):
        raise DomainError("precomputed statistics do not cover the member "
                          "exponents at the plan's replication count")
    kappas = tuple(
        empirical_upper_quantile(stats[e], a) for e, a in zip(members, budget.alphas)
    )
    ratio = np.maximum.reduce(
        [stats[e] / k for e, k in zip(members, kappas)]
    )
    scale_raw = empirical_upper_quantile(ratio, budget.total)
    scale = min(1.0, scale_raw)
    if not scale > 0.0:
        raise AssertionError("combined-test scale search left (0, 1]; "
                             "calibration invariants violated")
    calib_size = float(np.count_nonzero(ratio >= scale)) / plan.replications
    return CombinedTest(
        d=int(d),
        exponents=exps,
        kappas=kappas,
        scale=scale,
        alpha=budget.total,
        budget=budget,
        calibration_size=calib_size,
        provenance=f"mc({plan.descriptor()})"
        + ("" if scale_raw <= 1.0 else " scale clamped to 1"),
    )


def build_minimax_adaptive(d: int, margin: float, max_power: int) -> MinimaxAdaptiveTest:
    """Minimax-adaptive test over integer norms 1..max_power with analytic
    member critical values at the given separation margin.

    Warns (non-fatally) when the finite-d surrogates of its two asymptotic
    side conditions exceed 0.01.
    """
    max_power = int(max_power)
    if max_power < 1:
        raise DomainError("max_power must be >= 1")
    d = int(d)
    union_bound = max_power * std_normal_cdf(-float(margin))
    clt_term = (max_power / math.sqrt(d)) * (1.5 ** (1.5 * max_power))
    if union_bound > 0.01 or clt_term > 0.01:
        warnings.warn(
            "minimax side-condition surrogates are large at this (d, margin, "
            f"max_power): union bound {union_bound:.3g}, CLT term {clt_term:.3g}",
            CalibrationWarning,
            stacklevel=2,
        )
    kappas = tuple(
        minimax_critical_value(float(j), d, margin) for j in range(1, max_power + 1)
    )
    return MinimaxAdaptiveTest(
        d=d, margin=float(margin), max_power=max_power, kappas=kappas,
        provenance=f"analytic(margin={margin:g})",
    )


def mc_scale_minimax(
    test: MinimaxAdaptiveTest,
    alpha: float,
    plan: MonteCarloPlan,
    workers: int = 1,
    stats: Mapping[Exponent, np.ndarray] | None = None,
) -> MinimaxAdaptiveTest:
    """Replace the unit threshold by the empirical null quantile of the
    max-ratio statistic, pinning the size at ``alpha``.

    ``stats`` may carry precomputed columns of the same plan as in
    :func:`build_combined`.
    """
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha!r}")
    if stats is None:
        stats = simulate_null_statistics(test.d, test.norm_exponents(), plan, workers=workers)
    threshold = empirical_upper_quantile(test.ratio_statistic(stats), alpha)
    return replace(
        test,
        threshold=threshold,
        alpha=alpha,
        provenance=test.provenance + f" mc-scaled({plan.descriptor()})",
    )


# ---------------------------------------------------------------------------
# Batch evaluation
# ---------------------------------------------------------------------------


def required_exponents(tests: Sequence) -> tuple[Exponent, ...]:
    out: dict[Exponent, None] = {}
    for t in tests:
        for e in t.norm_exponents():
            out[e] = None
    return tuple(out)


def required_coordinates(tests: Sequence) -> tuple[int, ...]:
    out: dict[int, None] = {}
    for t in tests:
        for i in t.coordinate_indices():
            out[i] = None
    return tuple(out)


def reject_matrix(tests: Sequence, Y: np.ndarray) -> np.ndarray:
    """(n_tests, replications) rejection decisions, computing each needed
    norm exactly once per chunk."""
    Y = np.asarray(Y, dtype=float)
    exps = required_exponents(tests)
    norms = batch_norms(Y, exps) if exps else {}
    coords = {i: Y[:, i] for i in required_coordinates(tests)}
    if not exps and not coords:
        # only constant tests: report shape via a dummy statistic column
        norms = {SUP: np.zeros(Y.shape[0])}
    return np.stack([np.asarray(t.decide_batch(norms, coords), dtype=bool) for t in tests])


def evaluate(test, y) -> bool:
    """Deterministic accept/reject decision of one test on one observation."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size != test.d:
        raise DomainError(
            f"observation has length {y.size if y.ndim == 1 else y.shape}, "
            f"test expects {test.d}"
        )
    return bool(reject_matrix([test], y[None, :])[0, 0])


# ---------------------------------------------------------------------------
# Enhancement: weakest-coordinate scan
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _SpikeScanTask:
    """Per-chunk power of ``base`` against a spike on every coordinate.

    Uses incremental one-coordinate updates of the member power sums, so the
    full d-coordinate scan costs a small constant times one norm pass.
    """

    base: object
    d: int
    spike_mean: float
    seed: int
    sampler: object

    def __call__(self, chunk_index: int, start: int, size: int) -> np.ndarray:
        from .mc import chunk_generator
        from .workspace import process_workspace

        ws = process_workspace()
        rng = chunk_generator(self.seed, chunk_index)
        shape = (size, self.d)
        eps = self.sampler.draw(rng, shape, out=ws.buf("eps", shape))
        A = ws.buf("scan.abs", shape)
        np.abs(eps, out=A)
        shifted = ws.buf("scan.shifted", shape)
        np.add(eps, self.spike_mean, out=shifted)
        np.abs(shifted, out=shifted)
        exps = self.base.norm_exponents()
        norms_matrix: dict[Exponent, np.ndarray] = {}
        ap = ws.buf("scan.pow", shape)
        for k, e in enumerate(exps):
            if e.is_sup:
                order = np.argsort(A, axis=1)
                top1 = A[np.arange(size), order[:, -1]]
                top2 = A[np.arange(size), order[:, -2]] if self.d > 1 else np.zeros(size)
                rest_max = np.where(
                    np.arange(self.d)[None, :] == order[:, -1][:, None],
                    top2[:, None],
                    top1[:, None],
                )
                norms_matrix[e] = np.maximum(rest_max, shifted)
            else:
                out = ws.buf(f"scan.norm.{k}", shape)
                with np.errstate(over="ignore"):
                    np.power(A, e.p, out=ap)
                    total = ap.sum(axis=1)
                    np.power(shifted, e.p, out=out)
                    out -= ap
                    out += total[:, None]
                    np.clip(out, 0.0, None, out=out)
                    np.power(out, 1.0 / e.p, out=out)
                norms_matrix[e] = out
        decisions = np.asarray(self.base.decide_batch(norms_matrix, {}), dtype=bool)
        return decisions.sum(axis=0).astype(np.int64)


def is_permutation_symmetric(test) -> bool:
    """Whether the rejection region is invariant under coordinate
    permutations (true for every pure norm-based test)."""
    if isinstance(test, (PNormTest, CombinedTest, MinimaxAdaptiveTest, ConstantTest)):
        return True
    if isinstance(test, UnionTest):
        return all(is_permutation_symmetric(t) for t in test.members)
    return False


def build_enhanced(
    base, d: int, plan: MonteCarloPlan, workers: int = 1
) -> EnhancedTest:
    """Augment ``base`` with a spike detector on its weakest coordinate.

    The spike mean is ``sqrt(log(d)/2)`` and the detector threshold is its
    square root.  For a permutation-symmetric base every coordinate attains
    the minimal spike power, so the tie-break picks coordinate 0 without
    scanning.  Otherwise the weakest coordinate is found by a full Monte
    Carlo scan at a tenth of the plan's replications followed by
    re-estimation of the ten lowest-power candidates at the full count;
    remaining ties resolve to the smallest index.
    """
    from .mc import run_chunked

    d = int(d)
    if d < 2:
        raise DomainError("enhancement requires d >= 2")
    spike_mean = math.sqrt(math.log(d) / 2.0)
    spike_threshold = math.sqrt(spike_mean)
    if (
        is_permutation_symmetric(base)
        or not base.norm_exponents()
        or base.coordinate_indices()
    ):
        # Exchangeable or norm-free bases: spike power is constant across
        # coordinates, so the smallest index is a minimizer.  Coordinate-aware
        # bases are outside the fast scan; index 0 is the documented fallback.
        coordinate = 0
    else:
        scan_plan = plan.with_replications(max(plan.replications // 10, 1))
        task = _SpikeScanTask(
            base=base, d=d, spike_mean=spike_mean, seed=scan_plan.seed,
            sampler=scan_plan.sampler,
        )
        counts = run_chunked(task, scan_plan, workers=workers)
        total = np.sum(counts, axis=0)
        order = np.argsort(total, kind="stable")
        candidates = order[: min(10, d)]
        from .power import estimate_rejection  # late import to avoid a cycle

        best_rate, coordinate = None, None
        for i in sorted(int(c) for c in candidates):
            theta = np.zeros(d)
            theta[i] = spike_mean
            rate, _ = estimate_rejection(base, theta, plan, workers=workers)
            if best_rate is None or rate < best_rate:
                best_rate, coordinate = rate, i
    return EnhancedTest(
        base=base, d=d, coordinate=int(coordinate),
        spike_threshold=spike_threshold, spike_mean=spike_mean,
    )


# ---------------------------------------------------------------------------
# Plain-text calibration artifacts
# ---------------------------------------------------------------------------

_SCHEMA = "pnormlab-test/1"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_list(xs: Sequence[float]) -> str:
    return ",".join(_fmt(x) for x in xs)


def save_test(test, path) -> None:
    """Serialize a single/combined/minimax test to a key=value text file."""
    buf = io.StringIO()
    w = buf.write
    w(f"schema = {_SCHEMA}\n")
    if isinstance(test, PNormTest):
        w("kind = single\n")
        w(f"d = {test.d}\n")
        w(f"exponent = {'sup' if test.exponent.is_sup else _fmt(test.exponent.p)}\n")
        w(f"alpha = {_fmt(test.alpha)}\n")
        w(f"critical_value = {_fmt(test.critical_value)}\n")
        w(f"provenance = {test.provenance}\n")
    elif isinstance(test, CombinedTest):
        w("kind = combined\n")
        w(f"d = {test.d}\n")
        w(f"alpha = {_fmt(test.alpha)}\n")
        w(f"exponents = {_fmt_list(test.exponents)}\n")
        w(f"alphas = {_fmt_list(test.budget.alphas)}\n")
        w(f"budget_generator = {test.budget.generator}\n")
        if test.budget.generator == "geometric":
            w(f"budget_success = {_fmt(test.budget.success)}\n")
            w(f"budget_last_share = {_fmt(test.budget.last_share)}\n")
        w(f"kappas = {_fmt_list(test.kappas)}\n")
        w(f"scale = {_fmt(test.scale)}\n")
        w(f"calibration_size = {_fmt(test.calibration_size)}\n")
        w(f"provenance = {test.provenance}\n")
    elif isinstance(test, MinimaxAdaptiveTest):
        w("kind = minimax\n")
        w(f"d = {test.d}\n")
        w(f"margin = {_fmt(test.margin)}\n")
        w(f"max_power = {test.max_power}\n")
        w(f"kappas = {_fmt_list(test.kappas)}\n")
        w(f"threshold = {_fmt(test.threshold)}\n")
        if test.alpha is not None:
            w(f"alpha = {_fmt(test.alpha)}\n")
        w(f"provenance = {test.provenance}\n")
    else:
        raise DomainError(f"cannot serialize test of type {type(test).__name__}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(buf.getvalue())


def _parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"malformed artifact line: {line!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def load_test(path):
    """Reconstruct a serialized test from :func:`save_test` output."""
    with open(path, "r", encoding="utf-8") as fh:
        kv = _parse_kv(fh.read())
    if kv.get("schema") != _SCHEMA:
        raise ConfigError(f"unsupported artifact schema: {kv.get('schema')!r}")
    kind = kv.get("kind")
    try:
        if kind == "single":
            return PNormTest(
                d=int(kv["d"]),
                exponent=parse_exponent(kv["exponent"]),
                critical_value=float(kv["critical_value"]),
                alpha=float(kv["alpha"]),
                provenance=kv.get("provenance", ""),
            )
        if kind == "combined":
            exps = tuple(float(x) for x in kv["exponents"].split(","))
            alphas = tuple(float(x) for x in kv["alphas"].split(","))
            gen = kv.get("budget_generator", "custom")
            if gen == "geometric":
                budget = AlphaBudget(
                    alphas=alphas, generator="geometric",
                    success=float(kv["budget_success"]),
                    last_share=float(kv["budget_last_share"]),
                )
            else:
                budget = AlphaBudget(alphas=alphas, generator="custom")
            return CombinedTest(
                d=int(kv["d"]),
                exponents=exps,
                kappas=tuple(float(x) for x in kv["kappas"].split(",")),
                scale=float(kv["scale"]),
                alpha=float(kv["alpha"]),
                budget=budget,
                calibration_size=float(kv.get("calibration_size", "nan")),
                provenance=kv.get("provenance", ""),
            )
        if kind == "minimax":
            return MinimaxAdaptiveTest(
                d=int(kv["d"]),
                margin=float(kv["margin"]),
                max_power=int(kv["max_power"]),
                kappas=tuple(float(x) for x in kv["kappas"].split(",")),
                threshold=float(kv["threshold"]),
                alpha=float(kv["alpha"]) if "alpha" in kv else None,
                provenance=kv.get("provenance", ""),
            )
    except KeyError as exc:
        raise ConfigError(f"artifact is missing field {exc}") from exc
    raise ConfigError(f"unknown artifact kind: {kind!r}")
