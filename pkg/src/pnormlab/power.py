"""Monte Carlo size/power estimation and the numerical-study harness.

Common random numbers: within one estimation call every test and every
signal scale is evaluated on the same simulated noise; RNG streams are
keyed on (seed, chunk, replication) only.  This sharpens ordering
comparisons between tests at the cost of correlated estimates, which the
reported per-cell standard errors do not account for (they are the usual
binomial ones).

Sparse signal families are evaluated through incremental one-pass kernels:
the null power sums are computed once per chunk and each scale costs only
O(replications x support).  The result is algebraically identical to the
direct evaluation and differs at most in the last floating-point digit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .consistency import AlternativeFamily, dense, power_sparse, semi_sparse, sparse
from .engine import (
    CombinedTest,
    PNormTest,
    UnionTest,
    build_combined,
    geometric_budget,
    make_single_test,
    member_exponents,
    required_coordinates,
    required_exponents,
)
from .errors import DomainError, RankError
from .gaussmath import std_normal_quantile, std_normal_sf
from .mc import (
    MonteCarloPlan,
    chunk_generator,
    empirical_upper_quantile,
    run_chunked,
    simulate_null_statistics,
)
from .norms import SUP, Exponent, ShiftedNormKernel, batch_norms

__all__ = [
    "PowerRow",
    "PowerTable",
    "estimate_rejection",
    "estimate_rejection_many",
    "power_curve",
    "auto_a_grid",
    "PowerEnhancementReport",
    "pe_demo",
    "GapScanReport",
    "power_gap_scan",
    "default_gap_grid",
    "regression_reduce",
    "EnhancementReport",
    "enhancement_demo",
]

_SPARSE_SUPPORT_FRACTION = 0.2  # incremental kernel below this support share


# ---------------------------------------------------------------------------
# Chunk task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _PowerTask:
    """Per-chunk rejection counts of several tests at several signal scales."""

    d: int
    seed: int
    sampler: object
    tests: tuple
    scales: tuple[float, ...]
    support_idx: np.ndarray | None  # incremental path when support is sparse
    support_vals: np.ndarray | None
    unit_theta: np.ndarray | None  # dense/custom full path

    def __call__(self, chunk_index: int, start: int, size: int) -> np.ndarray:
        from .norms import batch_norms
        from .workspace import process_workspace

        ws = process_workspace()
        rng = chunk_generator(self.seed, chunk_index)
        eps = self.sampler.draw(rng, (size, self.d), out=ws.buf("eps", (size, self.d)))
        exps = required_exponents(self.tests)
        coords = required_coordinates(self.tests)
        counts = np.zeros((len(self.scales), len(self.tests)), dtype=np.int64)
        if self.support_idx is not None:
            kernel = ShiftedNormKernel(
                eps, self.support_idx, self.support_vals, exps, workspace=ws
            )
            sup_map = dict(zip(self.support_idx.tolist(), self.support_vals.tolist()))
            for si, a in enumerate(self.scales):
                norms = kernel.norms_at(a)
                cvals = {
                    i: eps[:, i] + a * sup_map.get(i, 0.0) for i in coords
                }
                if not norms and not cvals:
                    norms = {SUP: np.zeros(size)}
                for ti, t in enumerate(self.tests):
                    counts[si, ti] = int(
                        np.count_nonzero(t.decide_batch(norms, cvals))
                    )
        else:
            ybuf = ws.buf("shifted", (size, self.d))
            row = ws.buf("theta_row", (self.d,))
            for si, a in enumerate(self.scales):
                if a == 0.0:
                    Y = eps
                else:
                    np.multiply(self.unit_theta, a, out=row)
                    np.add(eps, row[None, :], out=ybuf)
                    Y = ybuf
                norms = batch_norms(Y, exps, workspace=ws) if exps else {}
                cvals = {i: Y[:, i] for i in coords}
                if not exps and not cvals:
                    norms = {SUP: np.zeros(size)}
                for ti, t in enumerate(self.tests):
                    counts[si, ti] = int(
                        np.count_nonzero(t.decide_batch(norms, cvals))
                    )
        return counts


def _counts(
    tests: Sequence,
    scales: Sequence[float],
    plan: MonteCarloPlan,
    workers: int,
    support: tuple[np.ndarray, np.ndarray] | None = None,
    unit_theta: np.ndarray | None = None,
) -> np.ndarray:
    d = tests[0].d
    for t in tests:
        if t.d != d:
            raise DomainError("all tests must share the same dimension")
    use_incremental = (
        support is not None and support[0].size <= _SPARSE_SUPPORT_FRACTION * d
    )
    task = _PowerTask(
        d=d,
        seed=plan.seed,
        sampler=plan.sampler,
        tests=tuple(tests),
        scales=tuple(float(a) for a in scales),
        support_idx=support[0] if use_incremental else None,
        support_vals=support[1] if use_incremental else None,
        unit_theta=None if use_incremental else np.asarray(unit_theta, dtype=float),
    )
    per_chunk = run_chunked(task, plan, workers=workers)
    return np.sum(per_chunk, axis=0)


def _rate_se(count: int, r: int) -> tuple[float, float]:
    rate = count / r
    return rate, math.sqrt(rate * (1.0 - rate) / r)


# ---------------------------------------------------------------------------
# Public estimators
# ---------------------------------------------------------------------------


def estimate_rejection(test, theta, plan: MonteCarloPlan, workers: int = 1):
    """Rejection rate of ``test`` against mean vector ``theta`` with its
    binomial standard error.  Deterministic for a fixed plan."""
    return estimate_rejection_many([test], theta, plan, workers=workers)[0]


def estimate_rejection_many(tests: Sequence, theta, plan: MonteCarloPlan, workers: int = 1):
    """Common-random-numbers rejection rates of several tests against one
    mean vector (pass ``theta=0`` or a zero vector for null size)."""
    d = tests[0].d
    theta = np.zeros(d) if np.isscalar(theta) and theta == 0 else np.asarray(theta, dtype=float)
    if theta.shape != (d,):
        raise DomainError(f"theta has shape {theta.shape}, tests expect ({d},)")
    counts = _counts(tests, [1.0], plan, workers, unit_theta=theta)
    return [_rate_se(int(c), plan.replications) for c in counts[0]]


@dataclass(frozen=True)
class PowerRow:
    test: str
    family: str
    scale: float
    d: int
    power: float
    stderr: float
    replications: int


@dataclass(frozen=True)
class PowerTable:
    """Tidy rejection-rate table over (test, scale) cells of one family."""

    rows: tuple[PowerRow, ...]

    HEADER = ("test", "family", "a", "d", "power", "stderr", "replications")

    def to_csv(self, path) -> None:
        from .report import write_csv

        write_csv(
            path,
            self.HEADER,
            [
                (r.test, r.family, r.scale, r.d, r.power, r.stderr, r.replications)
                for r in self.rows
            ],
        )

    def series(self) -> dict[str, tuple[list[float], list[float]]]:
        out: dict[str, tuple[list[float], list[float]]] = {}
        for r in self.rows:
            xs, ys = out.setdefault(r.test, ([], []))
            xs.append(r.scale)
            ys.append(r.power)
        return out

    def cell(self, test: str, scale: float) -> PowerRow:
        for r in self.rows:
            if r.test == test and r.scale == scale:
                return r
        raise KeyError((test, scale))


def power_curve(
    tests: Sequence,
    family: AlternativeFamily,
    a_grid: Sequence[float],
    d: int,
    plan: MonteCarloPlan,
    workers: int = 1,
) -> PowerTable:
    """Estimated power of every test at every scale of one signal family.

    All cells share the same simulated noise (common random numbers).
    """
    d = int(d)
    for t in tests:
        if t.d != d:
            raise DomainError("all tests must be calibrated at the requested d")
    scales = [float(a) for a in a_grid]
    if any(a < 0 for a in scales) or any(
        scales[i] >= scales[i + 1] for i in range(len(scales) - 1)
    ):
        raise DomainError("a_grid must be non-negative and strictly increasing")
    support = family.support(d)
    counts = _counts(
        tests, scales, plan, workers, support=support, unit_theta=family.theta(d)
    )
    rows = []
    for ti, t in enumerate(tests):
        for si, a in enumerate(scales):
            rate, se = _rate_se(int(counts[si, ti]), plan.replications)
            rows.append(
                PowerRow(
                    test=t.label, family=family.label, scale=a, d=d,
                    power=rate, stderr=se, replications=plan.replications,
                )
            )
    return PowerTable(rows=tuple(rows))


_FAMILY_START_SCALE = {
    "dense": 0.25,
    "sparse": 4.0,
    "semi_sparse": 1.0,
    "power_sparse": 1.0,
    "custom": 1.0,
}


def auto_a_grid(
    tests: Sequence,
    family: AlternativeFamily,
    d: int,
    plan: MonteCarloPlan,
    points: int = 32,
    top_power: float = 0.99,
    workers: int = 1,
) -> tuple[float, ...]:
    """Scale grid from 0 to the first doubling at which the fastest test
    clears ``top_power`` (probed at a reduced replication count)."""
    if points < 2:
        raise DomainError("grid needs at least two points")
    probe_plan = plan.with_replications(min(plan.replications, 400))
    hi = _FAMILY_START_SCALE.get(family.kind, 1.0)
    for _ in range(12):
        rates = estimate_rejection_many(
            tests, family.theta(d, hi), probe_plan, workers=workers
        )
        if max(rate for rate, _ in rates) >= top_power:
            break
        hi *= 2.0
    return tuple(np.linspace(0.0, hi, int(points)))


# ---------------------------------------------------------------------------
# Demos and scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerEnhancementReport:
    """Power against the semi-sparse signal of the Euclidean test, the sup
    test, their max-combination, the combined test, and mid exponents."""

    d: int
    alpha2: float
    alpha_inf: float
    rows: tuple[tuple[str, float, float], ...]  # (label, power, stderr)

    def power(self, label: str) -> float:
        for lbl, p, _ in self.rows:
            if lbl == label:
                return p
        raise KeyError(label)

    def stderr(self, label: str) -> float:
        for lbl, _, se in self.rows:
            if lbl == label:
                return se
        raise KeyError(label)


def pe_demo(
    d: int,
    alpha2: float,
    alpha_inf: float,
    plan: MonteCarloPlan,
    calibration_plan: MonteCarloPlan,
    workers: int = 1,
) -> PowerEnhancementReport:
    """Head-to-head power against the semi-sparse signal.

    Estimates, on common random numbers: the Euclidean test at ``alpha2``,
    the sup test at ``alpha_inf``, their max-combination (whose rejection
    event is the per-sample union, so its rate never exceeds the sum of the
    members' rates), the combined test and the 3- and 4-norm tests at the
    pooled level ``alpha2 + alpha_inf``.
    """
    total = float(alpha2) + float(alpha_inf)
    if not (0.0 < total < 1.0):
        raise DomainError("alpha2 + alpha_inf must lie in (0, 1)")
    d = int(d)
    if d < 16:
        raise DomainError("the semi-sparse signal needs d >= 16")
    _, exps = member_exponents(d, "exp")
    wanted = tuple(
        dict.fromkeys(
            [Exponent.finite(2.0), SUP, Exponent.finite(3.0), Exponent.finite(4.0)]
            + [Exponent.finite(p) for p in exps]
        )
    )
    stats = simulate_null_statistics(d, wanted, calibration_plan, workers=workers)

    def _single(exponent, level):
        return PNormTest(
            d=d,
            exponent=exponent,
            critical_value=empirical_upper_quantile(stats[exponent], level),
            alpha=level,
            provenance=f"monte_carlo({calibration_plan.descriptor()})",
        )

    two = _single(Exponent.finite(2.0), alpha2)
    supt = _single(SUP, alpha_inf)
    maxcomb = UnionTest(members=(two, supt), name="max-comb(2,sup)")
    combined = build_combined(
        d, exps, geometric_budget(len(exps), total), calibration_plan, workers,
        stats=stats,
    )
    p3 = _single(Exponent.finite(3.0), total)
    p4 = _single(Exponent.finite(4.0), total)
    tests = [two, supt, maxcomb, combined, p3, p4]
    labels = ["p=2", "sup", "max-comb", "combined", "p=3", "p=4"]
    theta = semi_sparse().theta(d)
    rates = estimate_rejection_many(tests, theta, plan, workers=workers)
    rows = tuple(
        (label, rate, se) for label, (rate, se) in zip(labels, rates)
    )
    return PowerEnhancementReport(d=d, alpha2=float(alpha2), alpha_inf=float(alpha_inf), rows=rows)


@dataclass(frozen=True)
class GapScanReport:
    """Worst observed power shortfall of a combined test against one of its
    members recalibrated standalone at the full level."""

    member_exponent: float
    bound: float
    max_gap: float
    max_gap_stderr: float
    max_gap_label: str
    gaps: tuple[tuple[str, float, float], ...]  # (label, gap, pooled stderr)


def power_gap_scan(
    combined: CombinedTest,
    member_index: int,
    thetas: Sequence[tuple[str, np.ndarray]],
    plan: MonteCarloPlan,
    calibration_plan: MonteCarloPlan,
    workers: int = 1,
) -> GapScanReport:
    """Scan mean vectors for the largest power gap between the standalone
    member test (at the combined test's full level) and the combined test.

    The analytic ceiling on the asymptotic gap is
    ``(quantile(1 - limit member level) - quantile(1 - level)) / sqrt(2 pi)``.
    """
    m = len(combined.exponents)
    if not (0 <= int(member_index) < m):
        raise DomainError(f"member index out of range: {member_index!r}")
    member_index = int(member_index)
    p = combined.exponents[member_index]
    standalone = make_single_test(
        combined.d, Exponent.finite(p), combined.alpha, "mc", calibration_plan, workers
    )
    limit_a = combined.budget.limit_alpha(member_index)
    bound = (
        std_normal_quantile(1.0 - limit_a) - std_normal_quantile(1.0 - combined.alpha)
    ) / math.sqrt(2.0 * math.pi)
    gaps = []
    for label, theta in thetas:
        (r_single, se_s), (r_comb, se_c) = estimate_rejection_many(
            [standalone, combined], theta, plan, workers=workers
        )
        gaps.append((label, r_single - r_comb, math.hypot(se_s, se_c)))
    worst = max(gaps, key=lambda g: g[1])
    return GapScanReport(
        member_exponent=p,
        bound=bound,
        max_gap=worst[1],
        max_gap_stderr=worst[2],
        max_gap_label=worst[0],
        gaps=tuple(gaps),
    )


def default_gap_grid(d: int, points_per_family: int = 15) -> list[tuple[str, np.ndarray]]:
    """Sixty labeled mean vectors spanning the four stock families at scales
    from null to high power."""
    d = int(d)
    fams = [
        (dense(), np.linspace(0.0, 0.4, points_per_family)),
        (sparse(), np.linspace(0.0, 8.0, points_per_family)),
        (semi_sparse(), np.linspace(0.0, 2.5, points_per_family)),
        (power_sparse(4.0), np.linspace(0.0, 2.0, points_per_family)),
    ]
    out = []
    for fam, scales in fams:
        for a in scales:
            out.append((f"{fam.label} a={a:.4g}", fam.theta(d, float(a))))
    return out


def regression_reduce(X, z, tol: float = 1e-10) -> np.ndarray:
    """Reduce a full-rank Gaussian regression to the sequence model.

    Returns ``M b_hat`` where ``M`` is the symmetric PSD square root of
    ``X'X`` and ``b_hat`` the least-squares coefficient; under
    ``z = X b + u`` with standard normal noise the output is
    ``N(M b, I_d)``.  The square root is taken through the symmetric
    eigendecomposition; a relative singular-value tolerance guards rank.
    """
    X = np.asarray(X, dtype=float)
    z = np.asarray(z, dtype=float)
    if X.ndim != 2:
        raise DomainError("design matrix must be two-dimensional")
    n, d = X.shape
    if z.shape != (n,):
        raise DomainError(f"response has shape {z.shape}, expected ({n},)")
    if d > n:
        raise RankError(f"design with d={d} > n={n} cannot have full column rank")
    gram = X.T @ X
    w, v = np.linalg.eigh(gram)
    # the Gram squares the conditioning, so the relative tolerance applies
    # to its eigenvalues: collinear columns land at numerical zero here
    if w[-1] <= 0.0 or w[0] < tol * w[-1]:
        raise RankError(
            "design matrix is numerically rank deficient "
            f"(Gram eigenvalue ratio {max(w[0], 0.0):.3e} / {w[-1]:.3e})"
        )
    sing = np.sqrt(w)
    # M^{-1} X'z = V diag(1/sigma) V' X'z
    return v @ ((v.T @ (X.T @ z)) / sing)


@dataclass(frozen=True)
class EnhancementReport:
    """Size and spike-power comparison of a base test and its enhancement."""

    d: int
    coordinate: int
    spike_mean: float
    spike_threshold: float
    size_base: float
    size_base_stderr: float
    size_enhanced: float
    size_enhanced_stderr: float
    power_base: float
    power_base_stderr: float
    power_enhanced: float
    power_enhanced_stderr: float
    spike_tail_exact: float
    size_inflation_bound: float


def enhancement_demo(d: int, base, plan: MonteCarloPlan, workers: int = 1) -> EnhancementReport:
    """Build the enhanced test and report sizes and spike power.

    ``spike_tail_exact`` is the closed-form detection probability of the
    one-coordinate detector against the spike it targets;
    ``size_inflation_bound`` is its exact null rejection probability, an
    upper bound on the size the enhancement can add.
    """
    from .engine import build_enhanced

    enhanced = build_enhanced(base, d, plan, workers=workers)
    a = enhanced.spike_mean
    t = enhanced.spike_threshold
    theta = np.zeros(int(d))
    theta[enhanced.coordinate] = a
    (sb, sb_se), (se_, se_se) = estimate_rejection_many(
        [base, enhanced], 0, plan, workers=workers
    )
    (pb, pb_se), (pe, pe_se) = estimate_rejection_many(
        [base, enhanced], theta, plan, workers=workers
    )
    return EnhancementReport(
        d=int(d),
        coordinate=enhanced.coordinate,
        spike_mean=a,
        spike_threshold=t,
        size_base=sb,
        size_base_stderr=sb_se,
        size_enhanced=se_,
        size_enhanced_stderr=se_se,
        power_base=pb,
        power_base_stderr=pb_se,
        power_enhanced=pe,
        power_enhanced_stderr=pe_se,
        spike_tail_exact=std_normal_sf(t - a) + std_normal_sf(t + a),
        size_inflation_bound=2.0 * std_normal_sf(t),
    )
