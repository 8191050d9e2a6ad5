"""p-norm statistics: the Exponent tag type and overflow-safe evaluation.

The supremum norm is a distinct tag (`SUP`), never a large float stand-in.
Finite-exponent norms are evaluated in max-factored form,

    ||y||_p = m * (sum (|y_i|/m)^p)^(1/p),   m = max_i |y_i|,

so arbitrarily large exponents (the power lab uses p beyond 55 at d in the
hundreds of thousands) cannot overflow.

`batch_norms` is the hot path of the Monte Carlo engine: it evaluates a
whole list of exponents on a replication-by-dimension matrix in-place on
workspace buffers, walking small integer exponents through one sequential
multiplication chain and sharing the elementwise log across non-integer
exponents.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DomainError
from .workspace import Workspace

__all__ = ["Exponent", "SUP", "parse_exponent", "p_norm_stat", "batch_norms"]

_MAX_INT_CHAIN = 16  # small integer exponents evaluated by multiplication


@dataclass(frozen=True)
class Exponent:
    """Norm exponent: a positive real, or the supremum norm when p is None."""

    p: float | None

    def __post_init__(self):
        if self.p is not None:
            p = float(self.p)
            if not (p > 0.0 and math.isfinite(p)):
                raise DomainError(f"finite norm exponent must be > 0, got {self.p!r}")
            object.__setattr__(self, "p", p)

    @staticmethod
    def finite(p: float) -> "Exponent":
        if p is None:
            raise DomainError("finite exponent requires a positive real")
        return Exponent(float(p))

    @property
    def is_sup(self) -> bool:
        return self.p is None

    @property
    def label(self) -> str:
        if self.is_sup:
            return "sup"
        p = self.p
        if float(p).is_integer():
            return f"p={int(p)}"
        return f"p={p:.6g}"


SUP = Exponent(None)


def parse_exponent(text: str) -> Exponent:
    """Parse 'sup'/'inf' or a positive real."""
    t = str(text).strip().lower()
    if t in ("sup", "inf", "max", "infinity"):
        return SUP
    try:
        return Exponent.finite(float(t))
    except (TypeError, ValueError) as exc:
        raise DomainError(f"cannot parse norm exponent from {text!r}") from exc


def p_norm_stat(y, exponent: Exponent) -> float:
    """Norm statistic of a single observation vector.

    Returns 0.0 on the zero vector; raises DomainError on an empty vector.
    """
    if not isinstance(exponent, Exponent):
        raise DomainError(f"exponent must be an Exponent, got {type(exponent)!r}")
    a = np.abs(np.asarray(y, dtype=float))
    if a.ndim != 1 or a.size == 0:
        raise DomainError("observation vector must be one-dimensional and non-empty")
    m = float(a.max())
    if exponent.is_sup:
        return m
    if m == 0.0:
        return 0.0
    z = a / m
    p = exponent.p
    return m * float(np.sum(z**p)) ** (1.0 / p)


def _is_chain_exponent(e: Exponent) -> bool:
    return (not e.is_sup) and float(e.p).is_integer() and e.p <= _MAX_INT_CHAIN


def batch_norms(
    Y: np.ndarray,
    exponents: Sequence[Exponent],
    workspace: Workspace | None = None,
) -> dict[Exponent, np.ndarray]:
    """Norm statistics of every row of ``Y`` for every requested exponent.

    Returns a dict keyed by exponent with float arrays of length
    ``Y.shape[0]``; rows that are identically zero get statistic 0.  When a
    workspace is supplied, all large intermediates live on its reusable
    buffers and the call performs no large allocations in steady state.
    """
    Y = np.asarray(Y, dtype=float)
    if Y.ndim != 2 or Y.shape[1] == 0:
        raise DomainError("batch_norms expects a non-empty (replications, d) matrix")
    ws = workspace if workspace is not None else Workspace()
    shape = Y.shape

    Z = ws.buf("norms.scaled", shape)
    np.abs(Y, out=Z)
    m = Z.max(axis=1)
    safe_m = np.where(m > 0.0, m, 1.0)
    Z /= safe_m[:, None]

    out: dict[Exponent, np.ndarray] = {}
    power_sums: dict[float, np.ndarray] = {}

    chain_targets = sorted({int(e.p) for e in exponents if _is_chain_exponent(e)})
    if chain_targets:
        top = chain_targets[-1]
        if 1 in chain_targets:
            power_sums[1.0] = Z.sum(axis=1)
        if top >= 2:
            chain = ws.buf("norms.chain", shape)
            np.copyto(chain, Z)
            for j in range(2, top + 1):
                np.multiply(chain, Z, out=chain)
                if j in chain_targets:
                    power_sums[float(j)] = chain.sum(axis=1)

    other = [e for e in exponents if not e.is_sup and not _is_chain_exponent(e)]
    if other:
        logz = ws.buf("norms.log", shape)
        with np.errstate(divide="ignore"):
            np.log(Z, out=logz)
        work = ws.buf("norms.work", shape)
        for e in other:
            if e.p in power_sums:
                continue
            np.multiply(logz, e.p, out=work)
            np.exp(work, out=work)
            power_sums[e.p] = work.sum(axis=1)

    for e in exponents:
        if e.is_sup:
            out[e] = m.copy()
        else:
            out[e] = m * power_sums[e.p] ** (1.0 / e.p)
    return out


class ShiftedNormKernel:
    """Incremental norm evaluation for mean shifts supported on few coordinates.

    Given a noise chunk ``eps`` and a sparse unit signal (support indices plus
    values), the statistics of ``eps + a * signal`` for many scales ``a`` are
    obtained from one full pass over ``eps`` plus O(replications x support)
    work per scale.  Power sums are kept unfactored; if a sum overflows, the
    kernel falls back to the exact max-factored full evaluation for that
    scale, so results are always finite and correct.
    """

    def __init__(
        self,
        eps: np.ndarray,
        support: np.ndarray,
        support_values: np.ndarray,
        exponents: Sequence[Exponent],
        workspace: Workspace | None = None,
    ):
        self.eps = np.asarray(eps, dtype=float)
        self.support = np.asarray(support, dtype=np.intp)
        self.support_values = np.asarray(support_values, dtype=float)
        self.exponents = tuple(exponents)
        self._ws = workspace if workspace is not None else Workspace()
        shape = self.eps.shape

        A = self._ws.buf("kernel.abs", shape)
        np.abs(self.eps, out=A)
        self._eps_support = self.eps[:, self.support].copy()
        abs_support = np.abs(self._eps_support)
        self._sum_rest: dict[Exponent, np.ndarray] = {}
        finite = [e for e in self.exponents if not e.is_sup]
        if finite:
            work = self._ws.buf("kernel.work", shape)
            for e in finite:
                with np.errstate(over="ignore", invalid="ignore"):
                    np.power(A, e.p, out=work)
                    total = work.sum(axis=1)
                    on_support = (abs_support ** e.p).sum(axis=1)
                    # inf - inf from overflowed sums becomes nan and routes
                    # the affected scale to the exact factored fallback
                    self._sum_rest[e] = total - on_support
        if any(e.is_sup for e in self.exponents):
            masked = self._ws.buf("kernel.masked", shape)
            np.copyto(masked, A)
            masked[:, self.support] = -1.0
            self._max_rest = masked.max(axis=1)
        else:
            self._max_rest = None

    def norms_at(self, scale: float) -> dict[Exponent, np.ndarray]:
        shifted = np.abs(self._eps_support + scale * self.support_values[None, :])
        out: dict[Exponent, np.ndarray] = {}
        fallback: np.ndarray | None = None
        for e in self.exponents:
            if e.is_sup:
                out[e] = np.maximum(self._max_rest, shifted.max(axis=1))
                continue
            with np.errstate(over="ignore", invalid="ignore"):
                s = self._sum_rest[e] + (shifted ** e.p).sum(axis=1)
                np.clip(s, 0.0, None, out=s)
                vals = s ** (1.0 / e.p)
            if not np.all(np.isfinite(vals)):
                if fallback is None:
                    fallback = self.eps.copy()
                    fallback[:, self.support] += scale * self.support_values
                vals = batch_norms(fallback, [e])[e]
            out[e] = vals
        return out
