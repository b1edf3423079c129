"""Exact generating-function engine.

Everything in this module is built on two orbit primitives:

* the *complement orbit*: survival complements ``d(n) = 1 - q(n)``
  advanced by the stable one-step map ``d -> 1 - f(1 - d)``, never
  forming ``q`` and subtracting;
* the *paired orbit*: two nearby points advanced together as
  ``(complement of the upper point, gap between the points)``, with
  the gap propagated through closed-form difference expressions per
  offspring family.  The gap never suffers cancellation, so exact
  extinction-time probabilities of size 1e-12 and below come out with
  near-full relative accuracy where naive subtraction of iterates
  would return noise.

Conditioning identities used throughout (start state is one type-1
particle; T is the first generation with an empty population):

    E[prod_j s_j^{Z_j(m)} 1{T <= n}] = F^(m)(s * q(n-m))_1
    E[prod_j s_j^{Z_j(m)} 1{T  = n}] = the paired-orbit gap after m
        steps from the pair (s * q(n-m), s * q(n-m-1))

with componentwise products.  Trees extinct before m contribute
identically to both pair members, so their mass never enters the gap
at all; the construction is exact, not asymptotic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import InvalidMoments, PrecisionLoss, SlowConvergence, UnreachableEvent
from .families import Bernoulli, Geometric, PointMass, Poisson
from .model import (
    ProcessSpec,
    ProductLaw,
    TableLaw,
    pair_diff_map,
    survival_map,
)
from .numerics import (
    neumaier_sum,
    power_complement,
    power_diff,
    richardson_derivative,
)

# heuristic horizon beyond which accumulated 64-bit roundoff in the
# orbit recurrences can reach ~1e-8 relative; deeper runs should use
# precision="extended"
DOUBLE_PRECISION_HORIZON = 10**8


# ---------------------------------------------------------------------------
# terminal-type scalar chain

class _TerminalChain:
    """Scalar view of the terminal type's own offspring law.

    The terminal type only ever produces its own type, so its pgf,
    survival map, and pair-difference map act on scalars.
    """

    def __init__(self, spec: ProcessSpec):
        n = spec.n_types
        law = spec.law(n)
        if isinstance(law, ProductLaw):
            self._marginal = law.children.get(n)
            self._rows = None
        else:
            self._marginal = None
            self._rows = tuple((counts[n - 1], p) for counts, p in law.rows)
        self._n = n

    def pgf(self, x: float) -> float:
        if self._marginal is not None:
            return self._marginal.pgf(x)
        if self._rows is None or not self._rows:
            return 1.0
        return neumaier_sum(p * x**c for c, p in self._rows)

    def survival(self, d: float) -> float:
        if self._marginal is not None:
            return self._marginal.survival(d)
        if self._rows is None:
            return 0.0
        return neumaier_sum(p * power_complement(d, c) for c, p in self._rows)

    def diff(self, da: float, delta: float) -> float:
        if self._marginal is not None:
            return self._marginal.pgf_diff(da, delta)
        a = 1.0 - da
        return neumaier_sum(p * power_diff(a, delta, c)
                            for c, p in self._rows)

    def quadratic_coeff(self) -> float:
        """Half the own-type offspring variance of the terminal type."""
        if self._marginal is not None:
            return self._marginal.variance / 2.0
        mean = sum(p * c for c, p in self._rows)
        second = sum(p * c * c for c, p in self._rows)
        return (second - mean * mean) / 2.0


def _terminal_b(spec: ProcessSpec) -> float:
    b = _TerminalChain(spec).quadratic_coeff()
    if not (b > 0.0 and math.isfinite(b)):
        raise InvalidMoments(f"terminal-type quadratic coefficient {b!r}")
    return b


# ---------------------------------------------------------------------------
# survival table

@dataclass
class SurvivalTable:
    """Tabulated survival complements and extinction-time probabilities.

    ``d[i-1, n]`` is the probability that a population started from one
    type-i particle is still alive at generation n; ``pmf[i-1, n]`` is
    the probability it dies at exactly generation n.  Both come from
    the complement / paired recurrences, so the small entries keep
    relative accuracy.  If the recurrence stalls (entries below 64-bit
    resolution) the table is truncated and ``truncated_at`` records the
    first unusable index.
    """

    spec: ProcessSpec
    n_max: int
    d: np.ndarray
    pmf: np.ndarray
    truncated_at: int | None
    precision: str

    def usable_n(self) -> int:
        """Largest n with valid table entries."""
        return self.n_max if self.truncated_at is None else self.truncated_at - 1

    def _check(self, i: int, n: int) -> None:
        if not 1 <= i <= self.spec.n_types:
            raise ValueError(f"type index {i} outside 1..{self.spec.n_types}")
        if n < 0 or n > self.n_max:
            raise ValueError(f"n={n} outside table range 0..{self.n_max}")
        if self.truncated_at is not None and n >= self.truncated_at:
            raise PrecisionLoss(
                self.truncated_at,
                f"table truncated at step {self.truncated_at}; "
                f"n={n} unavailable (rebuild with precision='extended')",
            )

    def survival(self, i: int, n: int) -> float:
        self._check(i, n)
        return float(self.d[i - 1, n])

    def extinct_by(self, i: int, n: int) -> float:
        self._check(i, n)
        return 1.0 - float(self.d[i - 1, n])


def build_survival_table(spec: ProcessSpec, n_max: int, *,
                         precision: str = "double") -> SurvivalTable:
    """Tabulate d_i(n) and the extinction-time pmf for n = 0..n_max."""
    if n_max < 1:
        raise ValueError("n_max must be at least 1")
    if precision not in ("double", "extended"):
        raise ValueError("precision must be 'double' or 'extended'")
    if precision == "extended":
        return _build_table_extended(spec, n_max)

    n_types = spec.n_types
    d = np.empty((n_types, n_max + 1))
    pmf = np.zeros((n_types, n_max + 1))
    dcur = [1.0] * n_types
    # pi(1) = q(1) = f(0); from there the gap advances by the pair map
    picur = [law.pgf([0.0] * n_types) for law in spec.laws]
    d[:, 0] = dcur
    truncated_at = None
    for n in range(1, n_max + 1):
        dnew = survival_map(spec, dcur)
        if n > 1:
            picur = pair_diff_map(spec, dcur, picur)
        # deterministic feed links keep early death mass at exactly
        # zero, which is structure, not precision loss; a stall only
        # counts once the complement has left 1
        stalled = any(
            dnew[i] > dcur[i]
            or not (dnew[i] > 0.0)
            or (dcur[i] < 1.0
                and (dnew[i] == dcur[i] or not (picur[i] > 0.0)))
            for i in range(n_types)
        )
        if stalled:
            truncated_at = n
            d[:, n:] = np.nan
            pmf[:, n:] = np.nan
            break
        d[:, n] = dnew
        pmf[:, n] = picur
        dcur = list(dnew)
    return SurvivalTable(spec=spec, n_max=n_max, d=d, pmf=pmf,
                         truncated_at=truncated_at, precision=precision)


def _mp_pgf(law, x):
    """Generating function with mpmath arguments (extended mode)."""
    import mpmath as mp

    if isinstance(law, ProductLaw):
        out = mp.mpf(1)
        for child, m in law.children.items():
            xi = x[child - 1]
            if isinstance(m, Geometric):
                out *= 1 / (1 + mp.mpf(m.mean) * (1 - xi))
            elif isinstance(m, Poisson):
                out *= mp.exp(mp.mpf(m.mean) * (xi - 1))
            elif isinstance(m, Bernoulli):
                out *= 1 - mp.mpf(m.p) + mp.mpf(m.p) * xi
            elif isinstance(m, PointMass):
                out *= xi**m.k
            else:  # pragma: no cover - new families must extend this
                raise TypeError(f"no extended-precision pgf for {type(m)}")
        return out
    total = mp.mpf(0)
    for counts, p in law.rows:
        term = mp.mpf(p)
        for j, c in enumerate(counts):
            if c:
                term *= x[j] ** c
        total += term
    return total


def _build_table_extended(spec: ProcessSpec, n_max: int) -> SurvivalTable:
    # plain iteration at 40 significant digits; cancellation is then
    # harmless for any horizon the table could realistically hold
    import mpmath as mp

    n_types = spec.n_types
    d = np.empty((n_types, n_max + 1))
    pmf = np.zeros((n_types, n_max + 1))
    with mp.workdps(40):
        one = mp.mpf(1)
        qprev = [mp.mpf(0)] * n_types
        d[:, 0] = 1.0
        for n in range(1, n_max + 1):
            qnew = [_mp_pgf(law, qprev) for law in spec.laws]
            for i in range(n_types):
                d[i, n] = float(one - qnew[i])
                pmf[i, n] = float(qnew[i] - qprev[i])
            qprev = qnew
    return SurvivalTable(spec=spec, n_max=n_max, d=d, pmf=pmf,
                         truncated_at=None, precision="extended")


def extinction_time_pmf(table: SurvivalTable, i: int, n: int) -> float:
    """P(population from one type-i particle dies at exactly n)."""
    if n < 1:
        raise ValueError("extinction time starts at 1")
    table._check(i, n)
    return float(table.pmf[i - 1, n])


# ---------------------------------------------------------------------------
# plain and paired iteration

def iterate_point(spec: ProcessSpec, s: Sequence[float], m: int
                  ) -> tuple[float, ...]:
    """m-fold iterate of the offspring pgf vector at the point s."""
    if m < 0:
        raise ValueError("iteration count must be nonnegative")
    d = _to_complement(spec, s)
    if m == 0:
        # avoid the complement round trip perturbing the identity map
        return tuple(float(x) for x in s)
    for _ in range(m):
        d = survival_map(spec, d)
    return tuple(1.0 - x for x in d)


def _to_complement(spec: ProcessSpec, s: Sequence[float]) -> list[float]:
    if len(s) != spec.n_types:
        raise ValueError(f"expected {spec.n_types} components, got {len(s)}")
    out = []
    for x in s:
        if not (0.0 <= x <= 1.0):
            raise ValueError(f"point component {x!r} outside [0, 1]")
        out.append(1.0 - x)
    return out


def _advance_pair(spec: ProcessSpec, da: list[float], delta: list[float],
                  steps: int) -> tuple[list[float], list[float]]:
    for _ in range(steps):
        delta = list(pair_diff_map(spec, da, delta))
        da = list(survival_map(spec, da))
    return da, delta


def conditional_transform(spec: ProcessSpec, table: SurvivalTable,
                          s: Sequence[float], m: int, n: int) -> float:
    """E[prod_j s_j^{Z_j(m)} | T = n], exactly, from the paired orbit.

    Requires 0 <= m < n <= table horizon.  The start state is one
    type-1 particle.
    """
    _require_same_model(spec, table)
    if not 0 <= m < n:
        raise ValueError(f"need 0 <= m < n, got m={m}, n={n}")
    if n > table.usable_n():
        raise PrecisionLoss(
            table.usable_n() + 1,
            f"n={n} beyond usable table horizon {table.usable_n()}",
        )
    sv = list(s)
    _to_complement(spec, sv)  # bounds check
    k = n - m
    den = extinction_time_pmf(table, 1, n)
    if den == 0.0:
        raise UnreachableEvent(f"extinction at exactly n={n} has zero mass")
    if m == 0:
        # the start state is deterministic, so conditioning is inert
        return sv[0]
    da = [(1.0 - x) + x * table.survival(j + 1, k) for j, x in enumerate(sv)]
    delta = [x * float(table.pmf[j, k]) for j, x in enumerate(sv)]
    da, delta = _advance_pair(spec, da, delta, m)
    num = delta[0]
    if num == 0.0 and all(x > 0.0 for x in sv):
        raise PrecisionLoss(m, "conditional numerator underflowed")
    return num / den


def censored_transform(spec: ProcessSpec, table: SurvivalTable,
                       s: Sequence[float], t: int, m: int,
                       n: int | None = None) -> float:
    """Transform of Z(m) on the event that lower types are dead by t.

    Computes E[prod_j s_j^{Z_j(m)} ; types 1..N-1 empty at t] and, when
    ``n`` is given, conditions on extinction at exactly n (normalised
    by P(T = n)).  ``t = 0`` means no censoring, matching the empty
    intersection convention.  Requires t <= m (the joint law factorises
    through the all-terminal state at t).
    """
    _require_same_model(spec, table)
    if t < 0 or m < 0:
        raise ValueError("times must be nonnegative")
    if t > m:
        raise ValueError(f"censor time t={t} must not exceed m={m}")
    n_types = spec.n_types
    sv = list(s)
    _to_complement(spec, sv)  # bounds check
    if t == 0 or n_types == 1:
        if n is None:
            return iterate_point(spec, sv, m)[0]
        return conditional_transform(spec, table, sv, m, n)

    chain = _TerminalChain(spec)
    s_term = sv[n_types - 1]
    if n is None:
        du = 1.0 - s_term
        for _ in range(m - t):
            du = chain.survival(du)
        dvec = [1.0] * (n_types - 1) + [du]
        for _ in range(t):
            dvec = list(survival_map(spec, dvec))
        return 1.0 - dvec[0]

    if not m < n:
        raise ValueError(f"need m < n, got m={m}, n={n}")
    if n > table.usable_n():
        raise PrecisionLoss(
            table.usable_n() + 1,
            f"n={n} beyond usable table horizon {table.usable_n()}",
        )
    den = extinction_time_pmf(table, 1, n)
    if den == 0.0:
        raise UnreachableEvent(f"extinction at exactly n={n} has zero mass")
    k = n - m
    dx = (1.0 - s_term) + s_term * table.survival(n_types, k)
    ds = s_term * float(table.pmf[n_types - 1, k])
    for _ in range(m - t):
        ds = chain.diff(dx, ds)
        dx = chain.survival(dx)
    da = [1.0] * (n_types - 1) + [dx]
    delta = [0.0] * (n_types - 1) + [ds]
    da, delta = _advance_pair(spec, da, delta, t)
    return delta[0] / den


def _require_same_model(spec: ProcessSpec, table: SurvivalTable) -> None:
    if table.spec is not spec and table.spec != spec:
        raise ValueError("table was built for a different model")


# ---------------------------------------------------------------------------
# harmonic evaluation for the terminal chain

@dataclass(frozen=True)
class HarmonicResult:
    """Finite-horizon harmonic value with its own convergence estimate.

    ``value`` approximates the increasing limit of b * n^2 * (h_n(s) -
    h_n(0)) for the terminal chain; ``convergence_estimate`` is the
    change from horizon n/2 to n, an empirical error proxy.
    """

    value: float
    convergence_estimate: float
    horizon: int
    precision_ok: bool


def terminal_gap(spec: ProcessSpec, s: float, m: int) -> float:
    """h_m(s) - h_m(0) for the terminal chain, cancellation-free."""
    if not (0.0 <= s < 1.0):
        raise ValueError(f"need 0 <= s < 1, got {s}")
    if m < 0:
        raise ValueError("horizon must be nonnegative")
    chain = _TerminalChain(spec)
    da, delta = 1.0 - s, s
    for _ in range(m):
        delta = chain.diff(da, delta)
        da = chain.survival(da)
    return delta


def harmonic_U(spec: ProcessSpec, s: float, n: int) -> HarmonicResult:
    """Scaled gap b * n^2 * (h_n(s) - h_n(0)) of the terminal chain.

    The returned estimate compares the horizon-n value with the
    horizon-n/2 value along the same orbit.
    """
    if not (0.0 <= s < 1.0):
        raise ValueError(f"need 0 <= s < 1, got {s}")
    if n < 4:
        raise ValueError("horizon too short to estimate convergence")
    b = _terminal_b(spec)
    if s == 0.0:
        # the gap is identically zero along the whole orbit
        return HarmonicResult(value=0.0, convergence_estimate=0.0,
                              horizon=n, precision_ok=True)
    chain = _TerminalChain(spec)
    da, delta = 1.0 - s, s
    half = n // 2
    u_half = 0.0
    for step in range(1, n + 1):
        delta = chain.diff(da, delta)
        da = chain.survival(da)
        if step == half:
            u_half = b * step * step * delta
    value = b * float(n) * float(n) * delta
    ok = delta > 0.0 and n <= DOUBLE_PRECISION_HORIZON
    if delta == 0.0:
        raise PrecisionLoss(n, "harmonic gap underflowed")
    return HarmonicResult(
        value=value,
        convergence_estimate=abs(value - u_half),
        horizon=n,
        precision_ok=ok,
    )


# ---------------------------------------------------------------------------
# cumulative-feed transform (total terminal-type children of lower types)

@dataclass(frozen=True)
class WResult:
    """Fixed-point (or finite-horizon) transform of the total feed count.

    ``value`` is the transform from a type-1 start; ``per_type`` holds
    the same transform started from each lower type.  ``residual`` is
    the final fixed-point defect |g(u) - u| (or the last horizon
    increment when a horizon was given).
    """

    value: float
    per_type: tuple[float, ...]
    iterations: int
    residual: float
    converged: bool
    horizon: int | None = None


def w_transform(spec: ProcessSpec, s: float, *, horizon: int | None = None,
                tol: float = 1e-12, max_iter: int = 10**6) -> WResult:
    """E[s^W] where W counts terminal-type children of lower-type parents.

    W is finite almost surely (the cascade dies out), and its transform
    from a type-i start solves the triangular fixed-point system

        phi_i(s) = f_i(x),  x_j = phi_j(s) for i <= j < N,  x_N = s,

    solved bottom-up; each scalar equation is handled by monotone
    iteration from 0 (converging to the smallest root) with a
    safeguarded acceleration step.  With ``horizon=t`` the recursion is
    instead unrolled t generations, which censors the expectation to
    trees whose lower types die out within t.
    """
    n_types = spec.n_types
    if n_types < 2:
        raise ValueError("the feed transform needs at least two types")
    if not (0.0 <= s <= 1.0):
        raise ValueError(f"need 0 <= s <= 1, got {s}")

    if horizon is not None:
        if horizon < 0:
            raise ValueError("horizon must be nonnegative")
        psi = [0.0] * (n_types - 1)
        delta = 1.0
        for _ in range(horizon):
            new = [spec.law(i).pgf(psi + [s]) for i in range(1, n_types)]
            delta = max(abs(a - b) for a, b in zip(new, psi))
            psi = new
        return WResult(value=psi[0], per_type=tuple(psi),
                       iterations=horizon, residual=delta,
                       converged=True, horizon=horizon)

    if s == 1.0:
        # W is finite a.s., so the transform at 1 is exactly 1; the
        # fixed-point root there is double and not worth iterating at
        return WResult(value=1.0, per_type=(1.0,) * (n_types - 1),
                       iterations=0, residual=0.0, converged=True,
                       horizon=None)

    phi = [0.0] * (n_types - 1)
    total_iter = 0
    final_residual = 0.0
    for i in range(n_types - 1, 0, -1):
        def g(u: float, _i=i) -> float:
            x = list(phi)
            x[_i - 1] = u
            x.append(s)
            return spec.law(_i).pgf(x)

        u = 0.0
        residual = math.inf
        iters = 0
        while iters < max_iter:
            gu = g(u)
            residual = gu - u
            if residual <= tol:
                u = gu
                break
            u1 = gu
            u2 = g(u1)
            iters += 2
            denom = u2 - 2.0 * u1 + u
            stepped = u2
            if denom != 0.0:
                cand = u2 - (u2 - u1) ** 2 / denom
                # accept only accelerations provably below the smallest
                # root: g increasing, so u <= root iff g(u) >= u
                if u2 < cand < 1.0 and g(cand) >= cand:
                    stepped = cand
                    iters += 1
            u = stepped
        else:
            raise SlowConvergence(i, iters, residual)
        phi[i - 1] = u
        total_iter += iters
        final_residual = abs(g(u) - u)

    return WResult(value=phi[0], per_type=tuple(phi),
                   iterations=total_iter, residual=final_residual,
                   converged=True, horizon=None)


def w_weighted_mean(spec: ProcessSpec, lam: float, n: int, *,
                    horizon: int | None = None) -> float:
    """E[W * exp(-lam * W / (b * n))] (optionally horizon-censored).

    Differentiates the feed transform at theta = lam / (b * n) by
    central differences at steps theta*1e-4 and theta*2e-4 combined
    into one fourth-order estimate.
    """
    if lam <= 0.0:
        raise ValueError("lam must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    b = _terminal_b(spec)
    theta = lam / (b * n)

    def transform(th: float) -> float:
        return w_transform(spec, math.exp(-th), horizon=horizon).value

    return -richardson_derivative(transform, theta, theta * 1e-4)
