"""Brute-force distribution oracle for two-type models.

Everything here works directly on the joint distribution of the
population vector, advanced one generation at a time by polynomial
convolution.  No code is shared with the orbit-based engine under
test: survival probabilities come out of an explicit probability
array, not a complement recurrence, so agreement between the two is
meaningful evidence.

Only two-type models are supported; offspring laws with unbounded
support are truncated where the tail mass drops below ``TAIL_TOL``,
and every truncation is accounted for in the returned ``lost`` mass so
tests can assert it is negligible against their tolerance.
"""

from __future__ import annotations

import numpy as np

from branchlab.families import Bernoulli, Geometric, PointMass, Poisson
from branchlab.model import ProcessSpec, ProductLaw, TableLaw

TAIL_TOL = 1e-30


def marginal_coeffs(marg) -> np.ndarray:
    """Probability vector of one marginal, truncated at TAIL_TOL."""
    if isinstance(marg, PointMass):
        out = np.zeros(marg.k + 1)
        out[marg.k] = 1.0
        return out
    if isinstance(marg, Bernoulli):
        return np.array([1.0 - marg.p, marg.p])
    if isinstance(marg, Geometric):
        mu = marg.mean
        probs = [1.0 / (1.0 + mu)]
        ratio = mu / (1.0 + mu)
        while probs[-1] > TAIL_TOL:
            probs.append(probs[-1] * ratio)
        return np.array(probs)
    if isinstance(marg, Poisson):
        mu = marg.mean
        probs = [np.exp(-mu)]
        k = 1
        while probs[-1] > TAIL_TOL or k <= mu:
            probs.append(probs[-1] * mu / k)
            k += 1
        return np.array(probs)
    raise TypeError(f"no coefficients for {type(marg)}")


def law_poly(law, n_types: int) -> np.ndarray:
    """Offspring distribution as a 2-D array over (type-1, type-2) counts."""
    assert n_types == 2
    if isinstance(law, TableLaw):
        c1max = max(c[0] for c, _ in law.rows)
        c2max = max(c[1] for c, _ in law.rows)
        out = np.zeros((c1max + 1, c2max + 1))
        for counts, p in law.rows:
            out[counts[0], counts[1]] += p
        return out
    assert isinstance(law, ProductLaw)
    v1 = marginal_coeffs(law.children[1]) if 1 in law.children else np.ones(1)
    v2 = marginal_coeffs(law.children[2]) if 2 in law.children else np.ones(1)
    return np.outer(v1, v2)


def _conv2_small(acc: np.ndarray, kernel: np.ndarray,
                 cap1: int, cap2: int) -> tuple[np.ndarray, float]:
    """2-D convolution by shifted adds over the kernel's support."""
    r1 = min(acc.shape[0] + kernel.shape[0] - 1, cap1 + 1)
    r2 = min(acc.shape[1] + kernel.shape[1] - 1, cap2 + 1)
    out = np.zeros((r1, r2))
    lost = 0.0
    for i in range(kernel.shape[0]):
        for j in range(kernel.shape[1]):
            w = kernel[i, j]
            if w == 0.0:
                continue
            shifted = w * acc
            n1 = min(acc.shape[0], r1 - i)
            n2 = min(acc.shape[1], r2 - j)
            # account the clipped mass by slicing it out directly; a
            # total-minus-kept subtraction would drown it in roundoff
            if n1 < acc.shape[0]:
                lost += shifted[n1:, :].sum()
            if n2 < acc.shape[1]:
                lost += shifted[:n1, n2:].sum()
            if n1 > 0 and n2 > 0:
                out[i:i + n1, j:j + n2] += shifted[:n1, :n2]
    return out, lost


def evolve(P: np.ndarray, a2d: np.ndarray, b1d: np.ndarray,
           cap1: int, cap2: int) -> tuple[np.ndarray, float]:
    """One generation of the joint population distribution.

    Each type-1 particle reproduces by the 2-D kernel ``a2d``, each
    type-2 particle by the 1-D kernel ``b1d``; the new distribution is
    sum_z P[z] * a2d^{conv z1} conv b1d^{conv z2}, evaluated by nested
    Horner schemes so each power is formed once.
    """
    lost = 0.0
    z1max, z2max = P.shape[0] - 1, P.shape[1] - 1
    # inner Horner over type-2 counts, one row at a time
    rows = []
    for z1 in range(z1max + 1):
        r = np.zeros(1)
        for z2 in range(z2max, -1, -1):
            if r.shape[0] > 1 or r[0] != 0.0:
                r = np.convolve(r, b1d)
                if r.shape[0] > cap2 + 1:
                    lost += r[cap2 + 1:].sum()
                    r = r[:cap2 + 1]
            if P[z1, z2] != 0.0:
                r = r.copy()
                r[0] += P[z1, z2]
        rows.append(r)
    # outer Horner over type-1 counts with the 2-D kernel
    acc = np.zeros((1, 1))
    for z1 in range(z1max, -1, -1):
        if acc.any():
            acc, l = _conv2_small(acc, a2d, cap1, cap2)
            lost += l
        r = rows[z1]
        if r.shape[0] > acc.shape[1]:
            grown = np.zeros((acc.shape[0], r.shape[0]))
            grown[:, :acc.shape[1]] = acc
            acc = grown
        acc[0, :r.shape[0]] += r
    return acc, lost


class Enumerator:
    """Exact (to TAIL_TOL) distribution calculations for a 2-type model."""

    def __init__(self, spec: ProcessSpec, cap1: int = 80, cap2: int = 300):
        assert spec.n_types == 2
        self.spec = spec
        self.a2d = law_poly(spec.law(1), 2)
        self.b1d = law_poly(spec.law(2), 2)[0]
        self.cap1 = cap1
        self.cap2 = cap2

    def distribution_path(self, m: int, start: tuple[int, int] = (1, 0),
                          censor_at: int | None = None):
        """Joint distributions after 0..m generations, plus lost mass.

        ``censor_at=t`` restricts to the event that type 1 is empty at
        generation t by zeroing the offending states there; the arrays
        from then on are sub-probability measures on that event.
        """
        P = np.zeros((start[0] + 1, start[1] + 1))
        P[start] = 1.0
        lost = 0.0
        path = [P]
        for step in range(1, m + 1):
            P, l = evolve(P, self.a2d, self.b1d, self.cap1, self.cap2)
            lost += l
            if censor_at is not None and step == censor_at:
                P = P.copy()
                P[1:, :] = 0.0
            path.append(P)
        return path, lost

    def extinct_by(self, i: int, horizon: int) -> list[float]:
        """P(dead by n) from a single type-i particle, n = 0..horizon."""
        start = (1, 0) if i == 1 else (0, 1)
        path, lost = self.distribution_path(horizon, start)
        assert lost < 1e-15
        return [float(P[0, 0]) for P in path]

    def death_pmf(self, i: int, horizon: int) -> list[float]:
        """P(dies at exactly n), index n = 0..horizon (entry 0 is 0)."""
        q = self.extinct_by(i, horizon)
        return [0.0] + [q[n] - q[n - 1] for n in range(1, horizon + 1)]

    def conditional_value(self, s, m: int, n: int,
                          censor_at: int | None = None) -> float:
        """E[s1^Z1(m) s2^Z2(m) (1{type 1 empty at t}) | T = n]."""
        path, lost = self.distribution_path(m, censor_at=censor_at)
        assert lost < 1e-15
        k = n - m
        q1 = self.extinct_by(1, k)
        q2 = self.extinct_by(2, k)
        P = path[m]
        num = 0.0
        for z1 in range(P.shape[0]):
            for z2 in range(P.shape[1]):
                w = P[z1, z2]
                if w == 0.0:
                    continue
                hi = q1[k] ** z1 * q2[k] ** z2
                lo = q1[k - 1] ** z1 * q2[k - 1] ** z2
                num += w * s[0] ** z1 * s[1] ** z2 * (hi - lo)
        den = self.death_pmf(1, n)[n]
        return num / den
