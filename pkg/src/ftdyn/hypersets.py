"""Finite-time hyperbolicity tests, defect sequences and counting bounds.

Membership in the finite-time hyperbolic locus is decided through the four
log-slack margins of the two-sided norm bounds, reported per time step so
near-threshold behavior stays inspectable.  The per-step defect integers
classify how far the cocycle norm is from being multiplicative along an
orbit; the counting helpers bound how many such classes can occur.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .cocycle import batch_cocycle
from .linalg2 import svd2
from .systems import as_point

__all__ = [
    "HypParams",
    "MembershipReport",
    "membership",
    "membership_margins_batch",
    "KSequence",
    "k_sequence",
    "k_sequence_batch",
    "shannon_H",
    "floor_plus",
    "count_admitting",
    "lemma_com_bound",
]


@dataclass(frozen=True)
class HypParams:
    """Expansion/contraction rates with error margin and constant."""

    chi_plus: float
    chi_minus: float
    gamma: float
    C: float

    def __post_init__(self):
        if not (self.chi_plus > 0.0 > self.chi_minus):
            raise ValueError("need chi_plus > 0 > chi_minus")
        if not (0.0 < self.gamma < min(self.chi_plus, -self.chi_minus) / 3.0):
            raise ValueError("need 0 < gamma < min(chi_plus, -chi_minus)/3")
        if not self.C > 1.0:
            raise ValueError("need C > 1")

    def as_dict(self):
        return {
            "chi_plus": self.chi_plus,
            "chi_minus": self.chi_minus,
            "gamma": self.gamma,
            "C": self.C,
        }


@dataclass(frozen=True)
class MembershipReport:
    """Verdict plus the four log-slack margins for every k = 1..n.

    margins[k-1] = (lower/upper slack of log||D T^k||, lower/upper slack of
    log||D T^-k|| at the image point); membership means all are >= 0.
    """

    member: bool
    margins: np.ndarray  # (n, 4)

    @property
    def first_failure(self):
        """1-based first k with a negative margin, or None."""
        bad = np.where((self.margins < 0.0).any(axis=1))[0]
        return int(bad[0]) + 1 if bad.size else None

    def as_dict(self):
        return {
            "member": bool(self.member),
            "first_failure": self.first_failure,
            "margins": [[float(v) for v in row] for row in self.margins],
        }


def membership_margins_batch(log_norm, log_norm_inv, p: HypParams):
    """Margins for precomputed norm tables of shape (n+1, ...).

    Returns an array of shape (n, ..., 4); index k-1 holds the slacks at
    time k.  All four entries grow with C, so membership is monotone in C.
    """
    n = log_norm.shape[0] - 1
    k = np.arange(1, n + 1, dtype=float).reshape((n,) + (1,) * (log_norm.ndim - 1))
    log_c = np.log(p.C)
    fwd = log_norm[1:]
    bwd = log_norm_inv[1:]
    m = np.stack(
        [
            fwd - ((p.chi_plus - p.gamma) * k - log_c),
            ((p.chi_plus + p.gamma) * k + log_c) - fwd,
            bwd - ((-p.chi_minus - p.gamma) * k - log_c),
            ((-p.chi_minus + p.gamma) * k + log_c) - bwd,
        ],
        axis=-1,
    )
    return m


def membership(sys, x, n, p: HypParams) -> MembershipReport:
    """Does x satisfy the two-sided exponential norm bounds up to time n?"""
    if n < 1:
        raise ValueError("n must be >= 1")
    bc = batch_cocycle(sys, as_point(x), n)
    margins = membership_margins_batch(bc.log_norm, bc.log_norm_inv, p)
    return MembershipReport(member=bool((margins >= 0.0).all()), margins=margins)


@dataclass(frozen=True)
class KSequence:
    """Per-step defect-of-multiplicativity integers along an orbit."""

    ks: tuple

    def __post_init__(self):
        if any(k < 1 for k in self.ks):
            raise ValueError("defect entries must be >= 1")

    def __len__(self):
        return len(self.ks)

    def __getitem__(self, i):
        return self.ks[i]

    def total(self):
        return int(sum(self.ks))

    def as_dict(self):
        return {"ks": list(self.ks)}


def floor_plus(x) -> int:
    """Integer part of x for x > 0, zero otherwise."""
    x = float(x)
    return int(math.floor(x)) if x > 0.0 else 0


def _defect_logs(log_norm, step_norms):
    """log of ||DT^i|| max(||step_i||, 1) / ||DT^{i+1}|| for i = 1..n-1."""
    log_step_plus = np.maximum(np.log(step_norms), 0.0)
    return log_norm[1:-1] + log_step_plus[1:] - log_norm[2:]


def k_sequence(sys, y, n) -> KSequence:
    """Defect integers (k_1, ..., k_{n-1}) of the orbit of y.

    k_i - 1 is the clipped integer part of the log defect of
    multiplicativity between times i and i+1.
    """
    if n < 2:
        raise ValueError("n must be >= 2")
    bc = batch_cocycle(sys, as_point(y), n)
    step_norms = svd2(bc.step_jacobians).smax
    logs = _defect_logs(bc.log_norm, step_norms)
    return KSequence(ks=tuple(floor_plus(v) + 1 for v in logs))


def k_sequence_batch(sys, pts, n):
    """Vectorized defect integers: shape (n-1, N) array of ints >= 1."""
    bc = batch_cocycle(sys, pts, n)
    step_norms = svd2(bc.step_jacobians).smax
    logs = _defect_logs(bc.log_norm, step_norms)
    return np.where(logs > 0.0, np.floor(logs), 0.0).astype(int) + 1


def shannon_H(t) -> float:
    """Binary entropy of 1/t in nats, on t >= 1; H(1) = 0 by continuity."""
    t = float(t)
    if t < 1.0:
        raise ValueError("H is defined for t >= 1")
    if t == 1.0:
        return 0.0
    inv = 1.0 / t
    return -inv * math.log(inv) - (1.0 - inv) * math.log1p(-inv)


@lru_cache(maxsize=None)
def _count_upto(parts, budget):
    """Number of sequences of `parts` positive integers with sum <= budget,
    by explicit recursion over the first entry."""
    if parts == 0:
        return 1
    if budget < parts:
        return 0
    return sum(_count_upto(parts - 1, budget - k) for k in range(1, budget - parts + 2))


def count_admitting(n, s, mode="closed_form") -> int:
    """Number of length-n positive integer sequences with mean at most s.

    closed_form evaluates binomial(n s, n) exactly; brute_force counts by
    enumerating first entries recursively and is capped at n*s <= 24.
    """
    if n < 1 or s < 1:
        raise ValueError("need n >= 1 and s >= 1")
    if mode == "closed_form":
        return math.comb(n * s, n)
    if mode == "brute_force":
        if n * s > 24:
            raise ValueError("brute_force capped at n*s <= 24")
        return _count_upto(n, n * s)
    raise ValueError(f"unknown mode {mode!r}")


def lemma_com_bound(n, lambda_plus, chi_plus) -> float:
    """Log-scale bound on the number of defect classes meeting the
    finite-time hyperbolic set: (3n - 2) + (n-1) d H([d] + 3) with
    d = log+ of the norm-defect rate lambda_plus - chi_plus."""
    if n < 2:
        raise ValueError("n must be >= 2")
    d = max(float(lambda_plus) - float(chi_plus), 0.0)
    return (3.0 * n - 2.0) + (n - 1.0) * d * shannon_H(floor_plus(d) + 3)
