"""Definitional identity suites behind the verify-lemmas command.

Each suite returns a dict with a boolean "ok" plus the measured extremes,
so violations are inspectable rather than silent.
"""

from __future__ import annotations

import math

import numpy as np

from .entropy import ball_grid, power_inclusion_check
from .hypersets import count_admitting, shannon_H
from .linalg2 import frobenius_defect_pair, norm_product_defect, svd2

__all__ = [
    "norm_defect_suite",
    "frobenius_counterexample_suite",
    "counting_suite",
    "entropy_function_suite",
    "power_inclusion_suite",
]


def _random_gl2(rng, count, cond_max):
    out = np.empty((count, 2, 2))
    filled = 0
    while filled < count:
        cand = rng.uniform(-10.0, 10.0, size=(count - filled, 2, 2))
        s = svd2(cand)
        ok = (s.smin > 0.0) & (s.smax / np.where(s.smin == 0.0, np.inf, s.smin) <= cond_max)
        good = cand[ok]
        out[filled : filled + good.shape[0]] = good
        filled += good.shape[0]
    return out


def norm_defect_suite(pairs=10000, seed=0, tol=1e-9, cond_max=1e6):
    """The two multiplicativity-defect ratios agree for 2x2 operator norms."""
    rng = np.random.default_rng(seed)
    a = _random_gl2(rng, pairs, cond_max)
    b = _random_gl2(rng, pairs, cond_max)
    ai = np.linalg.inv(a)
    bi = np.linalg.inv(b)
    lhs = svd2(a @ b).smax / (svd2(a).smax * svd2(b).smax)
    rhs = svd2(bi @ ai).smax / (svd2(ai).smax * svd2(bi).smax)
    rel = np.abs(lhs - rhs) / np.maximum(lhs, rhs)
    worst = float(rel.max())
    return {"ok": bool(worst <= tol), "pairs": pairs, "worst_rel_diff": worst, "tol": tol}


def frobenius_counterexample_suite(x=1e3):
    """In dimension three the two Frobenius ratios separate without bound."""
    a, b = frobenius_defect_pair(x)
    d = norm_product_defect(a, b, norm="frobenius")
    ab_ratio = float(np.linalg.norm(a @ b, "fro") / (math.sqrt(6.0) * x))
    factor = d.rhs / d.lhs
    ok = 0.99 <= ab_ratio <= 1.01 and factor >= 100.0
    return {
        "ok": bool(ok),
        "x": x,
        "lhs": d.lhs,
        "rhs": d.rhs,
        "separation_factor": float(factor),
        "ab_fro_over_sqrt6x": ab_ratio,
    }


def counting_suite(cap=24):
    """Enumeration equals the closed form and obeys the entropy bound."""
    checked = 0
    worst_slack = float("inf")
    for n in range(1, cap + 1):
        for s in range(1, cap + 1):
            if n * s > cap:
                continue
            bf = count_admitting(n, s, "brute_force")
            cf = count_admitting(n, s, "closed_form")
            if bf != cf:
                return {"ok": False, "n": n, "s": s, "brute": str(bf), "closed": str(cf)}
            bound = n * s * shannon_H(s) + 1.0
            slack = bound - math.log(cf)
            worst_slack = min(worst_slack, slack)
            if slack < 0.0:
                return {"ok": False, "n": n, "s": s, "log_count": math.log(cf), "bound": bound}
            checked += 1
    return {"ok": True, "checked_pairs": checked, "worst_bound_slack": worst_slack}


def entropy_function_suite():
    """Continuity anchors and the symmetry of the binary entropy function."""
    checks = {
        "H1": shannon_H(1.0),
        "H2_minus_log2": shannon_H(2.0) - math.log(2.0),
        "symmetry": shannon_H(4.0 / 3.0) - shannon_H(4.0),
        "max_at_2": max(shannon_H(t) for t in np.linspace(1.0, 64.0, 2000)) - shannon_H(2.0),
    }
    ok = (
        checks["H1"] == 0.0
        and abs(checks["H2_minus_log2"]) < 1e-15
        and abs(checks["symmetry"]) < 1e-12
        and checks["max_at_2"] <= 0.0
    )
    return {"ok": bool(ok), **{k: float(v) for k, v in checks.items()}}


def power_inclusion_suite(sys, x=(0.1, 0.2), n=4, k=3, eps=0.01, samples=10000, seed=0):
    """Bowen balls of the power map contain the fine Bowen balls, sampled
    from the eps-ball at x so membership is not vacuous."""
    rng = np.random.default_rng(seed)
    off = ball_grid(np.zeros(2), eps, int(math.isqrt(samples)))
    extra = (rng.random((max(samples - off.shape[0], 0), 2)) * 2.0 - 1.0) * eps
    pts = sys.wrap(np.asarray(x, dtype=float) + np.concatenate([off, extra])[:samples])
    rep = power_inclusion_check(sys, x, n, k, eps, pts)
    rep["ok"] = rep["violations"] == 0
    rep["samples"] = int(pts.shape[0])
    return rep
