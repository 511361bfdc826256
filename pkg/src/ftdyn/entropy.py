"""Bowen balls, separated sets and sample-based local entropy estimators.

Measures are out of scope throughout: the estimators replace sets of
positive measure by deterministic grids, so every quantity here is a
topological, finite-data surrogate that is reproducible bit-for-bit from
the grid parameters.  Separated subsets are produced greedily in
lexicographic candidate order (a maximal, not maximum, set); an exhaustive
maximum search is provided for tiny instances as a test oracle.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cocycle import batch_cocycle
from .systems import as_point

__all__ = [
    "bowen_ball_member",
    "bowen_masks",
    "SeparatedSetResult",
    "max_separated",
    "NewhouseRate",
    "newhouse_estimate",
    "power_inclusion_check",
    "separation_rate",
    "SexBoundProbe",
    "EntropyReport",
    "sex_bound_report",
]


def bowen_masks(sys, x, pts, n_list, eps):
    """Membership masks of pts in the Bowen balls B(x, n, eps), n in n_list.

    One streaming pass; returns {n: bool array} without storing orbits.
    """
    x = sys.wrap(as_point(x))
    pts = sys.wrap(np.asarray(pts, dtype=float))
    n_list = sorted(set(int(n) for n in n_list))
    n_max = n_list[-1]
    alive = sys.dist(pts, x) < eps
    masks = {}
    cx = x
    cp = pts
    for k in range(1, n_max):
        if 1 <= k and k in n_list:
            masks[k] = alive.copy()
        cx = sys.forward(cx)
        cp = sys.forward(cp)
        alive &= sys.dist(cp, cx) < eps
    for n in n_list:
        if n >= n_max:
            masks[n] = alive.copy()
    return masks


def bowen_ball_member(sys, x, y, n, eps) -> bool:
    """Is y within eps of x along the first n iterates?"""
    if n < 1 or eps <= 0.0:
        raise ValueError("need n >= 1 and eps > 0")
    m = bowen_masks(sys, x, as_point(y)[None, :], [n], eps)
    return bool(m[n][0])


@dataclass(frozen=True)
class SeparatedSetResult:
    n: int
    delta: float
    indices: np.ndarray  # into the lexicographically sorted candidate list
    points: np.ndarray
    count: int
    method: str

    def as_dict(self):
        return {
            "n": self.n,
            "delta": self.delta,
            "count": self.count,
            "method": self.method,
        }


def _orbit_array(sys, pts, n):
    """Stacked orbits (N, n, 2) for separation tests."""
    out = np.empty((pts.shape[0], n, 2))
    cur = pts
    for k in range(n):
        out[:, k, :] = cur
        if k + 1 < n:
            cur = sys.forward(cur)
    return out


def _pair_separated(sys, orb_a, orb_b):
    """Max-over-time distances between orbit arrays (broadcastable)."""
    if sys.domain == "torus":
        d = orb_a - orb_b
        d -= np.round(d)
    else:
        d = orb_a - orb_b
    return np.sqrt((d**2).sum(axis=-1)).max(axis=-1)


def _lex_sort(pts):
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    return order


def _conflict_lists(sys, pts, orbs, delta):
    """Adjacency lists of the not-separated relation, via time-0 buckets.

    A pair farther than delta apart at time 0 is separated outright, so only
    bucket-neighbor pairs need their full orbits compared; comparisons are
    batched per bucket to keep the pass vectorized.
    """
    npts = pts.shape[0]
    torus = sys.domain == "torus"
    ncell = max(int(np.floor(1.0 / delta)), 1) if torus else None
    cells = {}
    if torus:
        ci = (pts[:, 0] * ncell).astype(int) % ncell
        cj = (pts[:, 1] * ncell).astype(int) % ncell
    else:
        ci = np.floor(pts[:, 0] / delta).astype(int)
        cj = np.floor(pts[:, 1] / delta).astype(int)
    for i in range(npts):
        cells.setdefault((int(ci[i]), int(cj[i])), []).append(i)
    n_steps = orbs.shape[1]
    conflicts = [() for _ in range(npts)]
    for (a, b), own in cells.items():
        near = []
        for da in (-1, 0, 1):
            for db in (-1, 0, 1):
                key = ((a + da) % ncell, (b + db) % ncell) if torus else (a + da, b + db)
                near.extend(cells.get(key, ()))
        own_idx = np.asarray(own, dtype=int)
        near_idx = np.asarray(sorted(set(near)), dtype=int)
        d0 = _pair_separated(
            sys, pts[own_idx][:, None, None, :], pts[near_idx][None, :, None, :]
        )
        r, c = np.nonzero(d0 < delta)
        ii = own_idx[r]
        jj = near_idx[c]
        keep = ii != jj
        ii = ii[keep]
        jj = jj[keep]
        # iterate the surviving close pairs forward; most separate early
        for k in range(1, n_steps):
            if ii.size == 0:
                break
            d = _pair_separated(sys, orbs[ii, k : k + 1, :], orbs[jj, k : k + 1, :])
            alive = d < delta
            ii = ii[alive]
            jj = jj[alive]
        if ii.size:
            order = np.argsort(ii, kind="stable")
            ii = ii[order]
            jj = jj[order]
            starts = np.searchsorted(ii, np.unique(ii))
            bounds = np.append(starts, ii.size)
            for s, t in zip(bounds[:-1], bounds[1:]):
                conflicts[ii[s]] = jj[s:t]
    return conflicts


def _greedy_separated(sys, pts, n, delta):
    """First-fit greedy in lexicographic order: maximal, deterministic."""
    orbs = _orbit_array(sys, pts, n)
    conflicts = _conflict_lists(sys, pts, orbs, delta)
    taken = np.zeros(pts.shape[0], dtype=bool)
    accepted = []
    for i in range(pts.shape[0]):
        js = conflicts[i]
        if len(js) and taken[js[js < i]].any():
            continue
        taken[i] = True
        accepted.append(i)
    return np.asarray(accepted, dtype=int)


def _exact_separated(sys, pts, n, delta):
    """Maximum separated subset by branch and bound on <= 20 candidates."""
    m = pts.shape[0]
    orbs = _orbit_array(sys, pts, n)
    conflict = [0] * m
    for i in range(m):
        d = _pair_separated(sys, orbs[i][None, :, :], orbs)
        for j in range(m):
            if j != i and d[j] < delta:
                conflict[i] |= 1 << j
    memo = {}

    def rec(mask):
        if mask == 0:
            return 0, 0
        if mask in memo:
            return memo[mask]
        v = (mask & -mask).bit_length() - 1
        size_out, set_out = rec(mask & ~(1 << v))
        size_in, set_in = rec(mask & ~(conflict[v] | (1 << v)))
        res = (size_in + 1, set_in | (1 << v))
        if size_out > res[0]:
            res = (size_out, set_out)
        memo[mask] = res
        return res

    _, chosen = rec((1 << m) - 1)
    return np.asarray([i for i in range(m) if chosen >> i & 1], dtype=int)


def max_separated(sys, candidates, n, delta, method="greedy") -> SeparatedSetResult:
    """A (n, delta)-separated subset of the candidates.

    greedy: deterministic first-fit over lexicographically sorted
    candidates, maximal by construction.  exact_small: a true maximum via
    exhaustive search, capped at 20 candidates.
    """
    candidates = sys.wrap(np.atleast_2d(np.asarray(candidates, dtype=float)))
    if n < 1 or delta <= 0.0:
        raise ValueError("need n >= 1 and delta > 0")
    order = _lex_sort(candidates)
    pts = candidates[order]
    if method == "greedy":
        idx = _greedy_separated(sys, pts, n, delta)
    elif method == "exact_small":
        if pts.shape[0] > 20:
            raise ValueError("exact_small capped at 20 candidates")
        idx = _exact_separated(sys, pts, n, delta)
    else:
        raise ValueError(f"unknown method {method!r}")
    return SeparatedSetResult(
        n=n,
        delta=float(delta),
        indices=idx,
        points=pts[idx],
        count=int(idx.size),
        method=method,
    )


@dataclass(frozen=True)
class NewhouseRate:
    eps: float
    delta: float
    n: int
    members: int
    count: int
    rate: float

    def as_dict(self):
        return {
            "eps": self.eps,
            "delta": self.delta,
            "n": self.n,
            "members": self.members,
            "count": self.count,
            "rate": self.rate,
        }


def ball_grid(x, eps, grid_res):
    """Grid offsets covering the eps-ball at x, center always included."""
    g = np.linspace(-eps, eps, grid_res)
    uu, vv = np.meshgrid(g, g)
    off = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    off = off[np.linalg.norm(off, axis=1) <= eps]
    off = np.concatenate([np.zeros((1, 2)), off], axis=0)
    return off


def newhouse_estimate(sys, x, eps, delta, n_list, grid_res=1024):
    """Sampled local-entropy rates at x: separated counts inside Bowen balls.

    The measurable set of the definition is replaced by the sampled eps-ball
    at x (the center itself is always a sample); rates are log(count)/n.
    """
    if not (0.0 < delta < eps):
        raise ValueError("need 0 < delta < eps")
    if grid_res > 2048:
        raise ValueError("grid_res capped at 2048")
    x = sys.wrap(as_point(x))
    pts = sys.wrap(x[None, :] + ball_grid(x, eps, grid_res))
    masks = bowen_masks(sys, x, pts, n_list, eps)
    out = []
    for n in sorted(set(int(v) for v in n_list)):
        members = pts[masks[n]]
        if members.shape[0] == 0:
            raise ValueError(f"empty Bowen-ball sample at n={n}")
        sep = max_separated(sys, members, n, delta, "greedy")
        out.append(
            NewhouseRate(
                eps=float(eps),
                delta=float(delta),
                n=n,
                members=int(members.shape[0]),
                count=sep.count,
                rate=float(np.log(sep.count) / n),
            )
        )
    return out


def power_inclusion_check(sys, x, n, k, eps, sample):
    """Count sampled points in B_T(x, nk, eps) missing from the power-map
    Bowen ball B_{T^k}(x, n, eps); definitionally zero."""
    if n < 1 or k < 1:
        raise ValueError("need n, k >= 1")
    x = sys.wrap(as_point(x))
    pts = sys.wrap(np.atleast_2d(np.asarray(sample, dtype=float)))
    fine = sys.dist(pts, x) < eps
    coarse = fine.copy()
    cx = x
    cp = pts
    for j in range(1, n * k):
        cx = sys.forward(cx)
        cp = sys.forward(cp)
        d_ok = sys.dist(cp, cx) < eps
        fine &= d_ok
        if j % k == 0:
            coarse &= d_ok
    violations = int(np.count_nonzero(fine & ~coarse))
    return {"violations": violations, "fine_members": int(fine.sum()), "coarse_members": int(coarse.sum())}


def separation_rate(sys, n, delta, grid_res=256):
    """Full-space separated-set growth rate on a grid_res^2 torus grid."""
    g = (np.arange(grid_res) + 0.5) / grid_res
    uu, vv = np.meshgrid(g, g)
    pts = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    sep = max_separated(sys, pts, n, delta, "greedy")
    return sep.count, float(np.log(sep.count) / n)


@dataclass(frozen=True)
class SexBoundProbe:
    """Parameters of the headline-bound report."""

    grid_res: int = 256
    n_sep: int = 12
    delta: float = 0.05
    r_horizon: int = 48
    r_samples: int = 64
    seed: int = 0
    newhouse_eps: float | None = None
    newhouse_delta: float | None = None
    newhouse_n: tuple = ()
    newhouse_res: int = 512

    def as_dict(self):
        return {
            "grid_res": self.grid_res,
            "n_sep": self.n_sep,
            "delta": self.delta,
            "r_horizon": self.r_horizon,
            "r_samples": self.r_samples,
            "seed": self.seed,
            "newhouse_eps": self.newhouse_eps,
            "newhouse_delta": self.newhouse_delta,
            "newhouse_n": list(self.newhouse_n),
            "newhouse_res": self.newhouse_res,
        }


@dataclass(frozen=True)
class EntropyReport:
    h_top_estimate: float
    r_estimate: float
    sex_bound: float
    sep_count: int
    newhouse_rates: tuple = ()
    probe: SexBoundProbe = field(default_factory=SexBoundProbe)

    def as_dict(self):
        return {
            "h_top_estimate": self.h_top_estimate,
            "r_estimate": self.r_estimate,
            "sex_bound": self.sex_bound,
            "sep_count": self.sep_count,
            "newhouse_rates": [r.as_dict() for r in self.newhouse_rates],
            "probe": self.probe.as_dict(),
        }


def growth_rate_estimate(sys, horizon, samples, seed=0):
    """Exponential growth rate of ||D T^n||: max over sampled base points of
    (1/n) log+ ||D_x T^n|| from the factored cocycle."""
    rng = np.random.default_rng(seed)
    pts = rng.random((samples, 2))
    if sys.domain != "torus":
        lo = sys.box[:, 0]
        hi = sys.box[:, 1]
        pts = lo + (hi - lo) * pts * 0.5 + 0.25 * (hi - lo)
    bc = batch_cocycle(sys, pts, horizon)
    return float(np.maximum(bc.log_norm[horizon], 0.0).max() / horizon)


def sex_bound_report(sys, probe: SexBoundProbe | None = None) -> EntropyReport:
    """Estimate the symbolic-extension entropy bound h_top + 2 R.

    h_top from full-space separated-set growth, R from the max sampled
    cocycle growth rate; the Newhouse rate table is attached when the probe
    requests it.
    """
    probe = probe or SexBoundProbe()
    count, h_top = separation_rate(sys, probe.n_sep, probe.delta, probe.grid_res)
    r_est = growth_rate_estimate(sys, probe.r_horizon, probe.r_samples, probe.seed)
    rates = ()
    if probe.newhouse_eps is not None and probe.newhouse_n:
        rng = np.random.default_rng(probe.seed)
        x = rng.random(2)
        rates = tuple(
            newhouse_estimate(
                sys,
                x,
                probe.newhouse_eps,
                probe.newhouse_delta,
                list(probe.newhouse_n),
                probe.newhouse_res,
            )
        )
    return EntropyReport(
        h_top_estimate=h_top,
        r_estimate=r_est,
        sex_bound=h_top + 2.0 * r_est,
        sep_count=count,
        newhouse_rates=rates,
        probe=probe,
    )
