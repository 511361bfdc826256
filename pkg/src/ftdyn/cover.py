"""Families of contracting charts covering hyperbolic Bowen-ball samples.

The induction works in the rescaled frame at a base point x: one unit of
frame length is the Bowen radius eps.  The target set at level n is the
sampled intersection of the finite-time hyperbolic locus, the defect class
of x's own orbit, and the Bowen ball of radius eps, so it shrinks to an
exponentially thin strip; the family only ever keeps subcharts whose middle
ninths contain surviving samples, which is what keeps desk-scale runs
finite while the counting bound stays the theoretical one.

Each level transition is subdivide -> saturate -> cut; a final subdivision
restores the contraction and middle-ninth anchoring of the reported family.
Charts that lose all samples or whose image misses the unit ball are
dropped with a logged reason, never silently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .cocycle import batch_cocycle
from .errors import ChartError, CoverError, PreconditionError
from .hypersets import HypParams, KSequence, floor_plus, membership_margins_batch, shannon_H
from .linalg2 import svd2
from .manifolds import LocalFrame
from .rectangles import (
    build_charts_in_frame,
    chart_locate,
    check_predicates,
    resample,
    saturate_batch,
)
from .systems import as_point, rescaling_eps

__all__ = [
    "CoverParams",
    "CoverFamily",
    "subdivide",
    "cut",
    "build_cover",
    "verify_cover",
]


@dataclass(frozen=True)
class CoverParams:
    """Knobs of the cover construction.

    a_const defaults to the per-level growth allowance
    log 20 + 2 log(1 + e/k_tol); d_const is frozen from a calibration run
    (desk-scale counts sit far below the bound, so it only sets the shape).
    """

    hyp: HypParams
    eps: float | None = None
    k_tol: float = 0.1
    a_const: float | None = None
    d_const: float = 12.0
    n_threshold: int = 7
    subdivision_cap: int = 10000
    grid_res: int = 512
    chart_grid: int = 8
    tau: float = 1e-9
    seed_scale: float = 0.22
    sat_containment: float | None = None

    def a_value(self):
        if self.a_const is not None:
            return self.a_const
        return math.log(20.0) + 2.0 * math.log(1.0 + math.e / self.k_tol)

    def as_dict(self):
        return {
            "hyp": self.hyp.as_dict(),
            "eps": self.eps,
            "k_tol": self.k_tol,
            "a_const": self.a_value(),
            "d_const": self.d_const,
            "n_threshold": self.n_threshold,
            "subdivision_cap": self.subdivision_cap,
            "grid_res": self.grid_res,
            "chart_grid": self.chart_grid,
            "tau": self.tau,
            "seed_scale": self.seed_scale,
        }


@dataclass
class CoverFamily:
    n: int
    charts: list
    k_seq: KSequence
    stats: dict
    events: list
    frame: LocalFrame
    params: CoverParams

    def as_dict(self):
        return {
            "n": self.n,
            "count": len(self.charts),
            "k_seq": self.k_seq.as_dict(),
            "stats": self.stats,
            "events": self.events,
            "params": self.params.as_dict(),
        }


# ---------------------------------------------------------------------------
# target sampling


@dataclass
class _TargetData:
    """Per-sample orbit data classifying membership at every level."""

    offsets: np.ndarray  # (N, 2) frame coordinates of the samples
    member: np.ndarray  # (n_max+1, N): in the hyperbolic locus at level ell
    bowen: np.ndarray  # (n_max+2, N): |T^k offset| < 1 for k = 0..ell
    k_values: np.ndarray  # (n_max, N): defect integers k_i, i = 1..n_max

    def level_mask(self, ell, k_target):
        """Samples alive at level ell: hyperbolic up to ell, in the Bowen
        ball of length ell+1 (times 0..ell) and in the target defect class."""
        m = self.member[ell] & self.bowen[ell]
        if ell >= 2:
            m = m & (self.k_values[1 : ell] == k_target[: ell - 1, None]).all(axis=0)
        return m


def _sample_targets(sys, frame, n_max, params) -> _TargetData:
    """Grid-sample the rescaled unit ball and classify every point."""
    res = params.grid_res
    g = np.linspace(-1.0, 1.0, res)
    uu, vv = np.meshgrid(g, g)
    off = np.stack([uu.ravel(), vv.ravel()], axis=-1)
    off = off[np.linalg.norm(off, axis=1) <= 1.0]
    off = np.concatenate([np.zeros((1, 2)), off], axis=0)
    pts = frame.to_manifold(off)
    bc = batch_cocycle(sys, pts, n_max + 1)

    margins = membership_margins_batch(bc.log_norm, bc.log_norm_inv, params.hyp)
    member = np.ones((n_max + 2, off.shape[0]), dtype=bool)
    ok_k = (margins >= 0.0).all(axis=-1)  # (n_max+1, N): bounds hold at time k+1
    for ell in range(1, n_max + 2):
        member[ell] = member[ell - 1] & ok_k[ell - 1]

    base_orbit = frame.base_orbit(n_max + 1)
    bowen = np.ones((n_max + 2, off.shape[0]), dtype=bool)
    for k in range(n_max + 2):
        d = sys.dist(bc.points[k], base_orbit[k]) / frame.eps
        ok = d < 1.0
        bowen[k] = ok if k == 0 else bowen[k - 1] & ok

    step_norms = svd2(bc.step_jacobians).smax
    logs = bc.log_norm[1:-1] + np.maximum(np.log(step_norms[1:]), 0.0) - bc.log_norm[2:]
    k_values = (np.where(logs > 0.0, np.floor(logs), 0.0) + 1).astype(int)
    k_values = np.concatenate([np.zeros((1, off.shape[0]), dtype=int), k_values], axis=0)
    return _TargetData(offsets=off, member=member[: n_max + 2], bowen=bowen, k_values=k_values)


# ---------------------------------------------------------------------------
# chart-level operations


def subdivision_count(k_n, k_tol):
    """Subsquares per axis of one subdivision step: [e^k / k_tol] + 1."""
    return floor_plus(math.exp(k_n) / k_tol) + 1


def subdivide(chart, k_n, k_tol=None, sample_params=None):
    """Split a chart into affine subcharts whose middle ninths tile it.

    Tiles have parameter size 1/(9m) with m = [e^{k_n}/k_tol] + 1; the
    subchart of a tile spans 1/m per axis, centered so the tile is exactly
    its middle ninth (shifted into [0,1] near edges).  When sample_params is
    given, only tiles holding a sample are produced and each entry is
    (subchart, local-params, selection-indices).  Without samples, all m^2
    tiles covering the parent's middle ninth are produced.
    """
    k_tol = chart.k_tol if k_tol is None else k_tol
    m = subdivision_count(k_n, k_tol)
    tile = 1.0 / (9.0 * m)
    out = []
    if sample_params is None:
        base = 4.0 / 9.0 + np.arange(m) * tile
        groups = {(a, b): np.empty(0, dtype=int) for a in base for b in base}
        sp = np.empty((0, 2))
    else:
        sp = np.asarray(sample_params, dtype=float)
        idx = np.clip((sp / tile).astype(int), 0, 9 * m - 1)
        groups = {}
        for r in range(sp.shape[0]):
            key = (idx[r, 0] * tile, idx[r, 1] * tile)
            groups.setdefault(key, []).append(r)
        groups = {k: np.asarray(v, dtype=int) for k, v in groups.items()}
    for (t_lo, s_lo), sel in sorted(groups.items()):
        wt = _window(t_lo, tile, m)
        ws = _window(s_lo, tile, m)
        sub = resample(chart, wt, ws)
        sub.meta["lineage"] = chart.meta.get("lineage", "") + f".t{t_lo:.6f}x{s_lo:.6f}"
        if sel.size:
            pts = sp[sel]
            local = np.empty_like(pts)
            local[:, 0] = (pts[:, 0] - wt[0]) / (wt[1] - wt[0])
            local[:, 1] = (pts[:, 1] - ws[0]) / (ws[1] - ws[0])
        else:
            local = np.empty((0, 2))
        out.append((sub, local, sel))
    return out


def _window(lo, tile, m):
    """The 1/m-wide parameter window whose middle ninth is the given tile."""
    width = 1.0 / m
    ideal = lo + tile / 2.0 - width / 2.0
    w0 = min(max(ideal, 0.0), 1.0 - width)
    return (w0, w0 + width)


def cut(chart, pad_cells=1):
    """Restrict the unstable coordinate so the (n+1)-image hugs the ball.

    Implements the third induction step on a level-(n+1) chart: if the
    image already sits inside radius 3/2 the chart is returned unchanged;
    if the image misses the unit ball entirely, None is returned (the
    caller logs the skip); otherwise the s-range is trimmed to the nodes
    meeting the 3/2-ball, padded by whole grid cells.

    Returns (chart, (a, b), image_derivative).
    """
    n = chart.n
    g = chart.G
    img = chart.frame.image_offsets(chart.grid, n)[n]
    r = np.linalg.norm(img, axis=-1)
    if (r >= 1.0).all():
        return None, None, None
    if (r <= 1.5).all():
        a, b = 0.0, 1.0
        out = chart
    else:
        inside = (r < 1.5).any(axis=0)  # s-columns meeting the 3/2 ball
        js = np.nonzero(inside)[0]
        j0 = max(int(js.min()) - pad_cells, 0)
        j1 = min(int(js.max()) + pad_cells, g)
        a, b = j0 / g, j1 / g
        if (a, b) != (0.0, 1.0):
            out = resample(chart, (0.0, 1.0), (a, b))
            out.n = n
            out.meta["lineage"] = chart.meta.get("lineage", "") + f".cut[{a:.3f},{b:.3f}]"
        else:
            out = chart
    img2 = out.frame.image_offsets(out.grid, n)[n]
    d1 = np.linalg.norm(np.diff(img2, axis=0), axis=-1).max() * g
    d2 = np.linalg.norm(np.diff(img2, axis=1), axis=-1).max() * g
    return out, (float(a), float(b)), float(max(d1, d2))


# ---------------------------------------------------------------------------
# the induction


def _seed_family(sys, frame, targets, mask, n0, params, events):
    """Initial chart family at the threshold level, tiled over the samples.

    Stable fiber length is the seed scale; the unstable one is chosen per
    chart as ~1.2 l_e / max_k ||D T^k|| at the chart's center, which makes
    the fiber aspect condition hold with a clean margin on each seed.
    """
    l_e = params.seed_scale
    worst_stretch = params.hyp.C * math.exp((params.hyp.chi_plus + params.hyp.gamma) * n0)
    l_f_min = 1.2 * l_e / worst_stretch
    off = targets.offsets[mask]
    rows_all = np.nonzero(mask)[0]
    if off.shape[0] == 0:
        return [], []
    tile_e = l_e / 24.0
    tile_f = l_f_min / 24.0
    groups = {}
    for r in range(off.shape[0]):
        key = (int(np.floor(off[r, 0] / tile_e)), int(np.floor(off[r, 1] / tile_f)))
        groups.setdefault(key, []).append(r)
    if len(groups) > params.subdivision_cap:
        raise CoverError(
            f"seed tiling needs {len(groups)} charts > cap", level=n0, item="seed"
        )
    centers = []
    sample_lists = []
    for key in sorted(groups):
        rows = np.asarray(groups[key], dtype=int)
        tile_center = np.array([(key[0] + 0.5) * tile_e, (key[1] + 0.5) * tile_f])
        sub = off[rows]
        centers.append(sub[np.argmin(((sub - tile_center) ** 2).sum(axis=1))])
        sample_lists.append(rows_all[rows])
    centers = np.asarray(centers)
    bc = batch_cocycle(sys, frame.to_manifold(centers), n0)
    l_f = 1.2 * l_e / np.exp(bc.log_norm.max(axis=0))
    charts = build_charts_in_frame(
        frame,
        centers,
        n0,
        l_e,
        l_f,
        params.chart_grid,
        params.tau,
        params.k_tol,
        metas=[{"lineage": f"seed{i}"} for i in range(len(centers))],
    )
    kept = []
    kept_samples = []
    for chart, rows in zip(charts, sample_lists):
        loc = chart_locate(chart, targets.offsets[rows])
        inside = ~np.isnan(loc[:, 0])
        inside &= (np.abs(loc - 0.5) <= 1.0 / 18.0 + 1e-9).all(axis=1)
        if not inside.any():
            events.append({"level": n0, "action": "drop_seed", "reason": "no samples in middle ninth"})
            continue
        kept.append(chart)
        kept_samples.append((rows[inside], loc[inside]))
    return kept, kept_samples


def build_cover(sys, x, n_final, params: CoverParams) -> CoverFamily:
    """Run the subdivide/saturate/cut induction up to level n_final."""
    x = as_point(x)
    n0 = params.n_threshold
    if n_final < n0:
        raise PreconditionError(f"n_final = {n_final} below n_threshold = {n0}")
    eps = params.eps if params.eps is not None else rescaling_eps(sys, params.k_tol)
    frame = LocalFrame(sys, x, eps)
    k_seq_full = _orbit_k_sequence(sys, x, n_final + 1)
    k_target = np.asarray(k_seq_full, dtype=int)
    targets = _sample_targets(sys, frame, n_final + 1, params)
    events = []
    per_level = []

    mask0 = targets.level_mask(n0, k_target)
    charts, samples = _seed_family(sys, frame, targets, mask0, n0, params, events)
    per_level.append({"level": n0, "count": len(charts), "samples": int(mask0.sum())})
    if not charts:
        events.append({"level": n0, "action": "empty", "reason": "no target samples"})
        return _finish_family(n0, [], k_seq_full, per_level, events, frame, params, sys, x)

    for ell in range(n0, n_final):
        k_n = int(k_target[ell - 1])
        survivors = targets.level_mask(ell + 1, k_target)
        subcharts = []
        sub_samples = []
        for chart, (rows, loc) in zip(charts, samples):
            keep = survivors[rows]
            if not keep.any():
                events.append(
                    {"level": ell, "action": "drop", "reason": "no surviving samples",
                     "lineage": chart.meta.get("lineage", "")}
                )
                continue
            rows = rows[keep]
            loc = loc[keep]
            for sub, local, sel in subdivide(chart, k_n, params.k_tol, loc):
                subcharts.append(sub)
                sub_samples.append((rows[sel], local))
                if len(subcharts) > params.subdivision_cap:
                    raise CoverError(
                        f"subdivision cap exceeded at level {ell}",
                        level=ell,
                        item="subdivide",
                    )
        if not subcharts:
            events.append({"level": ell, "action": "empty", "reason": "all charts dropped"})
            charts, samples = [], []
            per_level.append({"level": ell + 1, "count": 0, "samples": int(survivors.sum())})
            break
        try:
            saturated = saturate_batch(
                subcharts,
                tau=params.tau,
                n_min=min(n0, 5),
                containment_tol=params.sat_containment,
                check_preconditions=False,
            )
        except (ChartError, PreconditionError) as exc:
            raise CoverError(str(exc), level=ell, item="saturate") from exc
        new_charts = []
        new_samples = []
        for sub, sat, (rows, _) in zip(subcharts, saturated, sub_samples):
            res, srange, img_deriv = cut(sat)
            if res is None:
                events.append(
                    {"level": ell + 1, "action": "skip", "reason": "image misses unit ball",
                     "lineage": sat.meta.get("lineage", "")}
                )
                continue
            bound = 2.0 + 3.0 * params.k_tol
            if img_deriv > bound:
                events.append(
                    {"level": ell + 1, "action": "cut_bound_violation",
                     "value": img_deriv, "bound": bound,
                     "lineage": res.meta.get("lineage", "")}
                )
            loc = chart_locate(res, frame_points(targets, rows))
            ok = ~np.isnan(loc[:, 0])
            if not ok.any():
                events.append(
                    {"level": ell + 1, "action": "drop", "reason": "samples lost after cut",
                     "lineage": res.meta.get("lineage", "")}
                )
                continue
            new_charts.append(res)
            new_samples.append((rows[ok], loc[ok]))
        charts, samples = new_charts, new_samples
        per_level.append(
            {"level": ell + 1, "count": len(charts), "samples": int(survivors.sum()),
             "subdivision": subdivision_count(k_n, params.k_tol)}
        )
        if not charts:
            break
        _check_bookkeeping(targets, survivors, charts, samples, ell + 1, events)

    # final anchoring subdivision restores ||D(T^n o phi)|| <= 1 and puts
    # every surviving sample back in a middle ninth
    if charts:
        k_last = int(k_target[n_final - 1])
        final_charts = []
        final_samples = []
        for chart, (rows, loc) in zip(charts, samples):
            for sub, local, sel in subdivide(chart, k_last, params.k_tol, loc):
                final_charts.append(sub)
                final_samples.append((rows[sel], local))
        charts, samples = final_charts, final_samples
        per_level.append({"level": n_final, "count": len(charts), "final_division": True})
    return _finish_family(n_final, list(zip(charts, samples)), k_seq_full, per_level, events, frame, params, sys, x)


def frame_points(targets, rows):
    return targets.offsets[rows]


def _orbit_k_sequence(sys, x, n):
    from .hypersets import k_sequence

    return k_sequence(sys, x, n)


def _check_bookkeeping(targets, survivors, charts, samples, level, events):
    """Every surviving target sample must sit inside some kept chart."""
    covered = np.zeros(targets.offsets.shape[0], dtype=bool)
    for _, (rows, _) in zip(charts, samples):
        covered[rows] = True
    missing = int(np.count_nonzero(survivors & ~covered))
    if missing:
        events.append(
            {"level": level, "action": "bookkeeping_violation", "missing": missing}
        )


def _final_verification(charts, n, tau):
    """Items (i)-(v) on the final family: contraction, oscillations, aspect."""
    failures = []
    for idx, chart in enumerate(charts):
        g = chart.G
        d1 = np.linalg.norm(np.diff(chart.grid, axis=0), axis=-1).max() * g
        d2 = np.linalg.norm(np.diff(chart.grid, axis=1), axis=-1).max() * g
        if max(d1, d2) > 0.25 * (1.0 + 1e-9):
            failures.append((idx, "i", float(max(d1, d2))))
        imgs = chart.frame.image_offsets(chart.grid, n)
        for k in range(1, n + 1):
            e1 = np.linalg.norm(np.diff(imgs[k], axis=0), axis=-1).max() * g
            e2 = np.linalg.norm(np.diff(imgs[k], axis=1), axis=-1).max() * g
            if max(e1, e2) > 1.0 + 1e-9:
                failures.append((idx, "ii", float(max(e1, e2))))
                break
        pred = check_predicates(chart, k_list=list(range(0, n + 1)), tau=tau)
        if not pred.h_pass:
            failures.append((idx, "iii/iv", None))
        if not pred.g_pass:
            failures.append((idx, "v", (pred.g_worst_upper, pred.g_worst_lower)))
    return failures


def _finish_family(n, chart_samples, k_seq_full, per_level, events, frame, params, sys, x):
    charts = [c for c, _ in chart_samples]
    count = len(charts)
    k_used = list(k_seq_full.ks[: max(n - 1, 0)])
    bound_vii = params.d_const + params.a_value() * n + 2.0 * sum(k_used)
    ob = sys.orbit(x, n)
    lam_plus = float(np.mean(np.maximum(np.log(svd2(ob.jacobians).smax), 0.0)))
    defect = max(lam_plus - params.hyp.chi_plus, 0.0)
    bound_iii = (
        (2.0 + shannon_H(floor_plus(defect) + 3)) * defect * n
        + params.a_value() * n
        + params.d_const
    )
    failures = _final_verification(charts, n, params.tau) if charts else []
    if failures:
        item = failures[0][1]
        raise CoverError(
            f"final verification failed on item ({item}): {failures[:3]}",
            level=n,
            item=item,
        )
    stats = {
        "count": count,
        "log_count": float(np.log(count)) if count else float("-inf"),
        "bound_vii": float(bound_vii),
        "bound_iii": float(bound_iii),
        "lambda_plus": lam_plus,
        "k_seq_sum": int(sum(k_used)),
        "per_level": per_level,
        "eps": frame.eps,
    }
    fam = CoverFamily(
        n=n,
        charts=charts,
        k_seq=KSequence(ks=tuple(k_seq_full.ks[: max(n - 1, 1)])),
        stats=stats,
        events=events,
        frame=frame,
        params=params,
    )
    fam.sample_map = chart_samples
    return fam


def verify_cover(sys, family: CoverFamily, x, params: CoverParams | None = None, samples=512):
    """Independent coverage/contraction/cardinality audit of a family.

    Draws a fresh samples^2 grid, filters it to the level-n target set and
    tests point-in-chart membership by bilinear localization; contraction is
    re-measured on every chart; the cardinality is compared against the
    defect-rate bound.
    """
    params = params or family.params
    params = replace(params, grid_res=samples)
    frame = family.frame
    n = family.n
    targets = _sample_targets(sys, frame, n + 1, params)
    k_target = np.asarray(family.k_seq.ks, dtype=int)
    mask = targets.level_mask(n, k_target)
    pts = targets.offsets[mask]
    covered = np.zeros(pts.shape[0], dtype=bool)
    for chart in family.charts:
        if covered.all():
            break
        loc = chart_locate(chart, pts[~covered])
        hit = ~np.isnan(loc[:, 0])
        pending = np.nonzero(~covered)[0]
        covered[pending[hit]] = True
    coverage = float(covered.mean()) if pts.shape[0] else 1.0

    violations = 0
    for chart in family.charts:
        g = chart.G
        d1 = np.linalg.norm(np.diff(chart.grid, axis=0), axis=-1).max() * g
        d2 = np.linalg.norm(np.diff(chart.grid, axis=1), axis=-1).max() * g
        if max(d1, d2) > 0.25 * (1.0 + 1e-9):
            violations += 1
        imgs = chart.frame.image_offsets(chart.grid, n)
        for k in range(1, n + 1):
            e1 = np.linalg.norm(np.diff(imgs[k], axis=0), axis=-1).max() * g
            e2 = np.linalg.norm(np.diff(imgs[k], axis=1), axis=-1).max() * g
            if max(e1, e2) > 1.0 + 1e-9:
                violations += 1
                break
    log_count = family.stats["log_count"]
    cardinality_ok = bool(log_count <= family.stats["bound_iii"] + 1e-12) if family.charts else True
    return {
        "coverage_fraction": coverage,
        "target_samples": int(pts.shape[0]),
        "contraction_violations": int(violations),
        "cardinality_ok": cardinality_ok,
        "log_count": log_count,
        "bound_iii": family.stats["bound_iii"],
        "bound_vii": family.stats["bound_vii"],
    }
