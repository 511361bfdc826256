"""Finite-time stable/unstable manifold tracing in local plane frames.

A LocalFrame identifies a neighborhood of a base point with a disk in R^2
(optionally rescaled), so all chart geometry lives in plain plane
coordinates with no wrapping; torus systems only enter through canonical
orbit points when fields and jacobians are evaluated.  Manifolds are
integral curves of the unit contracted/expanded direction fields,
integrated with fixed-step RK4 under per-step sign continuity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cocycle import batch_fields, orient_along
from .errors import ChartError, DegenerateSplitError
from .systems import as_point

__all__ = [
    "LocalFrame",
    "ManifoldCurve",
    "trace_manifold",
    "trace_batch",
]


class LocalFrame:
    """Affine identification v -> base + eps * v with the covering plane.

    eps = 1 gives plain lifted coordinates around base (used for charts on
    the manifold itself); eps < 1 is the rescaled frame in which Bowen-ball
    geometry at scale eps becomes order-one.
    """

    def __init__(self, sys, base, eps=1.0):
        self.sys = sys
        self.base = sys.wrap(as_point(base))
        self.eps = float(eps)
        self._base_orbit = [self.base]

    def to_manifold(self, v):
        """Canonical phase-space points of frame coordinates (..., 2)."""
        return self.sys.wrap(self.base + self.eps * np.asarray(v, dtype=float))

    def from_manifold(self, p):
        """Frame coordinates of canonical points near the base."""
        return self.sys.diff(p, self.base) / self.eps

    def base_orbit(self, k):
        """Canonical forward orbit of the base, cached: T^0 .. T^k."""
        while len(self._base_orbit) <= k:
            self._base_orbit.append(self.sys.forward(self._base_orbit[-1]))
        return self._base_orbit[: k + 1]

    def field(self, v, n, kind, tau=1e-6):
        """Unit direction field (stable e_n or unstable f_n) at frame coords.

        Returns (dirs, ok): directions are frame-invariant; ok flags points
        whose split clears the degeneracy margin.
        """
        pts = self.to_manifold(v)
        e, f, ok = batch_fields(self.sys, pts, n, tau)
        return (e if kind == "stable" else f), ok

    def image_offsets(self, v, kmax):
        """Frame-relative images (T^k(base + eps v) - T^k base)/eps.

        Shape (kmax+1,) + v.shape; computed by displacement propagation
        along the canonical base orbit, so stretched images never meet torus
        wrapping or lifted-coordinate cancellation.  The propagation runs in
        extended precision: rounding injected into a contracted displacement
        is re-amplified by the full condition number of the cocycle, which
        at double precision would pollute stable-image lengths by ~1e-12
        already at modest n.
        """
        v = np.asarray(v, dtype=float)
        base_orbit = self.base_orbit(kmax)
        out = np.empty((kmax + 1,) + v.shape)
        out[0] = v
        d = np.asarray(self.eps * v, dtype=np.longdouble)
        for k in range(kmax):
            d = self.sys.forward_diff(base_orbit[k], d)
            out[k + 1] = np.asarray(d, dtype=float) / self.eps
        return out


@dataclass
class ManifoldCurve:
    """A traced finite-time manifold as an arclength-ordered polyline.

    ``vertices`` are frame coordinates (plane, continuous); ``points`` are
    the canonical phase-space points.  The base sits at index ``len//2``
    unless the trace stopped early on one side (``truncated``).
    """

    base: np.ndarray
    n: int
    kind: str
    vertices: np.ndarray  # (m, 2) frame coords
    points: np.ndarray  # (m, 2) canonical coords
    arclength: float
    step: float
    truncated: bool

    def base_index(self):
        return int(np.argmin(np.linalg.norm(self.vertices - self.base, axis=1)))


def _rk4_step(frame, v, n, kind, tau, h, ref):
    """One unit-speed RK4 step of the oriented field; returns (v_new, dir).

    Raises DegenerateSplitError if any stage leaves the hyperbolicity locus.
    """
    def f(u):
        d, ok = frame.field(u, n, kind, tau)
        if not np.all(ok):
            raise DegenerateSplitError("trace left the hyperbolicity locus U_n")
        return orient_along(d, ref)

    k1 = f(v)
    k2 = f(v + 0.5 * h * k1)
    k3 = f(v + 0.5 * h * k2)
    k4 = f(v + h * k3)
    incr = (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    return v + h * incr, k1


def trace_batch(frame, starts, n, kind, h, halfsteps, tau=1e-6, init_ref=None):
    """Trace several curves in lockstep through the same field.

    ``h`` may be a scalar or a per-curve column (N, 1) of step sizes.
    Returns an array (2*halfsteps + 1, N, 2) of frame coordinates ordered by
    arclength; row halfsteps holds the start points.  ``init_ref`` fixes the
    +arclength orientation (defaults to the raw field sign at the starts).
    Raises ChartError when the field degenerates anywhere along the way.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    m = int(halfsteps)
    out = np.empty((2 * m + 1, starts.shape[0], 2))
    out[m] = starts
    d0, ok = frame.field(starts, n, kind, tau)
    if not np.all(ok):
        raise ChartError("degenerate split at a trace start point")
    if init_ref is not None:
        d0 = orient_along(d0, np.asarray(init_ref, dtype=float))
    for sgn in (+1, -1):
        v = starts.copy()
        ref = d0 * sgn
        j = 0
        try:
            for j in range(1, m + 1):
                v, ref = _rk4_step(frame, v, n, kind, tau, h, ref)
                out[m + sgn * j] = v
        except DegenerateSplitError as exc:
            raise ChartError(f"trace left U_n after {j} steps: {exc}") from exc
    return out


def trace_manifold(sys, z, n, kind, halflength, tau=1e-6, step=None) -> ManifoldCurve:
    """Integrate the finite-time stable/unstable field through z both ways.

    The polyline covers arclength ``halflength`` on each side of z unless
    the split degenerates first, in which case that side stops early and
    the curve is flagged truncated.
    """
    if kind not in ("stable", "unstable"):
        raise ValueError("kind must be 'stable' or 'unstable'")
    if halflength <= 0.0:
        raise ValueError("halflength must be positive")
    frame = LocalFrame(sys, z, 1.0)
    h = step if step is not None else halflength / 256.0
    m = int(np.ceil(halflength / h))
    z0 = np.zeros((1, 2))
    d0, ok = frame.field(z0, n, kind, tau)
    if not ok[0]:
        raise DegenerateSplitError(f"base point not in U_{n}")
    sides = []
    truncated = False
    for sgn in (-1, +1):
        v = z0.copy()
        ref = d0 * sgn
        verts = []
        for _ in range(m):
            try:
                v, ref = _rk4_step(frame, v, n, kind, tau, h, ref)
            except DegenerateSplitError:
                truncated = True
                break
            verts.append(v[0].copy())
        sides.append(verts)
    back = sides[0][::-1]
    fwd = sides[1]
    vertices = np.array(back + [z0[0]] + fwd)
    arclength = h * (len(back) + len(fwd))
    return ManifoldCurve(
        base=z0[0],
        n=n,
        kind=kind,
        vertices=vertices,
        points=frame.to_manifold(vertices),
        arclength=float(arclength),
        step=float(h),
        truncated=truncated,
    )
