"""Builtin surface diffeomorphisms: torus maps and the plane Henon family.

All evaluators are vectorized: points are ndarrays of shape (..., 2) and
jacobians come back as (..., 2, 2).  Torus points are stored canonically in
[0, 1)^2; local geometry is done on the flat universal cover with
nearest-lift differences, so no exponential-map numerics enter anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, EscapeError
from .linalg2 import op_norm2, svd2

__all__ = [
    "Point2",
    "SystemSpec",
    "DerivativeBounds",
    "SurfaceSystem",
    "OrbitData",
    "make_system",
    "cat_map",
    "identity_map",
    "perturbed_cat",
    "standard_map",
    "henon",
    "orbit",
    "step",
    "torus_dist",
    "wrap_torus",
    "RescaledLocalMap",
    "rescaled_local_map",
    "rescaling_eps",
]

_ROUNDTRIP_TOL = 1e-10
_NEWTON_TOL = 1e-13
_NEWTON_MAXITER = 50


def wrap_torus(p):
    """Canonical representative in [0, 1)^2."""
    return np.mod(np.asarray(p, dtype=float), 1.0)


def torus_diff(p, q):
    """Nearest-lift difference p - q, componentwise in [-1/2, 1/2)."""
    d = np.asarray(p, dtype=float) - np.asarray(q, dtype=float)
    return d - np.round(d)


def torus_dist(p, q):
    """Flat-metric distance on the torus (nearest lift)."""
    return np.linalg.norm(torus_diff(p, q), axis=-1)


@dataclass(frozen=True)
class Point2:
    """A point of the phase space; torus points canonical in [0,1)^2."""

    u: float
    v: float

    def as_array(self):
        return np.array([self.u, self.v], dtype=float)

    @classmethod
    def on_torus(cls, u, v):
        return cls(float(u) % 1.0, float(v) % 1.0)


def as_point(p):
    """Accept Point2, tuples or arrays; return an ndarray of shape (2,)."""
    if isinstance(p, Point2):
        return p.as_array()
    a = np.asarray(p, dtype=float)
    if a.shape != (2,):
        raise ValueError(f"expected a single point of shape (2,), got {a.shape}")
    return a


@dataclass(frozen=True)
class DerivativeBounds:
    """Global bounds on first and second derivatives of T and its inverse."""

    norm_dt: float
    norm_dt_inv: float
    norm_d2t: float
    norm_d2t_inv: float
    provenance: str  # "analytic" | "sampled"

    def as_dict(self):
        return {
            "norm_dt": self.norm_dt,
            "norm_dt_inv": self.norm_dt_inv,
            "norm_d2t": self.norm_d2t,
            "norm_d2t_inv": self.norm_d2t_inv,
            "provenance": self.provenance,
        }


@dataclass(frozen=True)
class SystemSpec:
    """Serializable description of a builtin system."""

    kind: str
    params: dict = field(default_factory=dict)

    @property
    def domain(self):
        return "plane_with_box" if self.kind == "henon" else "torus"

    def to_json(self):
        return json.dumps({"kind": self.kind, **self.params}, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        kind = d.pop("kind", None)
        if kind is None:
            raise ConfigError("system spec needs a 'kind' field")
        return cls(kind=kind, params=d)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


@dataclass(frozen=True)
class OrbitData:
    """An orbit segment with its one-step jacobians.

    ``points[l]`` is T^l x (canonical coordinates); ``jacobians[l]`` is the
    derivative of the step map at points[l] (of T for direction "forward",
    of T^-1 for "backward").
    """

    points: np.ndarray  # (n+1, 2)
    jacobians: np.ndarray  # (n, 2, 2)
    n: int
    direction: str = "forward"


class SurfaceSystem:
    """An invertible surface map with vectorized evaluators.

    Immutable after construction; all methods are pure, so instances are
    safe to share across threads and batch drivers.
    """

    def __init__(self, spec, bounds):
        self.spec = spec
        self.bounds = bounds
        self.domain = spec.domain

    # -- evaluators implemented by subclasses ------------------------------
    def forward_lifted(self, p):
        """The covering-plane map (no wrapping); equals forward on planes."""
        raise NotImplementedError

    def backward(self, p):
        raise NotImplementedError

    def jacobian(self, p):
        raise NotImplementedError

    def forward_diff(self, b, d):
        """Displacement propagation T(b + d) - T(b), computed without the
        cancellation of subtracting two lifted evaluations.

        b is a canonical base point, d an arbitrary plane displacement; used
        to carry chart geometry through iterates while base orbits stay in
        the fundamental domain.
        """
        b = np.asarray(b, dtype=float)
        d = np.asarray(d)
        return self.forward_lifted(b + d) - self.forward_lifted(b)

    def jacobian_backward(self, p):
        """Derivative of the inverse map at p, i.e. (D_{T^-1 p} T)^-1."""
        j = self.jacobian(self.backward(p))
        return _inv2(j)

    # -- shared machinery --------------------------------------------------
    def forward(self, p):
        q = self.forward_lifted(np.asarray(p, dtype=float))
        if self.domain == "torus":
            return wrap_torus(q)
        self._check_box(q)
        return q

    def wrap(self, p):
        return wrap_torus(p) if self.domain == "torus" else np.asarray(p, dtype=float)

    def dist(self, p, q):
        if self.domain == "torus":
            return torus_dist(p, q)
        return np.linalg.norm(np.asarray(p, dtype=float) - np.asarray(q, dtype=float), axis=-1)

    def diff(self, p, q):
        """Difference p - q in local plane coordinates (nearest lift on tori)."""
        if self.domain == "torus":
            return torus_diff(p, q)
        return np.asarray(p, dtype=float) - np.asarray(q, dtype=float)

    def _check_box(self, p):
        pass

    def step(self, p, direction="forward"):
        if direction == "forward":
            return self.forward(p)
        if direction == "backward":
            return self.backward(p)
        raise ValueError(f"unknown direction {direction!r}")

    def orbit(self, x, n, direction="forward"):
        """Orbit x, Tx, ..., T^n x with the one-step jacobians along it."""
        if n < 1:
            raise ValueError("orbit length n must be >= 1")
        x = as_point(x)
        pts = np.empty((n + 1, 2))
        jac = np.empty((n, 2, 2))
        pts[0] = self.wrap(x)
        for l in range(n):
            if direction == "forward":
                jac[l] = self.jacobian(pts[l])
                pts[l + 1] = self.forward(pts[l])
            else:
                jac[l] = self.jacobian_backward(pts[l])
                pts[l + 1] = self.backward(pts[l])
        return OrbitData(points=pts, jacobians=jac, n=n, direction=direction)

    def orbit_batch(self, xs, n):
        """Forward orbits of a batch of points: ((n+1, N, 2), (n, N, 2, 2))."""
        xs = self.wrap(np.asarray(xs, dtype=float))
        pts = np.empty((n + 1,) + xs.shape)
        jac = np.empty((n,) + xs.shape[:-1] + (2, 2))
        pts[0] = xs
        for l in range(n):
            jac[l] = self.jacobian(pts[l])
            pts[l + 1] = self.forward(pts[l])
        return pts, jac

    def _verify_roundtrip(self):
        g = np.linspace(0.0, 1.0, 32, endpoint=False) + 1 / 64
        uu, vv = np.meshgrid(g, g)
        pts = np.stack([uu.ravel(), vv.ravel()], axis=-1)
        if self.domain != "torus":
            pts = self._box_grid(32)
        err = self.dist(self.backward(self.forward(pts)), pts).max()
        if err > _ROUNDTRIP_TOL:
            raise ConfigError(f"backward o forward differs from identity by {err:.3e}")


def _inv2(j):
    """Inverse of (..., 2, 2) matrices via the adjugate."""
    j = np.asarray(j, dtype=float)
    det = j[..., 0, 0] * j[..., 1, 1] - j[..., 0, 1] * j[..., 1, 0]
    out = np.empty_like(j)
    out[..., 0, 0] = j[..., 1, 1]
    out[..., 0, 1] = -j[..., 0, 1]
    out[..., 1, 0] = -j[..., 1, 0]
    out[..., 1, 1] = j[..., 0, 0]
    return out / det[..., None, None]


class _AffineTorus(SurfaceSystem):
    def __init__(self, spec, matrix, shift):
        self.m = matrix
        self.minv = _inv2(matrix)
        self.shift = shift
        smax = float(op_norm2(self.m))
        smax_inv = float(op_norm2(self.minv))
        bounds = DerivativeBounds(smax, smax_inv, 0.0, 0.0, "analytic")
        super().__init__(spec, bounds)

    def forward_lifted(self, p):
        return np.asarray(p, dtype=float) @ self.m.T + self.shift

    def backward(self, p):
        q = (np.asarray(p, dtype=float) - self.shift) @ self.minv.T
        return wrap_torus(q)

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.m, p.shape[:-1] + (2, 2)).copy()

    def jacobian_backward(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.minv, p.shape[:-1] + (2, 2)).copy()

    def forward_diff(self, b, d):
        return np.asarray(d) @ self.m.T


class _PerturbedCat(SurfaceSystem):
    """Linear torus map plus a delta * sin(2 pi .) perturbation per axis."""

    def __init__(self, spec, matrix, delta):
        self.m = matrix
        self.minv = _inv2(matrix)
        self.delta = float(delta)
        two_pi = 2.0 * np.pi
        smax = float(op_norm2(self.m))
        smax_inv = float(op_norm2(self.minv))
        dt = smax + two_pi * self.delta
        denom = 1.0 - smax_inv * two_pi * self.delta
        if denom <= 0.0:
            raise ConfigError("perturbation too large for an analytic inverse bound")
        dt_inv = smax_inv / denom
        d2t = 4.0 * np.pi**2 * self.delta
        bounds = DerivativeBounds(dt, dt_inv, d2t, d2t * dt_inv**3, "analytic")
        super().__init__(spec, bounds)
        self._check_diffeo()
        self._verify_roundtrip()

    def forward_lifted(self, p):
        p = np.asarray(p, dtype=float)
        lin = p @ self.m.T
        return lin + self.delta * np.sin(2.0 * np.pi * p)

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        j = np.broadcast_to(self.m, p.shape[:-1] + (2, 2)).copy()
        d = 2.0 * np.pi * self.delta * np.cos(2.0 * np.pi * p)
        j[..., 0, 0] += d[..., 0]
        j[..., 1, 1] += d[..., 1]
        return j

    def backward(self, p):
        q = np.asarray(p, dtype=float)
        x = wrap_torus((q - self.delta * np.sin(2.0 * np.pi * q)) @ self.minv.T)
        for _ in range(_NEWTON_MAXITER):
            r = self.forward_lifted(x) - q
            r -= np.round(r)
            if np.max(np.abs(r)) < _NEWTON_TOL:
                break
            dx = np.einsum("...ij,...j->...i", _inv2(self.jacobian(x)), r)
            x = wrap_torus(x - dx)
        else:
            raise ConfigError("Newton iteration for the inverse did not converge")
        return x

    def forward_diff(self, b, d):
        # sin(2 pi (b+d)) - sin(2 pi b) in product form: stable for small d
        b = np.asarray(b, dtype=float)
        d = np.asarray(d)
        g = 2.0 * self.delta * np.cos(np.pi * (2.0 * b + d)) * np.sin(np.pi * d)
        return d @ self.m.T + g

    def _check_diffeo(self):
        g = np.linspace(0.0, 1.0, 64, endpoint=False)
        uu, vv = np.meshgrid(g, g)
        pts = np.stack([uu.ravel(), vv.ravel()], axis=-1)
        j = self.jacobian(pts)
        det = j[..., 0, 0] * j[..., 1, 1] - j[..., 0, 1] * j[..., 1, 0]
        if det.min() * det.max() <= 0.0:
            raise ConfigError(
                "sampled Jacobian determinant changes sign: perturbation too large"
            )


class _StandardMap(SurfaceSystem):
    """Chirikov twist map: v' = v + (k/2pi) sin(2pi u), u' = u + v'."""

    def __init__(self, spec, k):
        self.k = float(k)
        f2 = 2.0 * self.k**2 + 2.0 * self.k + 3.0  # max Frobenius^2 of DT
        smax2 = 0.5 * (f2 + np.sqrt(max(f2**2 - 4.0, 0.0)))
        dt = float(np.sqrt(smax2))
        d2t = 2.0 * np.sqrt(2.0) * np.pi * abs(self.k)
        bounds = DerivativeBounds(dt, dt, d2t, 4.0 * np.pi * abs(self.k), "analytic")
        super().__init__(spec, bounds)
        self._verify_roundtrip()

    def forward_lifted(self, p):
        p = np.asarray(p, dtype=float)
        vnew = p[..., 1] + self.k / (2.0 * np.pi) * np.sin(2.0 * np.pi * p[..., 0])
        return np.stack([p[..., 0] + vnew, vnew], axis=-1)

    def backward(self, p):
        p = np.asarray(p, dtype=float)
        u = p[..., 0] - p[..., 1]
        v = p[..., 1] - self.k / (2.0 * np.pi) * np.sin(2.0 * np.pi * u)
        return wrap_torus(np.stack([u, v], axis=-1))

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        a = self.k * np.cos(2.0 * np.pi * p[..., 0])
        j = np.empty(p.shape[:-1] + (2, 2))
        j[..., 0, 0] = 1.0 + a
        j[..., 0, 1] = 1.0
        j[..., 1, 0] = a
        j[..., 1, 1] = 1.0
        return j

    def forward_diff(self, b, d):
        b = np.asarray(b, dtype=float)
        d = np.asarray(d)
        g = (
            self.k
            / np.pi
            * np.cos(np.pi * (2.0 * b[..., 0] + d[..., 0]))
            * np.sin(np.pi * d[..., 0])
        )
        dv = d[..., 1] + g
        return np.stack([d[..., 0] + dv, dv], axis=-1)


class _Henon(SurfaceSystem):
    """Henon map on a configured trapping box; escapes raise, never wrap."""

    def __init__(self, spec, a, b, box):
        self.a = float(a)
        self.b = float(b)
        if self.b == 0.0:
            raise ConfigError("henon needs b != 0 to be invertible")
        self.box = np.asarray(box, dtype=float)  # [[xmin, xmax], [ymin, ymax]]
        xmax = np.abs(self.box[0]).max()
        ymax = np.abs(self.box[1]).max()
        dt = float(op_norm2(np.array([[2 * self.a * xmax, 1.0], [abs(self.b), 0.0]])))
        dt_inv = float(
            op_norm2(np.array([[0.0, 1 / abs(self.b)], [1.0, 2 * self.a * ymax / self.b**2]]))
        )
        bounds = DerivativeBounds(dt, dt_inv, 2 * self.a, 2 * self.a / self.b**2, "analytic")
        super().__init__(spec, bounds)
        self._verify_roundtrip()

    def forward_lifted(self, p):
        p = np.asarray(p, dtype=float)
        return np.stack(
            [1.0 + p[..., 1] - self.a * p[..., 0] ** 2, self.b * p[..., 0]], axis=-1
        )

    def backward(self, p):
        p = np.asarray(p, dtype=float)
        x = p[..., 1] / self.b
        q = np.stack([x, p[..., 0] - 1.0 + self.a * x**2], axis=-1)
        self._check_box(q)
        return q

    def jacobian(self, p):
        p = np.asarray(p, dtype=float)
        j = np.empty(p.shape[:-1] + (2, 2))
        j[..., 0, 0] = -2.0 * self.a * p[..., 0]
        j[..., 0, 1] = 1.0
        j[..., 1, 0] = self.b
        j[..., 1, 1] = 0.0
        return j

    def forward_diff(self, b, d):
        b = np.asarray(b, dtype=float)
        d = np.asarray(d)
        dx = d[..., 0]
        return np.stack(
            [d[..., 1] - self.a * dx * (2.0 * b[..., 0] + dx), self.b * dx], axis=-1
        )

    def _check_box(self, p):
        inside = (
            (p[..., 0] >= self.box[0, 0])
            & (p[..., 0] <= self.box[0, 1])
            & (p[..., 1] >= self.box[1, 0])
            & (p[..., 1] <= self.box[1, 1])
        )
        if not np.all(inside):
            raise EscapeError(f"{int(np.size(inside) - np.count_nonzero(inside))} point(s) left the trapping box")

    def _box_grid(self, n):
        gx = np.linspace(self.box[0, 0], self.box[0, 1], n)
        gy = np.linspace(self.box[1, 0], self.box[1, 1], n)
        uu, vv = np.meshgrid(gx, gy)
        return np.stack([uu.ravel(), vv.ravel()], axis=-1)


def _int_matrix(m):
    m = np.asarray(m, dtype=float)
    if m.shape != (2, 2):
        raise ConfigError("matrix must be 2x2")
    r = np.round(m)
    if np.abs(m - r).max() > 1e-9:
        raise ConfigError("affine torus matrix must have integer entries")
    det = r[0, 0] * r[1, 1] - r[0, 1] * r[1, 0]
    if abs(abs(det) - 1.0) > 1e-9:
        raise ConfigError(f"matrix must be unimodular (det = +-1), got det = {det:g}")
    return r


def make_system(spec) -> SurfaceSystem:
    """Instantiate a builtin system from its spec (dict or SystemSpec)."""
    if isinstance(spec, dict):
        spec = SystemSpec.from_dict(spec)
    p = spec.params
    if spec.kind == "affine_torus":
        m = _int_matrix(p.get("matrix", [[2, 1], [1, 1]]))
        shift = np.asarray(p.get("shift", [0.0, 0.0]), dtype=float)
        return _AffineTorus(spec, m, shift)
    if spec.kind == "perturbed_cat":
        m = _int_matrix(p.get("matrix", [[2, 1], [1, 1]]))
        return _PerturbedCat(spec, m, p.get("delta", 0.01))
    if spec.kind == "standard_map":
        return _StandardMap(spec, p.get("k", 0.97))
    if spec.kind == "henon":
        box = p.get("box", [[-2.0, 2.0], [-0.6, 0.6]])
        return _Henon(spec, p.get("a", 1.4), p.get("b", 0.3), box)
    raise ConfigError(f"unknown system kind {spec.kind!r}")


def cat_map():
    return make_system(SystemSpec("affine_torus", {"matrix": [[2, 1], [1, 1]]}))


def identity_map():
    return make_system(SystemSpec("affine_torus", {"matrix": [[1, 0], [0, 1]]}))


def perturbed_cat(delta=0.01):
    return make_system(SystemSpec("perturbed_cat", {"matrix": [[2, 1], [1, 1]], "delta": delta}))


def standard_map(k=0.97):
    return make_system(SystemSpec("standard_map", {"k": k}))


def henon(a=1.4, b=0.3, box=None):
    params = {"a": a, "b": b}
    if box is not None:
        params["box"] = box
    return make_system(SystemSpec("henon", params))


def step(sys, p, direction="forward"):
    """Single map step of one point."""
    return sys.step(as_point(p), direction)


def orbit(sys, x, n, direction="forward") -> OrbitData:
    return sys.orbit(x, n, direction)


_TORUS_CHART_RADIUS = 0.25


class RescaledLocalMap:
    """The single map step seen in the eps-rescaled frame along an orbit.

    Evaluates v -> (T(c + eps v) - T(c)) / eps on the disk of radius 2,
    where c is the (n-1)-th orbit point of x; the jacobian at v is exactly
    the jacobian of T at c + eps v, and the second derivative of the
    rescaled map shrinks linearly in eps.
    """

    def __init__(self, sys, x, n, eps):
        if eps <= 0.0:
            raise ValueError("eps must be positive")
        if sys.domain == "torus" and eps >= _TORUS_CHART_RADIUS / 2.0:
            raise ValueError(
                f"eps = {eps:g} too large for the flat chart (radius {_TORUS_CHART_RADIUS})"
            )
        self.sys = sys
        self.x = as_point(x)
        self.n = int(n)
        self.eps = float(eps)
        ob = sys.orbit(self.x, max(n - 1, 1)) if n >= 2 else None
        self.base = ob.points[n - 1] if n >= 2 else sys.wrap(self.x)
        self.image_base = sys.forward_lifted(self.base)

    def eval(self, v):
        v = np.asarray(v, dtype=float)
        y = self.sys.forward_lifted(self.base + self.eps * v)
        return (y - self.image_base) / self.eps

    def jacobian(self, v):
        v = np.asarray(v, dtype=float)
        return self.sys.jacobian(self.base + self.eps * v)


def rescaled_local_map(sys, x, n, eps) -> RescaledLocalMap:
    return RescaledLocalMap(sys, x, n, eps)


def rescaling_eps(sys, k_tol=0.1, cap=0.1) -> float:
    """A frame scale making second derivatives subordinate to first ones.

    Chooses eps so that eps*||D2T|| stays below the smallest stretch of DT,
    the symmetric condition holds for the inverse, and ||DT|| varies by at
    most a factor (1 + k_tol) over distance 2 eps.  For affine systems the
    conditions are vacuous and the cap is returned.
    """
    b = sys.bounds
    cands = [cap]
    if b.norm_d2t > 0.0:
        cands.append((1.0 / b.norm_dt_inv) / b.norm_d2t)
        cands.append(k_tol / (2.0 * b.norm_d2t * b.norm_dt_inv))
    if b.norm_d2t_inv > 0.0:
        cands.append(1.0 / (b.norm_d2t_inv * b.norm_dt**2))
    return 0.9 * min(cands)
