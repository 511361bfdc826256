"""Overflow-safe cocycle products, finite-time fields and Lyapunov estimators.

The n-step derivative D_x T^n is never formed as a raw product.  It is held
factored as  P = e^s * Q @ U  with Q orthogonal, U upper triangular of unit
max-entry and s an accumulated log scale, updated by one Givens QR per step;
log|det P| is accumulated separately from the well-conditioned one-step
determinants.  Norms, splittings and condition numbers are queried from the
factored form, so n in the hundreds is exact to rounding while a naive
product has long overflowed.  The small singular value always comes from
log|det| - log sigma_max, never from a subtraction of near-equal squares.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSplitError
from .linalg2 import canonical_sign, perp, svd2
from .systems import as_point

__all__ = [
    "CocycleAccumulator",
    "BatchCocycle",
    "batch_cocycle",
    "FieldSample",
    "finite_time_fields",
    "batch_fields",
    "birkhoff_lambda_plus",
    "LyapunovEstimate",
    "lyapunov_qr",
    "HolonomyAngleCheck",
    "holangle_check",
    "orient_along",
]


class CocycleAccumulator:
    """Running QR-factored product of a stream of 2x2 matrices (batched).

    After pushing J_0, ..., J_{k-1} the object represents
    P_k = J_{k-1} @ ... @ J_0.
    """

    def __init__(self, batch_shape=()):
        shape = tuple(batch_shape)
        self.q = np.zeros(shape + (2, 2))
        self.q[..., 0, 0] = 1.0
        self.q[..., 1, 1] = 1.0
        self.t11 = np.ones(shape)
        self.t12 = np.zeros(shape)
        self.t22 = np.ones(shape)
        self.logscale = np.zeros(shape)
        self.logdet = np.zeros(shape)
        self.detsign = np.ones(shape)
        self.steps = 0

    def push(self, j):
        j = np.asarray(j, dtype=float)
        z = j @ self.q
        z00 = z[..., 0, 0]
        z10 = z[..., 1, 0]
        r = np.hypot(z00, z10)
        safe = np.where(r == 0.0, 1.0, r)
        c = np.where(r == 0.0, 1.0, z00 / safe)
        s = np.where(r == 0.0, 0.0, z10 / safe)
        r01 = c * z[..., 0, 1] + s * z[..., 1, 1]
        r11 = -s * z[..., 0, 1] + c * z[..., 1, 1]
        self.q[..., 0, 0] = c
        self.q[..., 0, 1] = -s
        self.q[..., 1, 0] = s
        self.q[..., 1, 1] = c
        t11 = r * self.t11
        t12 = r * self.t12 + r01 * self.t22
        t22 = r11 * self.t22
        m = np.maximum(np.abs(t11), np.maximum(np.abs(t12), np.abs(t22)))
        m = np.where(m == 0.0, 1.0, m)
        self.logscale = self.logscale + np.log(m)
        self.t11 = t11 / m
        self.t12 = t12 / m
        self.t22 = t22 / m
        det = j[..., 0, 0] * j[..., 1, 1] - j[..., 0, 1] * j[..., 1, 0]
        self.logdet = self.logdet + np.log(np.abs(det))
        self.detsign = self.detsign * np.sign(det)
        self.steps += 1

    def _tmat(self):
        t = np.zeros(self.t11.shape + (2, 2))
        t[..., 0, 0] = self.t11
        t[..., 0, 1] = self.t12
        t[..., 1, 1] = self.t22
        return t

    def normalized_matrix(self):
        """The product at unit scale: P_k = exp(logscale) * normalized_matrix."""
        return self.q @ self._tmat()

    def normalized_inverse(self):
        """(matrix, logscale) with P_k^{-1} = exp(logscale) * matrix.

        Built from the adjugate and the separately accumulated log|det|, so
        it stays accurate when the small singular value underflows.
        """
        m = self.normalized_matrix()
        adj = np.empty_like(m)
        adj[..., 0, 0] = m[..., 1, 1]
        adj[..., 0, 1] = -m[..., 0, 1]
        adj[..., 1, 0] = -m[..., 1, 0]
        adj[..., 1, 1] = m[..., 0, 0]
        return adj * self.detsign[..., None, None], self.logscale - self.logdet

    def log_norm(self):
        """log ||P_k||."""
        return self.logscale + np.log(svd2(self._tmat()).smax)

    def log_norm_inv(self):
        """log ||P_k^{-1}||, from log sigma_min = log|det| - log sigma_max."""
        return self.log_norm() - self.logdet

    def log_cond(self):
        return 2.0 * self.log_norm() - self.logdet

    def split_directions(self):
        """Unit fields (e, f, e_img, f_img) of the accumulated product.

        e/f are most contracted/expanded input directions, e_img/f_img their
        normalized images.  e_img is built as the exact perpendicular of
        f_img signed by det, which stays accurate when sigma_min underflows.
        """
        s = svd2(self._tmat())
        f = s.expanded_dir()
        e = s.contracted_dir()
        f_img = np.einsum("...ij,...j->...i", self.q, s.expanded_image_dir())
        e_img_t = s.contracted_image_dir()
        e_img = np.einsum("...ij,...j->...i", self.q, e_img_t)
        return e, f, e_img, f_img


@dataclass
class BatchCocycle:
    """Orbit-resolved norm data for a batch of base points.

    Index k runs 0..n: log_norm[k] = log ||D T^k|| at the base points and
    log_norm_inv[k] = log ||D_{T^k .} T^{-k}||; entries at k = 0 vanish.
    """

    points: np.ndarray  # (n+1, ..., 2) orbit points
    step_jacobians: np.ndarray  # (n, ..., 2, 2)
    log_norm: np.ndarray  # (n+1, ...)
    log_norm_inv: np.ndarray  # (n+1, ...)
    log_det: np.ndarray  # (n+1, ...)
    acc: CocycleAccumulator  # final accumulator (after n steps)
    matrices: np.ndarray | None = None  # (n+1, ..., 2, 2) normalized products
    scales: np.ndarray | None = None  # (n+1, ...) their log scales
    inv_matrices: np.ndarray | None = None
    inv_scales: np.ndarray | None = None


def batch_cocycle(sys, pts, n, keep_matrices=False) -> BatchCocycle:
    """Run forward orbits and accumulate the factored cocycle with a norm
    table for every intermediate time k <= n.

    With keep_matrices the per-step normalized products and their inverses
    are recorded: matrices[k] * exp(scales[k]) = D T^k and
    inv_matrices[k] * exp(inv_scales[k]) = D_{T^k .} T^{-k}.
    """
    pts = sys.wrap(np.asarray(pts, dtype=float))
    shape = pts.shape[:-1]
    acc = CocycleAccumulator(shape)
    points = np.empty((n + 1,) + pts.shape)
    jacs = np.empty((n,) + shape + (2, 2))
    log_norm = np.zeros((n + 1,) + shape)
    log_norm_inv = np.zeros((n + 1,) + shape)
    log_det = np.zeros((n + 1,) + shape)
    mats = inv_mats = scales = inv_scales = None
    if keep_matrices:
        mats = np.zeros((n + 1,) + shape + (2, 2))
        inv_mats = np.zeros((n + 1,) + shape + (2, 2))
        mats[0] = inv_mats[0] = np.eye(2)
        scales = np.zeros((n + 1,) + shape)
        inv_scales = np.zeros((n + 1,) + shape)
    points[0] = pts
    x = pts
    for l in range(n):
        j = sys.jacobian(x)
        jacs[l] = j
        acc.push(j)
        x = sys.forward(x)
        points[l + 1] = x
        ln = acc.log_norm()
        log_norm[l + 1] = ln
        log_det[l + 1] = acc.logdet
        log_norm_inv[l + 1] = ln - acc.logdet
        if keep_matrices:
            mats[l + 1] = acc.normalized_matrix()
            scales[l + 1] = acc.logscale
            inv_mats[l + 1], inv_scales[l + 1] = acc.normalized_inverse()
    return BatchCocycle(
        points=points,
        step_jacobians=jacs,
        log_norm=log_norm,
        log_norm_inv=log_norm_inv,
        log_det=log_det,
        acc=acc,
        matrices=mats,
        scales=scales,
        inv_matrices=inv_mats,
        inv_scales=inv_scales,
    )


@dataclass(frozen=True)
class FieldSample:
    """Finite-time stable/unstable data of D_x T^n at a single point."""

    x: np.ndarray
    n: int
    e_n: np.ndarray
    f_n: np.ndarray
    e_img: np.ndarray
    f_img: np.ndarray
    norm_n: float
    norm_inv_n: float
    log_norm_n: float
    log_norm_inv_n: float

    def as_dict(self):
        return {
            "x": list(map(float, self.x)),
            "n": self.n,
            "e_n": list(map(float, self.e_n)),
            "f_n": list(map(float, self.f_n)),
            "e_img": list(map(float, self.e_img)),
            "f_img": list(map(float, self.f_img)),
            "norm_n": self.norm_n,
            "norm_inv_n": self.norm_inv_n,
            "log_norm_n": self.log_norm_n,
            "log_norm_inv_n": self.log_norm_inv_n,
        }


def finite_time_fields(sys, x, n, tau=1e-6) -> FieldSample:
    """Most contracted/expanded fields of D_x T^n, assembled from the
    factored cocycle.  Raises DegenerateSplitError when x is outside U_n."""
    x = as_point(x)
    bc = batch_cocycle(sys, x, n)
    acc = bc.acc
    log_cond = float(acc.log_cond())
    if log_cond < np.log1p(tau):
        raise DegenerateSplitError(
            f"x not in U_{n}: sigma_max/sigma_min = {np.exp(log_cond):.6g} < 1 + {tau:g}",
            ratio=float(np.exp(log_cond)),
        )
    e, f, e_img, f_img = acc.split_directions()
    ln = float(acc.log_norm())
    lninv = float(acc.log_norm_inv())
    return FieldSample(
        x=x,
        n=n,
        e_n=canonical_sign(e),
        f_n=canonical_sign(f),
        e_img=canonical_sign(e_img),
        f_img=canonical_sign(f_img),
        norm_n=float(np.exp(ln)),
        norm_inv_n=float(np.exp(lninv)),
        log_norm_n=ln,
        log_norm_inv_n=lninv,
    )


def batch_fields(sys, pts, n, tau=1e-6):
    """Vectorized finite-time fields for many points at once.

    Returns (e, f, ok) where ok flags points whose split clears the
    degeneracy margin; directions at not-ok points are meaningless.
    """
    bc = batch_cocycle(sys, pts, n)
    e, f, _, _ = bc.acc.split_directions()
    ok = bc.acc.log_cond() >= np.log1p(tau)
    return e, f, ok


def orient_along(dirs, ref):
    """Flip unit directions so they point the same way as ref (dot >= 0)."""
    d = np.sum(dirs * ref, axis=-1)
    s = np.where(d < 0.0, -1.0, 1.0)
    return dirs * s[..., None]


def birkhoff_lambda_plus(orbit_data) -> float:
    """Average of log+ of the one-step operator norms along an orbit."""
    if orbit_data.n < 1:
        raise ValueError("orbit must have length >= 1")
    norms = svd2(orbit_data.jacobians).smax
    return float(np.mean(np.maximum(np.log(norms), 0.0)))


@dataclass(frozen=True)
class LyapunovEstimate:
    chi_plus: float
    chi_minus: float
    n: int
    method: str

    def as_dict(self):
        return {
            "chi_plus": self.chi_plus,
            "chi_minus": self.chi_minus,
            "n": self.n,
            "method": self.method,
        }


def lyapunov_qr(sys, x, n, method="qr") -> LyapunovEstimate:
    """Finite-horizon Lyapunov exponents from the n-step cocycle.

    method "qr": singular values of the QR-factored, log-scaled product
    (safe at any n); "svd_endpoint": naive matrix product and one SVD,
    usable only while the product does not overflow (cross-check oracle).
    chi_minus is derived from the exact determinant identity
    chi_plus + chi_minus = (1/n) log|det D_x T^n|.
    """
    x = as_point(x)
    if n < 1:
        raise ValueError("n must be >= 1")
    if method == "qr":
        ob = sys.orbit(x, n)
        acc = CocycleAccumulator()
        for l in range(n):
            acc.push(ob.jacobians[l])
        chi_plus = float(acc.log_norm()) / n
        chi_minus = float(acc.logdet) / n - chi_plus
    elif method == "svd_endpoint":
        ob = sys.orbit(x, n)
        p = np.eye(2)
        for l in range(n):
            p = ob.jacobians[l] @ p
        s = svd2(p)
        chi_plus = float(np.log(s.smax)) / n
        chi_minus = float(np.log(s.smin)) / n
    else:
        raise ValueError(f"unknown method {method!r}")
    return LyapunovEstimate(chi_plus=chi_plus, chi_minus=chi_minus, n=n, method=method)


@dataclass(frozen=True)
class HolonomyAngleCheck:
    """Measured angle between successive stable fields vs its bound."""

    n: int
    lhs: float  # tan |angle(e_n, e_{n+1})|
    rhs: float  # 2 cond(one step) / cond(n steps)
    ok: bool

    def as_dict(self):
        return {"n": self.n, "lhs": self.lhs, "rhs": self.rhs, "ok": bool(self.ok)}


def holangle_check(sys, x, n, tau=1e-6, slack=1e-6) -> HolonomyAngleCheck:
    """Check tan|angle(e_n, e_{n+1})| against twice the one-step condition
    number divided by the n-step condition number at x."""
    x = as_point(x)
    bc = batch_cocycle(sys, x, n + 1)
    acc_n = CocycleAccumulator()
    for l in range(n):
        acc_n.push(bc.step_jacobians[l])
    for acc in (acc_n, bc.acc):
        if float(acc.log_cond()) < np.log1p(tau):
            raise DegenerateSplitError("degenerate split along the orbit", ratio=None)
    e_n = acc_n.split_directions()[0]
    e_n1 = bc.acc.split_directions()[0]
    c = min(abs(float(np.dot(e_n, e_n1))), 1.0)
    lhs = np.sqrt(max(1.0 - c * c, 0.0)) / c if c > 0.0 else np.inf
    j_step = bc.step_jacobians[n]
    s = svd2(j_step)
    log_rhs = (
        np.log(2.0)
        + np.log(s.smax)
        - np.log(s.smin)
        - float(acc_n.log_cond())
    )
    rhs = float(np.exp(log_rhs))
    return HolonomyAngleCheck(n=n, lhs=float(lhs), rhs=rhs, ok=bool(lhs <= rhs * (1.0 + slack)))
