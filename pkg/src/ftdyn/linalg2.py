"""Closed-form 2x2 singular value machinery and the norm-defect identity.

Everything here is vectorized over a leading batch axis: a "matrix" argument
is an ndarray of shape (..., 2, 2).  The 2x2 SVD is computed with the
two-rotation-angle formulation (no general-purpose decomposition in the hot
loop): writing M = Rot(phi) @ diag(sx, sy) @ Rot(theta).T with sy carrying
the sign of det(M), the four combinations

    E = (a + d)/2,  F = (a - d)/2,  G = (c + b)/2,  H = (c - b)/2

satisfy  hypot(E, H) = (sx + sy)/2,  hypot(F, G) = (sx - sy)/2,
atan2(H, E) = phi - theta  and  atan2(G, F) = phi + theta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSplitError, SingularMatrixError

__all__ = [
    "svd2",
    "op_norm2",
    "sigma_min2",
    "HyperbolicSplit",
    "hyperbolic_split",
    "norm_product_defect",
    "NormDefect",
    "frobenius_defect_pair",
    "canonical_sign",
    "perp",
]


@dataclass(frozen=True)
class Svd2:
    """Batched closed-form SVD of 2x2 matrices.

    ``smax`` and ``sy`` are the singular values with ``sy`` signed by the
    determinant (sigma_min = abs(sy)).  ``theta`` is the angle of the right
    singular frame, ``phi`` of the left: the most expanded input direction is
    (cos theta, sin theta) and its normalized image is (cos phi, sin phi).
    """

    smax: np.ndarray
    sy: np.ndarray
    theta: np.ndarray
    phi: np.ndarray

    @property
    def smin(self):
        return np.abs(self.sy)

    @property
    def det(self):
        return self.smax * self.sy

    def expanded_dir(self):
        """Right singular vector of sigma_max, shape (..., 2)."""
        return np.stack([np.cos(self.theta), np.sin(self.theta)], axis=-1)

    def contracted_dir(self):
        """Right singular vector of sigma_min, shape (..., 2)."""
        return np.stack([-np.sin(self.theta), np.cos(self.theta)], axis=-1)

    def expanded_image_dir(self):
        """Normalized image of the expanded direction (left vector of sigma_max)."""
        return np.stack([np.cos(self.phi), np.sin(self.phi)], axis=-1)

    def contracted_image_dir(self):
        """Normalized image of the contracted direction.

        Chosen so that M @ contracted_dir = sy * contracted_image_dir,
        i.e. orientation is carried by the sign of the determinant.
        """
        s = np.sign(self.sy)
        s = np.where(s == 0.0, 1.0, s)
        return np.stack([-np.sin(self.phi), np.cos(self.phi)], axis=-1) * s[..., None]


def svd2(m) -> Svd2:
    """Closed-form SVD of 2x2 matrices, batched over leading axes."""
    m = np.asarray(m, dtype=float)
    a = m[..., 0, 0]
    b = m[..., 0, 1]
    c = m[..., 1, 0]
    d = m[..., 1, 1]
    e = 0.5 * (a + d)
    f = 0.5 * (a - d)
    g = 0.5 * (c + b)
    h = 0.5 * (c - b)
    q = np.hypot(e, h)
    r = np.hypot(f, g)
    smax = q + r
    sy = q - r
    a1 = np.arctan2(g, f)
    a2 = np.arctan2(h, e)
    theta = 0.5 * (a1 - a2)
    phi = 0.5 * (a1 + a2)
    return Svd2(smax=smax, sy=sy, theta=theta, phi=phi)


def op_norm2(m):
    """Spectral norm of 2x2 matrices (batched)."""
    return svd2(m).smax


def sigma_min2(m):
    """Smallest singular value of 2x2 matrices (batched)."""
    return svd2(m).smin


def perp(v):
    """Rotate vectors by +90 degrees, shape-preserving."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def canonical_sign(v):
    """Flip sign so the first nonzero coordinate is positive."""
    v = np.asarray(v, dtype=float)
    lead = np.where(v[..., 0] != 0.0, v[..., 0], v[..., 1])
    s = np.where(lead < 0.0, -1.0, 1.0)
    return v * s[..., None]


@dataclass(frozen=True)
class HyperbolicSplit:
    """Singular data of an invertible 2x2 matrix A.

    ``e`` is the most contracted unit direction (norm of the image equals
    1/||A^-1||), ``f`` the most expanded one (image norm equals ||A||); both
    are sign-canonicalized and mutually orthogonal.
    """

    sigma_max: float
    sigma_min: float
    e: np.ndarray
    f: np.ndarray

    def as_dict(self):
        return {
            "sigma_max": self.sigma_max,
            "sigma_min": self.sigma_min,
            "e": list(map(float, self.e)),
            "f": list(map(float, self.f)),
        }


def hyperbolic_split(a, tau=1e-6) -> HyperbolicSplit:
    """Most contracted/expanded directions of a single 2x2 matrix.

    Raises SingularMatrixError on noninvertible input and
    DegenerateSplitError when sigma_max/sigma_min < 1 + tau: so close to
    conformal that the directions carry no information.
    """
    a = np.asarray(a, dtype=float)
    if a.shape != (2, 2):
        raise ValueError(f"expected a single 2x2 matrix, got shape {a.shape}")
    s = svd2(a)
    smax = float(s.smax)
    smin = float(s.smin)
    if smin == 0.0:
        raise SingularMatrixError("matrix is singular")
    ratio = smax / smin
    if ratio < 1.0 + tau:
        raise DegenerateSplitError(
            f"near-conformal matrix: sigma_max/sigma_min = {ratio:.3e} < 1 + {tau:.1e}",
            ratio=ratio,
        )
    return HyperbolicSplit(
        sigma_max=smax,
        sigma_min=smin,
        e=canonical_sign(s.contracted_dir()),
        f=canonical_sign(s.expanded_dir()),
    )


@dataclass(frozen=True)
class NormDefect:
    """The two multiplicativity-defect ratios of a matrix pair."""

    lhs: float  # ||AB|| / (||A|| ||B||)
    rhs: float  # ||B^-1 A^-1|| / (||A^-1|| ||B^-1||)


def _norm(m, kind):
    if kind == "operator":
        if m.shape == (2, 2):
            return float(op_norm2(m))
        return float(np.linalg.norm(m, 2))
    if kind == "frobenius":
        return float(np.linalg.norm(m, "fro"))
    raise ValueError(f"unknown norm kind {kind!r}")


def norm_product_defect(a, b, norm="operator") -> NormDefect:
    """Compare the norm multiplicativity defect of (A, B) with that of the
    inverse pair (B^-1, A^-1).

    For 2x2 matrices with the operator norm the two ratios coincide exactly
    (|det C| = ||C||/||C^-1|| in dimension two); in dimension three they can
    differ by orders of magnitude.  Both sides are computed through norms of
    explicitly formed products, never through small singular values.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.shape not in {(2, 2), (3, 3)}:
        raise ValueError("A and B must both be 2x2 or both 3x3")
    if abs(np.linalg.det(a)) == 0.0 or abs(np.linalg.det(b)) == 0.0:
        raise SingularMatrixError("inputs must be invertible")
    ai = np.linalg.inv(a)
    bi = np.linalg.inv(b)
    lhs = _norm(a @ b, norm) / (_norm(a, norm) * _norm(b, norm))
    rhs = _norm(bi @ ai, norm) / (_norm(ai, norm) * _norm(bi, norm))
    return NormDefect(lhs=lhs, rhs=rhs)


def frobenius_defect_pair(x):
    """The 3x3 pair whose Frobenius defect ratios diverge as x grows.

    Returns (A, B) with ||A B||_F ~ sqrt(6) x while ||B^-1 A^-1||_F stays
    bounded, so the two NormDefect ratios separate by an unbounded factor:
    the dimension-two identity has no higher-dimensional analogue.
    """
    x = float(x)
    if x == 0.0:
        raise ValueError("x must be nonzero")
    a = np.array([[1.0, 0.0, 0.0], [0.0, x, -1.0], [0.0, x, 1.0]])
    b = np.array([[x, x, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 1.0]])
    return a, b
