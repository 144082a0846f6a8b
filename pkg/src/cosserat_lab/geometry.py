"""Linear algebra on SO(3), its Lie algebra and the quaternion double cover.

Every function broadcasts over leading axes: a "rotation" argument may be a
single ``(3, 3)`` matrix or a stack ``(..., 3, 3)``, which is how rotation
fields on a grid are stored.

Conventions
-----------
* Inner products of matrices are Frobenius: ``<A, B> = tr(A^T B)``.
* The skew basis ``a_i`` is orthonormal in that inner product, so
  ``sum_i c_i a_i = hat(c / sqrt(2))`` where ``hat`` is the usual cross
  product matrix.
* Tangent vectors at ``R`` are written ``sum_i c_i a_i R`` and stored by
  their three coefficients.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInputError, InvariantViolation

SQRT2 = np.sqrt(2.0)
ALGEBRA_TOL = 1e-12
DRIFT_TOL = 1e-10

_BASIS = np.array(
    [
        [[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        [[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        [[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    ]
) / SQRT2
_BASIS.flags.writeable = False


@dataclass(frozen=True)
class ModuliSet:
    """Material moduli entering the linear map ``P``."""

    mu1: float = 1.0
    muc: float = 1.0
    mu2: float = 1.0

    def __post_init__(self):
        for name in ("mu1", "muc", "mu2"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise InvariantViolation(f"modulus {name} must be positive, got {v!r}")

    @property
    def is_unit(self):
        return self.mu1 == 1.0 and self.muc == 1.0 and self.mu2 == 1.0

    @property
    def injective(self):
        # P acts on the trace part as (sqrt(mu2) - 2/3 sqrt(mu1)) tr(A) I
        return not np.isclose(9.0 * self.mu2, 4.0 * self.mu1, rtol=1e-12, atol=0.0)


def lie_basis():
    """Return the orthonormal skew basis ``a_1, a_2, a_3`` as a ``(3, 3, 3)`` array."""
    return _BASIS


def hat(w):
    """Cross-product matrix of ``w`` (shape ``(..., 3)``)."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


def skew_from_coeffs(c):
    """``sum_i c_i a_i`` for coefficient arrays of shape ``(..., 3)``."""
    return hat(np.asarray(c, dtype=float) / SQRT2)


def orthogonality_defect(R):
    """Frobenius norm of ``R^T R - I`` per rotation."""
    R = np.asarray(R, dtype=float)
    d = np.swapaxes(R, -1, -2) @ R - np.eye(3)
    return np.sqrt(np.sum(d * d, axis=(-2, -1)))


def is_rotation(R, tol=ALGEBRA_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        return False
    ok = np.all(orthogonality_defect(R) <= tol)
    return bool(ok and np.all(np.abs(np.linalg.det(R) - 1.0) <= tol))


def check_rotation(R, tol=DRIFT_TOL, what="rotation"):
    """Raise :class:`InvariantViolation` unless every matrix in ``R`` is in SO(3)."""
    R = np.asarray(R, dtype=float)
    if R.shape[-2:] != (3, 3):
        raise InvariantViolation(f"{what} must have trailing shape (3, 3), got {R.shape}")
    if not np.all(np.isfinite(R)):
        raise InvariantViolation(f"{what} contains non-finite entries")
    defect = orthogonality_defect(R)
    worst = float(np.max(defect)) if defect.size else 0.0
    if worst > tol:
        raise InvariantViolation(f"{what} is not orthogonal (|R^T R - I| = {worst:.3e})")
    det_err = float(np.max(np.abs(np.linalg.det(R) - 1.0))) if R.size else 0.0
    if det_err > tol:
        raise InvariantViolation(f"{what} has det != 1 (error {det_err:.3e})")
    return R


def tangent_frame(R):
    """Orthonormal frame ``V_i(R) = a_i R`` of the tangent space at ``R``.

    Returns an array of shape ``(..., 3, 3, 3)`` whose axis ``-3`` indexes
    ``i``.
    """
    R = check_rotation(R)
    return np.einsum("iab,...bc->...iac", _BASIS, R)


def realize_tangent(R, c):
    """Matrix ``sum_i c_i a_i R`` for coefficients ``c`` of shape ``(..., 3)``."""
    return skew_from_coeffs(c) @ np.asarray(R, dtype=float)


def project_tangent(R, G):
    """Frame coefficients ``c_i = <G, a_i R>``.

    ``G - sum c_i a_i R`` is orthogonal to the tangent space because the
    frame is orthonormal.
    """
    R = np.asarray(R, dtype=float)
    G = np.asarray(G, dtype=float)
    # <G, a_i R> = tr(G^T a_i R) = <G R^T, a_i>
    GRt = G @ np.swapaxes(R, -1, -2)
    return np.einsum("...ab,iab->...i", GRt, _BASIS)


def covering_map(q, tol=ALGEBRA_TOL):
    """Rotation matrix of a unit quaternion ``(w, x, y, z)``.

    The map is 2-to-1: ``q`` and ``-q`` give the same matrix bit for bit,
    since every entry is a quadratic form in the components.
    """
    q = np.asarray(q, dtype=float)
    if q.shape[-1] != 4:
        raise InvariantViolation(f"quaternion must have trailing length 4, got {q.shape}")
    nrm = np.sum(q * q, axis=-1)
    if np.any(np.abs(nrm - 1.0) > tol):
        raise InvariantViolation("quaternion is not of unit length")
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = 1 - 2 * y * y - 2 * z * z
    out[..., 0, 1] = 2 * x * y - 2 * z * w
    out[..., 0, 2] = 2 * x * z + 2 * y * w
    out[..., 1, 0] = 2 * x * y + 2 * z * w
    out[..., 1, 1] = 1 - 2 * x * x - 2 * z * z
    out[..., 1, 2] = 2 * y * z - 2 * x * w
    out[..., 2, 0] = 2 * x * z - 2 * y * w
    out[..., 2, 1] = 2 * y * z + 2 * x * w
    out[..., 2, 2] = 1 - 2 * x * x - 2 * y * y
    return out


def random_unit_quaternions(rng, size=()):
    """Uniformly distributed unit quaternions (normalized Gaussians)."""
    shape = (size,) if np.isscalar(size) else tuple(size)
    q = rng.standard_normal(shape + (4,))
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def random_rotations(rng, size=()):
    return covering_map(random_unit_quaternions(rng, size))


def rodrigues(w):
    """``exp(hat(w))`` for axis-angle vectors ``w`` of shape ``(..., 3)``."""
    w = np.asarray(w, dtype=float)
    theta2 = np.sum(w * w, axis=-1)
    theta = np.sqrt(theta2)
    small = theta2 < 1e-12
    safe = np.where(small, 1.0, theta)
    # Taylor branches keep full precision near zero
    s = np.where(small, 1.0 - theta2 / 6.0 + theta2**2 / 120.0, np.sin(safe) / safe)
    c = np.where(small, 0.5 - theta2 / 24.0 + theta2**2 / 720.0, (1.0 - np.cos(safe)) / (safe * safe))
    K = hat(w)
    return np.eye(3) + s[..., None, None] * K + c[..., None, None] * (K @ K)


def exp_retract(R, c, step=1.0):
    """Move ``R`` along the tangent direction ``sum c_i a_i R``.

    Realized as ``exp(step * sum_i c_i a_i) R``, which stays on SO(3)
    exactly in exact arithmetic and agrees with ``R + step * sum c_i a_i R``
    to first order.
    """
    R = np.asarray(R, dtype=float)
    c = np.asarray(c, dtype=float)
    return rodrigues(step * c / SQRT2) @ R


def project_so3(A):
    """Nearest rotation in the Frobenius norm (the orthogonal polar factor).

    Raises
    ------
    DegenerateInputError
        If the polar factor has non-positive determinant, i.e. ``A`` is
        closer to a reflection than to any rotation.
    """
    A = np.asarray(A, dtype=float)
    U, s, Vt = np.linalg.svd(A)
    Q = U @ Vt
    det = np.linalg.det(Q)
    if np.any(det <= 0) or np.any(s[..., -1] <= 0):
        raise DegenerateInputError("polar factor is not a proper rotation")
    return Q


def devsym(A):
    """Symmetric part minus ``tr(A) I``, with the full (not 1/3) trace factor."""
    A = np.asarray(A, dtype=float)
    tr = np.trace(A, axis1=-2, axis2=-1)
    return 0.5 * (A + np.swapaxes(A, -1, -2)) - tr[..., None, None] * np.eye(3)


def skew(A):
    A = np.asarray(A, dtype=float)
    return 0.5 * (A - np.swapaxes(A, -1, -2))


def pmap(A, mu):
    """The material map ``sqrt(mu1) devsym A + sqrt(muc) skew A + sqrt(mu2) tr(A) I``.

    ``pmap`` is self-adjoint in the Frobenius inner product, and with unit
    moduli it is the identity.
    """
    A = np.asarray(A, dtype=float)
    tr = np.trace(A, axis1=-2, axis2=-1)
    return (
        np.sqrt(mu.mu1) * devsym(A)
        + np.sqrt(mu.muc) * skew(A)
        + np.sqrt(mu.mu2) * tr[..., None, None] * np.eye(3)
    )


def curvature_form(v, w):
    """``|v|^2 |w|^2 - <v, w>^2`` for tangent matrices ``v`` and ``w``."""
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    vv = np.sum(v * v, axis=(-2, -1))
    ww = np.sum(w * w, axis=(-2, -1))
    vw = np.sum(v * w, axis=(-2, -1))
    return vv * ww - vw * vw


def rotation_about(axis, angle):
    """Rotation by ``angle`` about a fixed unit ``axis``; ``angle`` may be an array."""
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    angle = np.asarray(angle, dtype=float)
    return rodrigues(angle[..., None] * axis)
