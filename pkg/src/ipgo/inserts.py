"""Trainable insert-token construction.

Prefix and suffix embeddings are built as rotated linear combinations of an
orthonormal basis: V = Rot_odd(theta2) . Rot_even(theta1) . B . C^T, where B
is a d x m basis with orthonormal columns and C is an N x m coefficient
matrix with entries confined to [-1, 1]. The two rotation operators act on
coordinate pairs ((1,2),(3,4),... and (2,3),(4,5),...,(d,1) respectively,
1-based) and are applied in O(d n) without materializing any d x d matrix.
Every operation here has a hand-derived backward pass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .linalg import Mat, SeededRng, ShapeError, qr_orthonormalize

HALF_PI = math.pi / 2.0


class ConstraintError(ValueError):
    """An input violates one of the structural constraints."""


@dataclass(frozen=True)
class InsertionParams:
    """The full trainable set for one prefix/suffix pair.

    basis_* have orthonormal columns (d x m), coeffs_* are N x m with entries
    in [-1, 1], and the four angles lie in (-pi/2, pi/2]. Instances may be
    transiently infeasible between a gradient step and constraint
    enforcement; `check_feasible` verifies the invariants.
    """

    basis_pre: Mat
    basis_suff: Mat
    coeffs_pre: Mat
    coeffs_suff: Mat
    theta1_pre: float
    theta2_pre: float
    theta1_suff: float
    theta2_suff: float

    @property
    def d(self) -> int:
        return self.basis_pre.rows

    @property
    def m_pre(self) -> int:
        return self.basis_pre.cols

    @property
    def m_suff(self) -> int:
        return self.basis_suff.cols

    @property
    def n_pre(self) -> int:
        return self.coeffs_pre.rows

    @property
    def n_suff(self) -> int:
        return self.coeffs_suff.rows


@dataclass(frozen=True)
class ParamGrads:
    """Gradient carrier mirroring InsertionParams shapes."""

    basis_pre: Mat
    basis_suff: Mat
    coeffs_pre: Mat
    coeffs_suff: Mat
    theta1_pre: float
    theta2_pre: float
    theta1_suff: float
    theta2_suff: float


MAT_FIELDS = ("basis_pre", "basis_suff", "coeffs_pre", "coeffs_suff")
ANGLE_FIELDS = ("theta1_pre", "theta2_pre", "theta1_suff", "theta2_suff")


def elementary_rotation(theta: float) -> Mat:
    """The 2x2 rotation [[cos, -sin], [sin, cos]]."""
    c, s = math.cos(theta), math.sin(theta)
    return Mat([[c, -s], [s, c]])


def _require_even(d: int):
    if d % 2 != 0:
        raise ShapeError("rotation requires even embedding dimension")


def _rotate_pairs(theta: float, arr: np.ndarray) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    ev, od = arr[0::2], arr[1::2]
    out = np.empty_like(arr)
    out[0::2] = c * ev - s * od
    out[1::2] = s * ev + c * od
    return out


def rotate_even_pairs(theta: float, x: Mat) -> Mat:
    """Rotate coordinate pairs (1,2),(3,4),... of every column by theta."""
    _require_even(x.rows)
    return Mat(_rotate_pairs(theta, x.a))


def rotate_odd_pairs(theta: float, x: Mat) -> Mat:
    """Rotate pairs (2,3),(4,5),...,(d,1) of every column by theta.

    In the wraparound pair, coordinate d takes the first slot of the 2x2
    rotation and coordinate 1 the second.
    """
    _require_even(x.rows)
    rolled = np.roll(x.a, -1, axis=0)
    return Mat(np.roll(_rotate_pairs(theta, rolled), 1, axis=0))


def _check_angle(theta: float, name: str):
    if not (-HALF_PI < theta <= HALF_PI):
        raise ConstraintError(f"{name}={theta!r} outside (-pi/2, pi/2]")


def build_insert(
    basis: Mat, coeffs: Mat, theta1: float, theta2: float, validate: bool = True
) -> Mat:
    """Build the d x N insert-token matrix from feasible parameters.

    The map itself is smooth everywhere; `validate=False` skips the
    feasibility checks so finite-difference harnesses can probe points just
    off the constraint set.
    """
    if basis.cols != coeffs.cols:
        raise ShapeError(
            f"basis/coefficient width mismatch: {basis.shape} vs {coeffs.shape}"
        )
    _require_even(basis.rows)
    if validate:
        gram = basis.a.T @ basis.a
        if np.abs(gram - np.eye(basis.cols)).max() > 1e-8:
            raise ConstraintError("basis columns are not orthonormal")
        if coeffs.cols and coeffs.rows and np.abs(coeffs.a).max() > 1.0:
            raise ConstraintError("coefficient entries exceed the [-1, 1] range")
        _check_angle(theta1, "theta1")
        _check_angle(theta2, "theta2")
    combo = Mat(basis.a @ coeffs.a.T)
    return rotate_odd_pairs(theta2, rotate_even_pairs(theta1, combo))


def backward_insert(
    basis: Mat, coeffs: Mat, theta1: float, theta2: float, d_out: Mat
) -> tuple[Mat, Mat, float, float]:
    """Exact gradients of a scalar through build_insert.

    Given d_out = dL/dV, returns (dBasis, dCoeffs, dTheta1, dTheta2). Angle
    gradients use d/dtheta of the 2x2 rotation being the same rotation
    advanced by pi/2, applied blockwise.
    """
    if d_out.rows != basis.rows or d_out.cols != coeffs.rows:
        raise ShapeError(
            f"upstream gradient shape {d_out.shape} does not match insert "
            f"shape ({basis.rows}, {coeffs.rows})"
        )
    combo = basis.a @ coeffs.a.T  # d x N
    after1 = _rotate_pairs(theta1, combo)

    # undo the outer rotation on the upstream gradient: Rot_odd(-theta2) dV
    d_after1 = np.roll(_rotate_pairs(-theta2, np.roll(d_out.a, -1, axis=0)), 1, axis=0)

    d_theta2 = float(
        np.sum(
            d_out.a
            * np.roll(_rotate_pairs(theta2 + HALF_PI, np.roll(after1, -1, axis=0)), 1, axis=0)
        )
    )
    d_theta1 = float(np.sum(d_after1 * _rotate_pairs(theta1 + HALF_PI, combo)))

    upstream = _rotate_pairs(-theta1, d_after1)  # Rot_even^T Rot_odd^T dV
    d_basis = upstream @ coeffs.a
    d_coeffs = upstream.T @ basis.a
    return Mat(d_basis), Mat(d_coeffs), d_theta1, d_theta2


def init_params(
    d: int, m_pre: int, m_suff: int, n_pre: int, n_suff: int, seed: int
) -> InsertionParams:
    """Seeded feasible initialization.

    Bases are orthonormalized Gaussian seeds, coefficients start small
    (uniform in [-0.1, 0.1]) so the initial inserts barely perturb the
    prompt, and angles start at zero (identity rotations).
    """
    if d < 2 or d % 2 != 0:
        raise ShapeError(f"embedding dimension must be even and >= 2, got {d}")
    for name, m in (("m_pre", m_pre), ("m_suff", m_suff)):
        if not 1 <= m <= d:
            raise ShapeError(f"{name}={m} must satisfy 1 <= m <= d={d}")
    if n_pre < 0 or n_suff < 0 or n_pre + n_suff < 1:
        raise ShapeError(
            f"insert lengths ({n_pre}, {n_suff}) must be nonnegative and not both zero"
        )
    rng = SeededRng(seed)
    basis_pre = qr_orthonormalize(rng.normal_mat(d, m_pre))
    basis_suff = qr_orthonormalize(rng.normal_mat(d, m_suff))
    coeffs_pre = rng.uniform_mat(n_pre, m_pre, -0.1, 0.1)
    coeffs_suff = rng.uniform_mat(n_suff, m_suff, -0.1, 0.1)
    return InsertionParams(
        basis_pre=basis_pre,
        basis_suff=basis_suff,
        coeffs_pre=coeffs_pre,
        coeffs_suff=coeffs_suff,
        theta1_pre=0.0,
        theta2_pre=0.0,
        theta1_suff=0.0,
        theta2_suff=0.0,
    )


def param_count(params: InsertionParams) -> int:
    """Number of trainable scalars in the set."""
    return (
        params.basis_pre.rows * params.basis_pre.cols
        + params.basis_suff.rows * params.basis_suff.cols
        + params.coeffs_pre.rows * params.coeffs_pre.cols
        + params.coeffs_suff.rows * params.coeffs_suff.cols
        + 4
    )


def check_feasible(params: InsertionParams, tol: float = 1e-10):
    """Raise ConstraintError unless every structural invariant holds."""
    if params.d % 2 != 0:
        raise ConstraintError("embedding dimension must be even")
    for name in ("basis_pre", "basis_suff"):
        b: Mat = getattr(params, name)
        if b.cols > b.rows:
            raise ConstraintError(f"{name} has more columns than rows")
        gram = b.a.T @ b.a
        if np.abs(gram - np.eye(b.cols)).max() > tol:
            raise ConstraintError(f"{name} columns are not orthonormal to {tol}")
    for name in ("coeffs_pre", "coeffs_suff"):
        c: Mat = getattr(params, name)
        if c.rows and c.cols and np.abs(c.a).max() > 1.0:
            raise ConstraintError(f"{name} entries exceed the [-1, 1] range")
    for name in ANGLE_FIELDS:
        t = getattr(params, name)
        if not (-HALF_PI < t <= HALF_PI):
            raise ConstraintError(f"{name}={t!r} outside (-pi/2, pi/2]")
