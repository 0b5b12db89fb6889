"""Minimal dense matrix kernel: immutable float64 matrices, deterministic
matrix products, QR-based orthonormalization, and a seeded counter-mode
random generator so that every matrix in the system is reproducible from an
explicit 64-bit seed.
"""

from __future__ import annotations

import numpy as np


class LinalgError(ValueError):
    """Base class for matrix-kernel errors."""


class ShapeError(LinalgError):
    """Incompatible or invalid matrix shapes."""


class NonFiniteError(LinalgError):
    """A matrix contains NaN or Inf entries."""


class Mat:
    """Immutable dense matrix of 64-bit floats, row-major.

    Invariants enforced on construction: 2-D and every entry finite. Empty
    dimensions are allowed (a d x 0 matrix is the carrier for an absent
    prefix or suffix, and its 0 x m coefficient block mirrors that).
    """

    __slots__ = ("_a",)

    def __init__(self, data):
        a = np.array(data, dtype=np.float64, order="C")
        if a.ndim != 2:
            raise ShapeError(f"Mat requires a 2-D array, got ndim={a.ndim}")
        if a.size and not np.isfinite(a).all():
            raise NonFiniteError("matrix contains non-finite entries")
        a.setflags(write=False)
        self._a = a

    @property
    def a(self) -> np.ndarray:
        """The backing (read-only) numpy array."""
        return self._a

    @property
    def rows(self) -> int:
        return self._a.shape[0]

    @property
    def cols(self) -> int:
        return self._a.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self._a.shape

    @staticmethod
    def zeros(rows: int, cols: int) -> "Mat":
        return Mat(np.zeros((rows, cols)))

    @staticmethod
    def identity(n: int) -> "Mat":
        return Mat(np.eye(n))

    @staticmethod
    def column(values) -> "Mat":
        """A single-column matrix from a 1-D sequence."""
        v = np.asarray(values, dtype=np.float64)
        if v.ndim != 1:
            raise ShapeError("column expects a 1-D sequence")
        return Mat(v.reshape(-1, 1))

    def __repr__(self) -> str:
        return f"Mat({self.rows}x{self.cols})"


def matmul(a: Mat, b: Mat) -> Mat:
    """Matrix product with deterministic fixed-order accumulation.

    Uses einsum without path optimization so the inner summation order is
    the plain ascending loop, independent of any BLAS dispatch.
    """
    if a.cols != b.rows:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    return Mat(np.einsum("ij,jk->ik", a.a, b.a, optimize=False))


def add(a: Mat, b: Mat) -> Mat:
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return Mat(a.a + b.a)


def sub(a: Mat, b: Mat) -> Mat:
    if a.shape != b.shape:
        raise ShapeError(f"sub shape mismatch: {a.shape} vs {b.shape}")
    return Mat(a.a - b.a)


def scale(a: Mat, c: float) -> Mat:
    return Mat(a.a * float(c))


def transpose(a: Mat) -> Mat:
    return Mat(a.a.T)


def hstack(mats: list[Mat]) -> Mat:
    """Column-wise concatenation. Zero-column members are allowed."""
    if not mats:
        raise ShapeError("hstack of an empty list")
    rows = mats[0].rows
    for m in mats:
        if m.rows != rows:
            raise ShapeError(f"hstack row mismatch: {rows} vs {m.rows}")
    return Mat(np.hstack([m.a for m in mats]))


def frob_dot(a: Mat, b: Mat) -> float:
    """Frobenius inner product sum_ij a_ij * b_ij."""
    if a.shape != b.shape:
        raise ShapeError(f"frob_dot shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sum(a.a * b.a))


def frobenius_norm(a: Mat) -> float:
    return float(np.sqrt(np.sum(a.a * a.a)))


def global_norm(items: list) -> float:
    """Square root of the sum of squared entries across matrices and scalars."""
    if not items:
        raise LinalgError("global_norm of an empty list")
    total = 0.0
    for it in items:
        if isinstance(it, Mat):
            total += float(np.sum(it.a * it.a))
        else:
            total += float(it) * float(it)
    return float(np.sqrt(total))


def token_mean(x: Mat) -> Mat:
    """Column mean of a d x L matrix: a d x 1 vector averaging the L tokens."""
    if x.cols < 1:
        raise ShapeError("token_mean needs at least one column")
    return Mat(x.a.mean(axis=1, keepdims=True))


def qr_orthonormalize(a: Mat) -> Mat:
    """Project a full-column-rank d x m seed (m <= d) to orthonormal columns.

    The sign convention fixes the triangular factor's diagonal nonnegative,
    making the map a deterministic function of the input.
    """
    if a.cols < 1:
        raise ShapeError("qr_orthonormalize needs at least one column")
    if a.cols > a.rows:
        raise ShapeError(
            f"qr_orthonormalize expects m <= d, got shape {a.shape}"
        )
    sv = np.linalg.svd(a.a, compute_uv=False)
    if sv[-1] <= 1e-10:
        raise LinalgError("basis seed is rank deficient")
    q, r = np.linalg.qr(a.a, mode="reduced")
    signs = np.sign(np.diag(r))
    signs[signs == 0.0] = 1.0
    return Mat(q * signs)


# --- seeded randomness -------------------------------------------------------
#
# Counter-mode generator built on the splitmix64 finalizer (xorshift-multiply
# family). Draw i of stream `seed` is mix(seed + (i+1)*GOLDEN) over uint64
# arithmetic, so the stream is defined by this file, not by the platform's
# RNG, and any prefix of it can be produced with vectorized integer ops.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = 0xFFFFFFFFFFFFFFFF
_INV_2_53 = 2.0 ** -53


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class SeededRng:
    """Deterministic random source; identical seeds give identical streams."""

    def __init__(self, seed: int):
        self._seed = np.uint64(int(seed) & _U64_MASK)
        self._count = 0

    def raw(self, n: int) -> np.ndarray:
        """Next n raw 64-bit words of the stream."""
        idx = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            return _mix64(self._seed + idx * _GOLDEN)

    def uniform(self, n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        return lo + (hi - lo) * u

    def normal(self, n: int) -> np.ndarray:
        """Standard normals via Box-Muller on consecutive uniform pairs."""
        m = (n + 1) // 2
        u1 = (self.raw(m) >> np.uint64(11)).astype(np.float64)
        u1 = (u1 + 1.0) * _INV_2_53  # in (0, 1], keeps log finite
        u2 = (self.raw(m) >> np.uint64(11)).astype(np.float64) * _INV_2_53
        r = np.sqrt(-2.0 * np.log(u1))
        ang = 2.0 * np.pi * u2
        out = np.empty(2 * m)
        out[0::2] = r * np.cos(ang)
        out[1::2] = r * np.sin(ang)
        return out[:n]

    def normal_mat(self, rows: int, cols: int) -> Mat:
        return Mat(self.normal(rows * cols).reshape(rows, cols))

    def uniform_mat(self, rows: int, cols: int, lo: float, hi: float) -> Mat:
        return Mat(self.uniform(rows * cols, lo, hi).reshape(rows, cols))

    def shuffled_indices(self, n: int) -> list[int]:
        """A deterministic permutation of range(n)."""
        if n <= 1:
            return list(range(n))
        keys = self.raw(n)
        return [int(i) for i in np.argsort(keys, kind="stable")]
