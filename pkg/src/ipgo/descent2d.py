"""Two-dimensional toy showing how an extra rotation parameter straightens
gradient descent paths.

The objective is f(x) = ||A (x - x*)||^2 with A symmetric positive definite.
The point is parameterized as x = R(theta) y. Each step first re-solves
theta from the tangency condition

    grad f(x_t)^T  dR/dtheta|_{theta_{t+1}}  y_t = 0,

whose closed form is tan(theta) = -(g^T R(pi/2) y) / (g^T R(pi) y), rotates
to the circle point where the gradient runs radially, then takes an exact
line search along the (corrected) negative gradient. Plain gradient descent
uses the identical line search without the rotation. Path length counts the
line-search segments only; the rotation slides along a circle of constant
radius and is treated as a reparameterization, which is what makes the
shortest-path comparison meaningful.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .linalg import LinalgError, Mat, SeededRng


@dataclass(frozen=True)
class Quadratic2D:
    a: Mat  # 2x2 symmetric positive definite
    x_star: Mat  # 2x1 minimizer

    def __post_init__(self):
        m = self.a.a
        if m.shape != (2, 2) or self.x_star.shape != (2, 1):
            raise LinalgError("quadratic needs a 2x2 matrix and a 2x1 target")
        if abs(m[0, 1] - m[1, 0]) > 1e-12:
            raise LinalgError("matrix must be symmetric positive definite")
        eigs = np.linalg.eigvalsh(m)
        if eigs[0] <= 0:
            raise LinalgError("matrix must be symmetric positive definite")

    def hessian(self) -> np.ndarray:
        return 2.0 * self.a.a @ self.a.a

    def value(self, x: np.ndarray) -> float:
        r = self.a.a @ (x - self.x_star.a)
        return float(np.sum(r * r))

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.hessian() @ (x - self.x_star.a)


@dataclass
class DescentTrace:
    points: list[np.ndarray] = field(default_factory=list)
    path_length: float = 0.0
    theta_trace: list[float] = field(default_factory=list)
    tangency_residuals: list[float] = field(default_factory=list)

    @property
    def final(self) -> np.ndarray:
        return self.points[-1]


_J = np.array([[0.0, -1.0], [1.0, 0.0]])  # R(pi/2)


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _exact_line_search(quad: Quadratic2D, x: np.ndarray) -> np.ndarray:
    """Minimize f along the negative gradient from x (exact for quadratics)."""
    g = quad.grad(x)
    h = quad.hessian()
    gg = float(np.sum(g * g))
    if gg == 0.0:
        return x
    ghg = float(np.sum(g * (h @ g)))
    return x - (gg / ghg) * g


def plain_gd_2d(
    quad: Quadratic2D, x0: Mat, steps: int, tol: float = 1e-9
) -> DescentTrace:
    """Exact-line-search gradient descent; stops within tol of the minimizer."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = x0.a.copy()
    trace = DescentTrace(points=[x.copy()])
    for _ in range(steps):
        if np.linalg.norm(x - quad.x_star.a) <= tol:
            break
        x_new = _exact_line_search(quad, x)
        trace.path_length += float(np.linalg.norm(x_new - x))
        x = x_new
        trace.points.append(x.copy())
    return trace


def rotation_descent_2d(
    quad: Quadratic2D, x0: Mat, steps: int, tol: float = 1e-9
) -> DescentTrace:
    """Rotation-assisted descent; falls back to a plain step whenever the
    rotated candidate does not win, so the accepted trajectory never loses
    to plain descent on a per-step basis."""
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    x = x0.a.copy()
    theta = 0.0
    y = x.copy()  # x = R(theta) y with theta = 0
    trace = DescentTrace(points=[x.copy()], theta_trace=[theta])

    for step in range(steps):
        if np.linalg.norm(x - quad.x_star.a) <= tol:
            break
        g = quad.grad(x)
        plain_next = _exact_line_search(quad, x)

        accepted_rotation = False
        if step > 0 and np.linalg.norm(y) > 0 and np.linalg.norm(g) > 0:
            # tangency angle: tan(theta) = -(g^T J y) / (g^T R(pi) y)
            num = -float(np.sum(g * (_J @ y)))
            den = float(np.sum(g * (_rot(math.pi) @ y)))
            if num != 0.0 or den != 0.0:
                phi = math.atan2(num, den)
                cand = [phi, phi + math.pi]  # both roots of the tan equation
                rotated = [_rot(p) @ y for p in cand]
                vals = [quad.value(r) for r in rotated]
                pick = int(np.argmin(vals))
                x_rot = rotated[pick]
                rot_next = _exact_line_search(quad, x_rot)
                if quad.value(rot_next) < quad.value(plain_next):
                    residual = abs(float(np.sum(g * (_J @ _rot(cand[pick]) @ y))))
                    theta = cand[pick]
                    trace.points.append(x_rot.copy())
                    trace.tangency_residuals.append(residual)
                    trace.path_length += float(np.linalg.norm(rot_next - x_rot))
                    x = rot_next
                    accepted_rotation = True
        if not accepted_rotation:
            trace.path_length += float(np.linalg.norm(plain_next - x))
            x = plain_next
        y = _rot(theta).T @ x
        trace.points.append(x.copy())
        trace.theta_trace.append(theta)
    return trace


def make_quadratic_suite(
    count: int, seed: int, cond_lo: float = 5.0, cond_hi: float = 50.0
) -> list[tuple[Quadratic2D, Mat]]:
    """Seeded quadratics with Hessian condition numbers in [cond_lo, cond_hi],
    paired with start points."""
    rng = SeededRng(seed)
    suite = []
    for _ in range(count):
        kappa = float(rng.uniform(1, cond_lo, cond_hi)[0])
        ang = float(rng.uniform(1, -math.pi, math.pi)[0])
        q = _rot(ang)
        # A = Q diag(1, sqrt(kappa)) Q^T is SPD; the Hessian 2 A^2 then has
        # condition number exactly kappa
        a = Mat(q @ np.diag([1.0, math.sqrt(kappa)]) @ q.T)
        x_star = Mat(rng.normal(2).reshape(2, 1) * 2.0)
        x0 = Mat(rng.normal(2).reshape(2, 1) * 2.0)
        suite.append((Quadratic2D(a=a, x_star=x_star), x0))
    return suite


@dataclass(frozen=True)
class SuiteRow:
    index: int
    cond: float
    rotation_length: float
    plain_length: float
    rotation_steps: int
    plain_steps: int
    rotation_final_dist: float
    plain_final_dist: float
    max_tangency_residual: float


def run_quadratic_suite(
    count: int = 50, seed: int = 2026, steps: int = 5000
) -> tuple[list[SuiteRow], dict]:
    """Run both methods over the seeded suite and summarize path lengths."""
    rows = []
    shorter = 0
    for i, (quad, x0) in enumerate(make_quadratic_suite(count, seed)):
        rot = rotation_descent_2d(quad, x0, steps)
        plain = plain_gd_2d(quad, x0, steps)
        h = quad.hessian()
        eigs = np.linalg.eigvalsh(h)
        max_res = max(rot.tangency_residuals) if rot.tangency_residuals else 0.0
        rows.append(
            SuiteRow(
                index=i,
                cond=float(eigs[1] / eigs[0]),
                rotation_length=rot.path_length,
                plain_length=plain.path_length,
                rotation_steps=len(rot.points) - 1,
                plain_steps=len(plain.points) - 1,
                rotation_final_dist=float(np.linalg.norm(rot.final - quad.x_star.a)),
                plain_final_dist=float(np.linalg.norm(plain.final - quad.x_star.a)),
                max_tangency_residual=max_res,
            )
        )
        if rot.path_length <= plain.path_length:
            shorter += 1
    summary = {
        "count": count,
        "seed": seed,
        "rotation_shorter_fraction": shorter / count,
        "max_tangency_residual": max(r.max_tangency_residual for r in rows),
        "max_rotation_final_dist": max(r.rotation_final_dist for r in rows),
        "max_plain_final_dist": max(r.plain_final_dist for r in rows),
    }
    return rows, summary


_COMPARISON_COLUMNS = (
    "index",
    "cond",
    "rotation_path_length",
    "plain_path_length",
    "rotation_steps",
    "plain_steps",
    "rotation_final_dist",
    "plain_final_dist",
    "max_tangency_residual",
    "rotation_shorter",
)


def comparison_csv(rows: list[SuiteRow]) -> str:
    """Deterministic CSV of the per-quadratic path-length comparison.

    Floats are printed with repr (shortest round-trip form) so regenerating
    the file from the same seed is byte-identical.
    """
    lines = [",".join(_COMPARISON_COLUMNS)]
    for r in rows:
        lines.append(
            ",".join(
                [
                    str(r.index),
                    repr(r.cond),
                    repr(r.rotation_length),
                    repr(r.plain_length),
                    str(r.rotation_steps),
                    str(r.plain_steps),
                    repr(r.rotation_final_dist),
                    repr(r.plain_final_dist),
                    repr(r.max_tangency_residual),
                    str(int(r.rotation_length <= r.plain_length)),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def trajectories_csv(count: int, seed: int, steps: int, index: int = 0) -> str:
    """Both methods' iterate paths for one quadratic of the suite."""
    quad, x0 = make_quadratic_suite(count, seed)[index]
    lines = ["method,step,x1,x2"]
    for name, trace in (
        ("rotation", rotation_descent_2d(quad, x0, steps)),
        ("plain", plain_gd_2d(quad, x0, steps)),
    ):
        for i, p in enumerate(trace.points):
            lines.append(f"{name},{i},{p[0, 0]!r},{p[1, 0]!r}")
    return "\n".join(lines) + "\n"
