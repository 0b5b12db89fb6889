import numpy as np
import pytest

from ipgo.descent2d import (
    Quadratic2D,
    make_quadratic_suite,
    plain_gd_2d,
    rotation_descent_2d,
    run_quadratic_suite,
)
from ipgo.linalg import LinalgError, Mat


def _quad(a00=2.0, a01=0.3, a11=1.0, x_star=(1.0, -2.0)):
    return Quadratic2D(
        a=Mat([[a00, a01], [a01, a11]]), x_star=Mat([[x_star[0]], [x_star[1]]])
    )


class TestQuadratic2D:
    def test_non_spd_rejected(self):
        with pytest.raises(LinalgError):
            Quadratic2D(a=Mat([[1.0, 0.0], [0.5, 1.0]]), x_star=Mat.zeros(2, 1))
        with pytest.raises(LinalgError):
            Quadratic2D(a=Mat([[-1.0, 0.0], [0.0, 1.0]]), x_star=Mat.zeros(2, 1))

    def test_gradient_zero_at_minimizer(self):
        q = _quad()
        assert np.abs(q.grad(q.x_star.a)).max() == 0.0


class TestPlainGd:
    def test_starts_at_minimizer(self):
        q = _quad()
        trace = plain_gd_2d(q, q.x_star, steps=10)
        assert trace.path_length == 0.0
        assert len(trace.points) == 1

    def test_converges(self):
        q = _quad()
        trace = plain_gd_2d(q, Mat([[4.0], [3.0]]), steps=5000)
        assert np.linalg.norm(trace.final - q.x_star.a) <= 1e-6

    def test_monotone_objective(self):
        q = _quad()
        trace = plain_gd_2d(q, Mat([[4.0], [3.0]]), steps=100)
        vals = [q.value(p) for p in trace.points]
        assert all(b <= a + 1e-18 for a, b in zip(vals, vals[1:]))


class TestRotationDescent:
    def test_starts_at_minimizer(self):
        q = _quad()
        trace = rotation_descent_2d(q, q.x_star, steps=10)
        assert trace.path_length == 0.0

    def test_tangency_residuals_tiny(self):
        q = _quad(a00=3.0, a01=0.0, a11=1.0)
        trace = rotation_descent_2d(q, Mat([[4.0], [3.0]]), steps=5000)
        assert trace.tangency_residuals, "expected at least one accepted rotation"
        assert max(trace.tangency_residuals) < 1e-10

    def test_converges(self):
        q = _quad(a00=3.0, a01=0.4, a11=1.0)
        trace = rotation_descent_2d(q, Mat([[4.0], [3.0]]), steps=5000)
        assert np.linalg.norm(trace.final - q.x_star.a) <= 1e-6

    def test_beats_plain_before_the_convergence_floor(self):
        q = _quad(a00=3.0, a01=0.4, a11=1.0)
        x0 = Mat([[4.0], [3.0]])
        for k in (2, 4, 6):
            rot = rotation_descent_2d(q, x0, steps=k)
            plain = plain_gd_2d(q, x0, steps=k)
            assert q.value(rot.final) <= q.value(plain.final)


class TestSuite:
    def test_suite_is_seeded_and_in_condition_range(self):
        suite = make_quadratic_suite(10, seed=3)
        again = make_quadratic_suite(10, seed=3)
        for (q1, x1), (q2, x2) in zip(suite, again):
            assert q1.a.a.tobytes() == q2.a.a.tobytes()
            assert x1.a.tobytes() == x2.a.tobytes()
        for q, _ in suite:
            eigs = np.linalg.eigvalsh(q.hessian())
            assert 5.0 - 1e-9 <= eigs[1] / eigs[0] <= 50.0 + 1e-9

    def test_reference_suite_properties(self):
        rows, summary = run_quadratic_suite(count=50, seed=2026, steps=5000)
        assert summary["max_tangency_residual"] < 1e-10
        assert summary["max_rotation_final_dist"] <= 1e-6
        assert summary["max_plain_final_dist"] <= 1e-6
        # the rotation path wins on a clear majority of the suite
        assert summary["rotation_shorter_fraction"] >= 0.5
