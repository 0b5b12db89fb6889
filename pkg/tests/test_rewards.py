import numpy as np
import pytest

from ipgo.augment import AugmentedEmbedding, PromptEmbedding, concat
from ipgo.linalg import Mat, SeededRng
from ipgo.rewards import (
    OracleError,
    OracleResult,
    RewardOracle,
    cosine_oracle,
    finite_diff_grad,
    net_oracle,
    quadratic_oracle,
)

from .oracles import max_rel_err


def _setup(d=4, k=2, n=1, seed=0):
    rng = SeededRng(seed)
    prompt = PromptEmbedding(emb=rng.normal_mat(d, k), prompt_id="t")
    aug = concat(rng.normal_mat(d, n), prompt, rng.normal_mat(d, n))
    return aug, prompt


class _ConstOracle(RewardOracle):
    def evaluate(self, aug, prompt):
        return OracleResult(reward=3.25, grad=Mat(np.zeros(aug.emb.shape)))

    def describe(self):
        return "const"


class TestQuadraticOracle:
    def test_maximum_at_target(self):
        aug, prompt = _setup(seed=1)
        target = Mat(aug.emb.a.mean(axis=1, keepdims=True))
        res = quadratic_oracle(target).evaluate(aug, prompt)
        assert res.reward == pytest.approx(0.0, abs=1e-28)
        assert np.abs(res.grad.a).max() < 1e-14

    def test_hand_case(self):
        prompt = PromptEmbedding(emb=Mat([[0.0], [0.0]]))
        aug = AugmentedEmbedding(emb=Mat([[0.0], [0.0]]), n_pre=0, k=1, n_suff=0)
        res = quadratic_oracle(Mat([[3.0], [4.0]])).evaluate(aug, prompt)
        assert res.reward == pytest.approx(-25.0)
        assert np.allclose(res.grad.a, [[6.0], [8.0]])

    def test_gradient_matches_finite_differences(self):
        aug, prompt = _setup(seed=2)
        oracle = quadratic_oracle(SeededRng(3).normal_mat(4, 1))
        fd = finite_diff_grad(oracle, aug, prompt, h=1e-5)
        analytic = oracle.evaluate(aug, prompt).grad
        assert np.abs(fd.a - analytic.a).max() < 1e-8

    def test_reward_nonpositive(self):
        for seed in range(10):
            aug, prompt = _setup(seed=seed)
            oracle = quadratic_oracle(SeededRng(seed + 100).normal_mat(4, 1))
            assert oracle.evaluate(aug, prompt).reward <= 0.0

    def test_dim_mismatch_rejected(self):
        aug, prompt = _setup()
        with pytest.raises(OracleError):
            quadratic_oracle(SeededRng(1).normal_mat(6, 1)).evaluate(aug, prompt)


class TestCosineOracle:
    def test_parallel_mean_scores_one(self):
        aug, prompt = _setup(seed=4)
        mu = aug.emb.a.mean(axis=1, keepdims=True)
        res = cosine_oracle(Mat(2.5 * mu)).evaluate(aug, prompt)
        assert res.reward == pytest.approx(1.0, abs=1e-12)
        # at the maximum, the gradient has no component left along any direction
        # that changes the angle: it vanishes entirely
        assert np.abs(res.grad.a).max() < 1e-12

    def test_orthogonal_mean_scores_zero(self):
        prompt = PromptEmbedding(emb=Mat([[1.0], [0.0]]))
        aug = AugmentedEmbedding(emb=Mat([[1.0], [0.0]]), n_pre=0, k=1, n_suff=0)
        res = cosine_oracle(Mat([[0.0], [2.0]])).evaluate(aug, prompt)
        assert res.reward == pytest.approx(0.0, abs=1e-15)

    def test_zero_mean_rejected(self):
        prompt = PromptEmbedding(emb=Mat([[1.0], [0.0]]))
        aug = AugmentedEmbedding(
            emb=Mat([[1.0, -1.0], [0.5, -0.5]]), n_pre=1, k=1, n_suff=0
        )
        with pytest.raises(OracleError, match="zero mean"):
            cosine_oracle(Mat([[1.0], [1.0]])).evaluate(aug, prompt)

    def test_gradient_matches_finite_differences(self):
        aug, prompt = _setup(d=6, seed=5)
        oracle = cosine_oracle(SeededRng(6).normal_mat(6, 1))
        fd = finite_diff_grad(oracle, aug, prompt, h=1e-5)
        analytic = oracle.evaluate(aug, prompt).grad
        assert max_rel_err(analytic.a, fd.a) < 1e-6


class TestNetOracle:
    def test_gradient_matches_finite_differences(self):
        aug, prompt = _setup(d=6, seed=7)
        oracle = net_oracle(seed=9, hidden_width=5, d=6)
        fd = finite_diff_grad(oracle, aug, prompt, h=1e-5)
        analytic = oracle.evaluate(aug, prompt).grad
        assert max_rel_err(analytic.a, fd.a) < 1e-6

    def test_bit_deterministic_across_instances(self):
        aug, prompt = _setup(d=4, seed=8)
        a = net_oracle(seed=3, hidden_width=7, d=4).evaluate(aug, prompt)
        b = net_oracle(seed=3, hidden_width=7, d=4).evaluate(aug, prompt)
        assert a.reward == b.reward
        assert a.grad.a.tobytes() == b.grad.a.tobytes()


class TestFiniteDiffGrad:
    def test_constant_oracle_gives_zero(self):
        aug, prompt = _setup(seed=10)
        fd = finite_diff_grad(_ConstOracle(), aug, prompt, h=1e-5)
        assert np.array_equal(fd.a, np.zeros(aug.emb.shape))

    def test_step_robustness_on_smooth_oracle(self):
        aug, prompt = _setup(d=4, seed=11)
        oracle = net_oracle(seed=12, hidden_width=4, d=4)
        g5 = finite_diff_grad(oracle, aug, prompt, h=1e-5).a
        g6 = finite_diff_grad(oracle, aug, prompt, h=1e-6).a
        assert np.abs(g5 - g6).max() < 1e-5

    def test_step_bounds_enforced(self):
        aug, prompt = _setup(seed=13)
        with pytest.raises(ValueError):
            finite_diff_grad(_ConstOracle(), aug, prompt, h=1e-2)

    def test_all_shipped_oracles_agree_over_seeds(self):
        for seed in range(10):
            aug, prompt = _setup(d=4, seed=seed + 200)
            oracles = [
                quadratic_oracle(SeededRng(seed).normal_mat(4, 1)),
                cosine_oracle(SeededRng(seed + 1).normal_mat(4, 1)),
                net_oracle(seed=seed, hidden_width=5, d=4),
            ]
            for oracle in oracles:
                fd = finite_diff_grad(oracle, aug, prompt, h=1e-5)
                analytic = oracle.evaluate(aug, prompt).grad
                assert max_rel_err(analytic.a, fd.a, floor=1e-6) < 1e-6
