import numpy as np
import pytest

from otmatch.containers import CouplingMatrix, HyperParams
from otmatch.iot import iot_fit, iot_gradient, iot_objective
from otmatch.kernels import KernelSpec
from otmatch.sinkhorn import sinkhorn
from otmatch.bounds import kl_divergence

from conftest import forward_instance, noised, poly_kernel


def hyper(**kwargs):
    base = dict(lam=1.0, step_size=10.0, outer_iters=40, inner_iters=20)
    base.update(kwargs)
    return HyperParams(**base)


class TestIotObjective:
    def test_one_by_one_zero(self):
        inst = forward_instance(0, m=1, n=1, p=1, q=1)
        val = iot_objective(np.zeros((1, 1)), inst["pi0"], inst["U"], inst["V"],
                            inst["kern"], hyper())
        assert val == pytest.approx(0.0, abs=1e-12)

    def test_hand_value_against_model_plan(self):
        # pihat uniform against a plan with entries .4/.1/.1/.4
        pi_hat = np.full((2, 2), 0.25)
        plan = np.array([[0.4, 0.1], [0.1, 0.4]])
        expected = -(pi_hat * np.log(plan)).sum()
        assert expected == pytest.approx(1.60944, abs=1e-5)

    def test_self_consistency_equals_plan_cross_entropy(self):
        inst = forward_instance(1)
        params = hyper()
        val = iot_objective(inst["A0"], inst["pi0"], inst["U"], inst["V"],
                            inst["kern"], params)
        p = inst["pi0"].entries
        assert val == pytest.approx(-(p * np.log(p)).sum(), abs=1e-7)


class TestIotGradient:
    def test_stationary_at_ground_truth(self):
        inst = forward_instance(2)
        g = iot_gradient(inst["A0"], inst["pi0"], inst["U"], inst["V"],
                         inst["kern"], hyper())
        assert np.linalg.norm(g) <= 1e-6

    def test_constant_cost_degenerate_kernel(self, rng):
        U = np.zeros((2, 3))
        V = rng.normal(0, 1, (2, 4))
        pi_hat = rng.dirichlet(np.ones(12)).reshape(3, 4)
        g = iot_gradient(rng.normal(0, 1, (2, 2)), pi_hat, U, V,
                         KernelSpec("linear"), hyper())
        np.testing.assert_allclose(g, 0.0, atol=1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_matches_finite_differences(self, seed):
        inst = forward_instance(100 + seed, m=4, n=4, p=2, q=2)
        params = hyper(sinkhorn_tol=1e-12)
        pi_hat = noised(inst["pi0"], inst["rng"], 2e-3)
        A = inst["rng"].normal(0, 0.3, (2, 2))
        g = iot_gradient(A, pi_hat, inst["U"], inst["V"], inst["kern"], params)
        h = 1e-6
        fd = np.zeros_like(A)
        for i in range(2):
            for j in range(2):
                dA = np.zeros_like(A)
                dA[i, j] = h
                fd[i, j] = (iot_objective(A + dA, pi_hat, inst["U"], inst["V"],
                                          inst["kern"], params)
                            - iot_objective(A - dA, pi_hat, inst["U"], inst["V"],
                                            inst["kern"], params)) / (2 * h)
        assert np.abs(g - fd).max() / max(np.abs(fd).max(), 1e-12) <= 1e-4


class TestIotFit:
    def test_noise_free_recovery(self):
        inst = forward_instance(3, m=4, n=4, p=2, q=2)
        result = iot_fit(inst["pi0"], inst["U"], inst["V"], inst["kern"],
                         hyper(outer_iters=500))
        assert kl_divergence(inst["pi0"], result.fitted_plan) <= 1e-4

    def test_zero_iterations_is_noop(self):
        inst = forward_instance(4)
        result = iot_fit(inst["pi0"], inst["U"], inst["V"], inst["kern"],
                         hyper(outer_iters=0))
        np.testing.assert_allclose(result.A.entries, 0.0)
        assert result.iterations == 0
        assert result.objective_trace.size == 1

    def test_fixed_marginal_property(self):
        inst = forward_instance(5, m=6, n=7, p=3, q=2)
        pi_hat = noised(inst["pi0"], inst["rng"], 8e-3)
        result = iot_fit(pi_hat, inst["U"], inst["V"], inst["kern"], hyper())
        fitted = result.fitted_plan.entries
        np.testing.assert_allclose(fitted.sum(1), pi_hat.entries.sum(1), atol=1e-8)
        np.testing.assert_allclose(fitted.sum(0), pi_hat.entries.sum(0), atol=1e-8)

    def test_trace_monotone_within_slack(self):
        inst = forward_instance(6)
        pi_hat = noised(inst["pi0"], inst["rng"], 5e-3)
        result = iot_fit(pi_hat, inst["U"], inst["V"], inst["kern"], hyper())
        trace = result.objective_trace
        assert np.all(np.diff(trace) <= 1e-6)
        assert np.all(np.isfinite(trace))

    def test_fitted_plan_matches_sinkhorn_of_A(self):
        inst = forward_instance(7)
        pi_hat = noised(inst["pi0"], inst["rng"], 5e-3)
        params = hyper()
        result = iot_fit(pi_hat, inst["U"], inst["V"], inst["kern"], params)
        from otmatch.kernels import kernel_cost
        C = kernel_cost(inst["U"], inst["V"], result.A, inst["kern"])
        redo = sinkhorn(C, pi_hat.entries.sum(1), pi_hat.entries.sum(0), params.lam,
                        tol=params.sinkhorn_tol).plan
        np.testing.assert_allclose(result.fitted_plan.entries, redo.entries, atol=1e-9)
