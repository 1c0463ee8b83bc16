"""Fixed-marginal inverse transport: fit the interaction matrix by
minimizing the negative log-likelihood -sum pihat_ij log pi_ij, with the
model plan's marginals pinned to the empirical ones.

Equivalently this minimizes KL(pihat || pi(A)) over A, where pi(A) is the
Sinkhorn plan of the kernel cost C(A) at the empirical marginals. The
gradient with respect to the cost is lam * (pihat - pi), chained through the
kernel derivative.
"""

from dataclasses import dataclass

import numpy as np

from .containers import CouplingMatrix, HyperParams, InteractionMatrix
from .errors import DivergenceError
from .kernels import assemble_interaction_grad, kernel_cost
from .sinkhorn import sinkhorn

# Backtracking budget shared with the relaxed solver: halve the step at most
# this many times within one iteration before accepting it anyway.
MAX_HALVINGS = 20

_GRAD_NORM_EXIT = 1e-10


@dataclass(frozen=True)
class IotFitResult:
    """Best iterate of a fixed-marginal inverse fit.

    ``objective_trace`` holds KL(pihat || pi) per outer iteration, which is
    the fit objective up to the constant entropy of pihat.
    """

    A: InteractionMatrix
    fitted_plan: CouplingMatrix
    objective_trace: np.ndarray
    iterations: int


def _entries(x):
    return x.entries if hasattr(x, "entries") else np.asarray(x, dtype=float)


def _model_plan(A, mu_hat, nu_hat, U, V, kernel, params):
    C = kernel_cost(U, V, A, kernel).entries
    result = sinkhorn(C, mu_hat, nu_hat, params.lam,
                      tol=params.sinkhorn_tol, max_iters=params.sinkhorn_max_iters)
    return result.plan.entries


def _neg_log_likelihood(pi_hat, pi):
    mask = pi_hat > 0
    return float(-(pi_hat[mask] * np.log(pi[mask])).sum())


def iot_objective(A, pi_hat, U, V, kernel, params):
    """Negative log-likelihood -sum pihat_ij log pi_ij at the model plan.

    The plan is the Sinkhorn solution of C(A) at the marginals of ``pi_hat``;
    entries with zero empirical mass contribute nothing.
    """
    pi_hat = _entries(pi_hat)
    pi = _model_plan(A, pi_hat.sum(axis=1), pi_hat.sum(axis=0), U, V, kernel, params)
    return _neg_log_likelihood(pi_hat, pi)


def iot_gradient(A, pi_hat, U, V, kernel, params):
    """Gradient of :func:`iot_objective` with respect to A.

    The cost-space gradient of the pinned-marginal likelihood is
    lam * (pihat - pi); chaining through the kernel gives
    sum_ij lam (pihat_ij - pi_ij) f'(u_i' A v_j) u_i v_j'.
    """
    pi_hat = _entries(pi_hat)
    pi = _model_plan(A, pi_hat.sum(axis=1), pi_hat.sum(axis=0), U, V, kernel, params)
    return assemble_interaction_grad(U, V, A, kernel, params.lam * (pi_hat - pi))


def kl_trace_value(pi_hat, pi):
    """KL(pihat || pi) used for objective traces (0 log 0 = 0)."""
    mask = pi_hat > 0
    return float((pi_hat[mask] * (np.log(pi_hat[mask]) - np.log(pi[mask]))).sum())


def iot_fit(pi_hat, U, V, kernel, params=None, A_init=None):
    """Gradient descent on the fixed-marginal likelihood.

    Runs ``params.outer_iters`` steps of size ``params.step_size`` from
    A = 0 (or ``A_init``), halving the step within an iteration whenever it
    would increase the objective. Returns the best iterate by objective.

    Raises
    ------
    DivergenceError
        If the objective becomes non-finite; carries the trace so far.
    """
    params = params or HyperParams()
    pi_hat = _entries(pi_hat)
    mu_hat = pi_hat.sum(axis=1)
    nu_hat = pi_hat.sum(axis=0)
    U_arr = U.features if hasattr(U, "features") else np.asarray(U, dtype=float)
    V_arr = V.features if hasattr(V, "features") else np.asarray(V, dtype=float)

    A = np.zeros((U_arr.shape[0], V_arr.shape[0])) if A_init is None \
        else np.array(_entries(A_init), dtype=float)

    pi = _model_plan(A, mu_hat, nu_hat, U, V, kernel, params)
    obj = _neg_log_likelihood(pi_hat, pi)
    trace = [kl_trace_value(pi_hat, pi)]
    best = (trace[0], A.copy(), pi)

    iterations = 0
    for _ in range(params.outer_iters):
        grad = assemble_interaction_grad(U, V, A, kernel, params.lam * (pi_hat - pi))
        if np.linalg.norm(grad) <= _GRAD_NORM_EXIT:
            break
        step = params.step_size
        for _ in range(MAX_HALVINGS + 1):
            A_next = A - step * grad
            pi_next = _model_plan(A_next, mu_hat, nu_hat, U, V, kernel, params)
            obj_next = _neg_log_likelihood(pi_hat, pi_next)
            if obj_next <= obj:
                break
            step *= 0.5
        else:
            # No halving found a decrease: keep the current iterate.
            A_next, pi_next, obj_next = A, pi, obj
        A, pi, obj = A_next, pi_next, obj_next
        iterations += 1
        if not np.isfinite(obj):
            raise DivergenceError("objective became non-finite", trace=trace)
        kl = kl_trace_value(pi_hat, pi)
        trace.append(kl)
        if kl < best[0]:
            best = (kl, A.copy(), pi)

    return IotFitResult(
        A=InteractionMatrix(best[1]),
        fitted_plan=CouplingMatrix(best[2]),
        objective_trace=np.asarray(trace),
        iterations=iterations,
    )
