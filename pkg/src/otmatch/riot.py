"""Marginal-relaxed inverse transport: the three-block alternating solver.

The fit minimizes, over the interaction matrix A and the plan's marginals,

    -sum_ij pihat_ij log pi_ij
        + delta * (d_{lam_u}(C_u, pi 1, muhat) + d_{lam_v}(C_v, pi' 1, nuhat))

where pi is the regularized plan of the kernel cost C(A) and the d terms are
regularized transport distances tying the plan's marginals softly to the
empirical ones. By duality the relaxation terms turn into potentials (z, w),
and each outer iteration alternates:

  1. inner scaling solve for (xi, eta, theta) at fixed (A, z, w),
  2. an envelope-theorem gradient step on A,
  3. refreshed potentials (z, w) from two Sinkhorn solves on C_u and C_v.

The inner problem constrains the scalings by xi' Z eta = 1 (Z = exp(-lam C));
each half-update requires the Lagrange multiplier theta solving the
normalization equation p(theta) = 1, a monotone univariate root problem.
"""

import json
from dataclasses import dataclass

import numpy as np

from .containers import CouplingMatrix, HyperParams, InteractionMatrix
from .errors import DivergenceError, RootFindingError, ValidationError
from .iot import MAX_HALVINGS, _neg_log_likelihood, kl_trace_value
from .kernels import assemble_interaction_grad, kernel_cost
from .sinkhorn import plan_entropy, sinkhorn

_ROOT_RESIDUAL_TOL = 1e-13
_ROOT_MAX_BISECTIONS = 200


def _entries(x):
    return x.entries if hasattr(x, "entries") else np.asarray(x, dtype=float)


def _theta_root(weights, r, s):
    """Root of p(theta) = sum_i weights_i s_i / (r_i - theta s_i) = 1.

    p is increasing on (-inf, theta_max) with theta_max = min_i r_i / s_i,
    rising from 0 to +inf, so the root below theta_max exists and is unique.
    The bracket starts just under theta_max and expands geometrically
    downward until it straddles the root, then bisects.
    """
    ws = weights * s
    theta_max = float(np.min(r / s))
    scale = max(1.0, abs(theta_max))

    def p(theta):
        return float((ws / (r - theta * s)).sum())

    eps = 1e-9 * scale
    hi = theta_max - eps
    for _ in range(60):
        if p(hi) >= 1.0:
            break
        eps *= 0.125
        hi = theta_max - eps
    else:
        raise RootFindingError("could not bracket the multiplier from above",
                               lo=None, hi=hi)

    delta = scale
    lo = theta_max - delta
    for _ in range(200):
        if p(lo) < 1.0:
            break
        delta *= 8.0
        lo = theta_max - delta
    else:
        raise RootFindingError("could not bracket the multiplier from below",
                               lo=lo, hi=hi)

    for _ in range(_ROOT_MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            return mid
        pm = p(mid)
        if abs(pm - 1.0) <= _ROOT_RESIDUAL_TOL:
            return mid
        if pm < 1.0:
            lo = mid
        else:
            hi = mid
    raise RootFindingError(
        f"bisection did not converge in {_ROOT_MAX_BISECTIONS} steps", lo=lo, hi=hi)


def theta_root_p(eta, mu_hat, M, Z):
    """Multiplier of the xi half-update: solves p(theta) = 1 for fixed eta."""
    eta = np.asarray(eta, dtype=float)
    if np.any(eta <= 0):
        raise ValidationError("eta must be strictly positive")
    return _theta_root(np.asarray(mu_hat, dtype=float), M @ eta, Z @ eta)


def theta_root_q(xi, nu_hat, M, Z):
    """Multiplier of the eta half-update: solves q(theta) = 1 for fixed xi."""
    xi = np.asarray(xi, dtype=float)
    if np.any(xi <= 0):
        raise ValidationError("xi must be strictly positive")
    return _theta_root(np.asarray(nu_hat, dtype=float), M.T @ xi, Z.T @ xi)


@dataclass(frozen=True)
class InnerSolveResult:
    """Output of the alternating scaling solve at fixed (A, z, w).

    ``theta`` is the multiplier of the final xi half-update; ``theta2`` the
    final eta-side multiplier (they agree at convergence). ``h_trace`` holds
    the inner objective after the initial rescale and after every
    half-update, so the monotone chain is observable.
    """

    xi: np.ndarray
    eta: np.ndarray
    theta: float
    theta2: float
    h_trace: np.ndarray

    @property
    def multiplier_gap(self):
        return abs(self.theta - self.theta2)


def _inner_objective(xi, eta, mu_hat, nu_hat, M):
    return float(-(mu_hat @ np.log(xi)) - (nu_hat @ np.log(eta)) + xi @ (M @ eta))


def inner_xi_eta_solve(cost, pi_hat, z, w, params):
    """Alternating half-updates for the constrained scaling problem.

    Minimizes -<muhat, log xi> - <nuhat, log eta> + xi' M eta subject to
    xi' Z eta = 1, with Z = exp(-lam * cost) and
    M_ij = delta (z_i + w_j) Z_ij. Each half-update solves its multiplier
    exactly, so the constraint holds after every update and the objective is
    non-increasing along half-steps.

    With ``params.inner_iters == 0`` the scalings are the all-ones vectors
    rescaled onto the constraint and both multipliers are returned as 0.
    """
    C = _entries(cost)
    pi_hat = _entries(pi_hat)
    mu_hat = pi_hat.sum(axis=1)
    nu_hat = pi_hat.sum(axis=0)
    if np.any(mu_hat <= 0) or np.any(nu_hat <= 0):
        raise ValidationError("empirical marginals must be strictly positive")
    Z = np.exp(-params.lam * C)
    if np.any(Z <= 0):
        raise ValidationError("exp(-lam * cost) underflowed; rescale the cost or lam")
    M = params.delta * (np.asarray(z, dtype=float)[:, None]
                        + np.asarray(w, dtype=float)[None, :]) * Z
    return _inner_solve_raw(mu_hat, nu_hat, M, Z, params.inner_iters)


def _inner_solve_raw(mu_hat, nu_hat, M, Z, n_iters):
    m, n = Z.shape
    total = float(np.ones(m) @ Z @ np.ones(n))
    xi = np.full(m, 1.0 / np.sqrt(total))
    eta = np.full(n, 1.0 / np.sqrt(total))
    h = [_inner_objective(xi, eta, mu_hat, nu_hat, M)]
    theta1 = 0.0
    theta2 = 0.0
    for _ in range(n_iters):
        r = M @ eta
        s = Z @ eta
        theta1 = _theta_root(mu_hat, r, s)
        denom = r - theta1 * s
        if np.any(denom <= 0):
            raise ValidationError("xi update produced a non-positive component")
        xi = mu_hat / denom
        h.append(_inner_objective(xi, eta, mu_hat, nu_hat, M))

        r = M.T @ xi
        s = Z.T @ xi
        theta2 = _theta_root(nu_hat, r, s)
        denom = r - theta2 * s
        if np.any(denom <= 0):
            raise ValidationError("eta update produced a non-positive component")
        eta = nu_hat / denom
        h.append(_inner_objective(xi, eta, mu_hat, nu_hat, M))
    return InnerSolveResult(xi=xi, eta=eta, theta=theta1, theta2=theta2,
                            h_trace=np.asarray(h))


def scaling_plan(xi, eta, Z):
    """Plan entries xi_i Z_ij eta_j of the current scaling iterate."""
    return xi[:, None] * Z * eta[None, :]


def kkt_residual(xi, eta, theta, mu_hat, M, Z):
    """Max-norm residual of the xi-side stationarity condition."""
    return float(np.max(np.abs(-mu_hat / xi + M @ eta - theta * (Z @ eta))))


@dataclass(frozen=True)
class RiotState:
    """Primal/dual iterate of the alternating solver (JSON serializable)."""

    A: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    theta: float
    z: np.ndarray
    w: np.ndarray
    current_plan: CouplingMatrix
    objective: float

    def to_dict(self):
        return {
            "A": self.A.tolist(),
            "xi": self.xi.tolist(),
            "eta": self.eta.tolist(),
            "theta": self.theta,
            "z": self.z.tolist(),
            "w": self.w.tolist(),
            "current_plan": self.current_plan.entries.tolist(),
            "objective": self.objective,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        return cls(
            A=np.asarray(d["A"], dtype=float),
            xi=np.asarray(d["xi"], dtype=float),
            eta=np.asarray(d["eta"], dtype=float),
            theta=float(d["theta"]),
            z=np.asarray(d["z"], dtype=float),
            w=np.asarray(d["w"], dtype=float),
            current_plan=CouplingMatrix(np.asarray(d["current_plan"], dtype=float)),
            objective=float(d["objective"]),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RiotFitResult:
    """Best iterate of a marginal-relaxed inverse fit."""

    A: InteractionMatrix
    fitted_plan: CouplingMatrix
    relaxed_marginals: tuple
    objective_trace: np.ndarray
    state: RiotState


def _relaxation_dual(C_side, plan_marginal, empirical_marginal, lam_side, params):
    """Potential and transport value of one marginal-relaxation term.

    Returns (potential, value) where potential = log(a)/lam_side from the
    left Sinkhorn scaling of (C_side, plan_marginal, empirical_marginal).
    """
    C = _entries(C_side)
    res = sinkhorn(C, plan_marginal, empirical_marginal, lam_side,
                   tol=params.sinkhorn_tol, max_iters=params.sinkhorn_max_iters)
    p = res.plan.entries
    value = float((p * C).sum() - plan_entropy(p) / lam_side)
    return np.log(res.left_scaling) / lam_side, value


def dual_update_zw(plan, mu_hat, nu_hat, C_u, C_v, params):
    """Refresh the relaxation potentials from the current plan's marginals."""
    p = _entries(plan)
    mu = p.sum(axis=1)
    nu = p.sum(axis=0)
    z, _ = _relaxation_dual(C_u, mu, _entries_vec(mu_hat), params.lam_u, params)
    w, _ = _relaxation_dual(C_v, nu, _entries_vec(nu_hat), params.lam_v, params)
    return z, w


def _entries_vec(v):
    return v.values if hasattr(v, "values") else np.asarray(v, dtype=float)


def riot_objective(state, pi_hat, C_u, C_v, params):
    """Relaxed objective -sum pihat log pi + delta (d_u + d_v) at a state."""
    pi_hat = _entries(pi_hat)
    plan = state.current_plan.entries if isinstance(state, RiotState) else _entries(state)
    value = _neg_log_likelihood(pi_hat, plan)
    if params.delta > 0:
        _, d_u = _relaxation_dual(C_u, plan.sum(axis=1), pi_hat.sum(axis=1),
                                  params.lam_u, params)
        _, d_v = _relaxation_dual(C_v, plan.sum(axis=0), pi_hat.sum(axis=0),
                                  params.lam_v, params)
        value += params.delta * (d_u + d_v)
    return float(value)


def riot_grad_A(state, pi_hat, U, V, kernel, params):
    """Envelope-theorem gradient of the relaxed objective with respect to A.

    Assembles sum_ij lam [pihat_ij + (theta - delta (z_i + w_j)) pi_ij]
    C'_ij(A). The state must come from a converged inner solve for the same
    A: the normalization residual |xi' Z eta - 1| must not exceed 1e-6.
    """
    pi_hat = _entries(pi_hat)
    C = kernel_cost(U, V, state.A, kernel).entries
    Z = np.exp(-params.lam * C)
    residual = abs(float(state.xi @ Z @ state.eta) - 1.0)
    if residual > 1e-6:
        raise ValidationError(
            f"state is inconsistent with A: normalization residual {residual:.3e}")
    pi = scaling_plan(state.xi, state.eta, Z)
    weights = params.lam * (
        pi_hat + (state.theta - params.delta * (state.z[:, None] + state.w[None, :])) * pi)
    return assemble_interaction_grad(U, V, state.A, kernel, weights)


def _evaluate_at(A, pi_hat, mu_hat, nu_hat, U, V, kernel, c_u, c_v, z, w, params):
    """Inner solve at (A, z, w) plus the primal objective of its plan."""
    C = kernel_cost(U, V, A, kernel).entries
    Z = np.exp(-params.lam * C)
    if np.any(Z <= 0):
        raise ValidationError("exp(-lam * cost) underflowed; rescale the cost or lam")
    M = params.delta * (z[:, None] + w[None, :]) * Z
    inner = _inner_solve_raw(mu_hat, nu_hat, M, Z, params.inner_iters)
    pi = scaling_plan(inner.xi, inner.eta, Z)
    obj = _neg_log_likelihood(pi_hat, pi)
    rel = None
    if params.delta > 0:
        z_new, d_u = _relaxation_dual(c_u, pi.sum(axis=1), mu_hat, params.lam_u, params)
        w_new, d_v = _relaxation_dual(c_v, pi.sum(axis=0), nu_hat, params.lam_v, params)
        obj += params.delta * (d_u + d_v)
        rel = (z_new, w_new)
    return inner, pi, float(obj), rel


def _alternating_fit(pi_hat, U, V, kernel, C_u, C_v, params, resume=None,
                     side_block=None):
    """Shared outer loop of the fixed and joint side-cost fits.

    ``side_block``, when given, is called once per iteration with the current
    side costs, the pre-step plan, and the potentials, and returns updated
    side costs. Returns (best_state, trace, best_c_u, best_c_v).
    """
    pi_hat = _entries(pi_hat)
    mu_hat = pi_hat.sum(axis=1)
    nu_hat = pi_hat.sum(axis=0)
    U_arr = U.features if hasattr(U, "features") else np.asarray(U, dtype=float)
    V_arr = V.features if hasattr(V, "features") else np.asarray(V, dtype=float)
    c_u = _entries(C_u)
    c_v = _entries(C_v)

    if resume is not None:
        A = np.array(resume.A, dtype=float)
        z = np.array(resume.z, dtype=float)
        w = np.array(resume.w, dtype=float)
    else:
        A = np.zeros((U_arr.shape[0], V_arr.shape[0]))
        z = np.zeros(pi_hat.shape[0])
        w = np.zeros(pi_hat.shape[1])

    trace = []
    best = None
    best_costs = (c_u, c_v)

    def snapshot(A_l, inner, pi, obj, z_l, w_l):
        return RiotState(A=A_l.copy(), xi=inner.xi, eta=inner.eta, theta=inner.theta,
                         z=z_l.copy(), w=w_l.copy(),
                         current_plan=CouplingMatrix(pi), objective=obj)

    inner, pi, obj, rel = _evaluate_at(A, pi_hat, mu_hat, nu_hat, U, V, kernel,
                                       c_u, c_v, z, w, params)
    for _ in range(max(params.outer_iters, 0)):
        if not np.isfinite(obj):
            raise DivergenceError("objective became non-finite", trace=trace)
        trace.append(obj)
        if best is None or obj < best.objective:
            best = snapshot(A, inner, pi, obj, z, w)
            best_costs = (c_u, c_v)

        weights = params.lam * (
            pi_hat + (inner.theta - params.delta * (z[:, None] + w[None, :])) * pi)
        grad = assemble_interaction_grad(U_arr, V_arr, A, kernel, weights)

        step = params.step_size
        for _ in range(MAX_HALVINGS + 1):
            A_next = A - step * grad
            inner_next, pi_next, obj_next, rel_next = _evaluate_at(
                A_next, pi_hat, mu_hat, nu_hat, U, V, kernel, c_u, c_v, z, w, params)
            if obj_next <= obj:
                break
            step *= 0.5
        else:
            # No halving found a decrease: keep the current iterate.
            A_next, inner_next, pi_next, obj_next, rel_next = A, inner, pi, obj, rel

        # Remaining blocks use the pre-step plan, in block order: side costs
        # first (joint mode), then the potentials. delta == 0 leaves the
        # potentials untouched since they have no effect on anything.
        if side_block is not None and params.delta > 0:
            c_u, c_v = side_block(c_u, c_v, pi, z, w)
            z, _ = _relaxation_dual(c_u, pi.sum(axis=1), mu_hat, params.lam_u, params)
            w, _ = _relaxation_dual(c_v, pi.sum(axis=0), nu_hat, params.lam_v, params)
        elif rel is not None:
            z, w = rel

        A, inner, pi, obj, rel = A_next, inner_next, pi_next, obj_next, rel_next
        if params.delta > 0:
            # The accepted trial was solved with the stale potentials (and,
            # in joint mode, stale side costs); re-evaluate before recording.
            inner, pi, obj, rel = _evaluate_at(A, pi_hat, mu_hat, nu_hat, U, V,
                                               kernel, c_u, c_v, z, w, params)

    if not np.isfinite(obj):
        raise DivergenceError("objective became non-finite", trace=trace)
    trace.append(obj)
    if best is None or obj < best.objective:
        best = snapshot(A, inner, pi, obj, z, w)
        best_costs = (c_u, c_v)

    return best, trace, best_costs[0], best_costs[1]


def riot_fit(pi_hat, U, V, kernel, C_u, C_v, params=None, resume=None):
    """Run the three-block alternation and return the best iterate.

    Each of the ``params.outer_iters`` iterations performs the inner scaling
    solve (``params.inner_iters`` half-update pairs), one gradient step on A
    with the same step-halving guard as the fixed-marginal solver, and a
    refresh of the relaxation potentials from the pre-step plan. The iterate
    with the lowest relaxed objective is returned.

    Parameters
    ----------
    pi_hat : CouplingMatrix
        Observed matching matrix with strictly positive marginals.
    U, V : ProfileSet
        Feature matrices (p-by-m and q-by-n).
    kernel : KernelSpec
    C_u, C_v : CostMatrix
        Side costs of the two relaxation terms, m-by-m and n-by-n.
    params : HyperParams
    resume : RiotState, optional
        Continue from a checkpointed state instead of the cold start
        A = 0, z = w = 0.

    Raises
    ------
    DivergenceError
        If the objective becomes non-finite; carries the trace so far.
    """
    params = params or HyperParams()
    best, trace, _, _ = _alternating_fit(pi_hat, U, V, kernel, C_u, C_v, params,
                                         resume=resume)
    plan = best.current_plan
    mp = plan.marginals()
    return RiotFitResult(
        A=InteractionMatrix(best.A),
        fitted_plan=plan,
        relaxed_marginals=(mp.mu, mp.nu),
        objective_trace=np.asarray(trace),
        state=best,
    )


def predict_matching(A, U_new, V_new, mu_new, nu_new, kernel, lam,
                     tol=1e-9, max_iters=10000):
    """Predict the matching of a new population from a learned interaction.

    Computes the kernel cost of the new profiles and returns its regularized
    plan at the supplied marginals.
    """
    C = kernel_cost(U_new, V_new, A, kernel)
    return sinkhorn(C, mu_new, nu_new, lam, tol=tol, max_iters=max_iters).plan
