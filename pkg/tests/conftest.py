import numpy as np
import pytest
from scipy.spatial.distance import cdist

from otmatch.containers import CostMatrix, CouplingMatrix, HyperParams, ProfileSet
from otmatch.kernels import KernelSpec, kernel_cost
from otmatch.sinkhorn import sinkhorn


def random_marginal(rng, d, conc=5.0):
    return rng.dirichlet(np.full(d, conc))


def random_coupling(rng, m, n):
    flat = rng.dirichlet(np.ones(m * n))
    return flat.reshape(m, n)


def euclidean_cost(rng, d, scale=np.sqrt(5.0)):
    pts = scale * rng.normal(0.0, 1.0, (d, 2))
    return cdist(pts, pts)


def poly_kernel():
    return KernelSpec("polynomial", gamma=0.05, c0=1.0, degree=2)


def forward_instance(seed, m=6, n=5, p=3, q=2, lam=1.0, conc=5.0):
    """Ground-truth kernel market: returns everything a fit test needs."""
    rng = np.random.default_rng(seed)
    U = rng.normal(0.0, 1.0, (p, m))
    V = rng.normal(0.0, 1.0, (q, n))
    A0 = rng.normal(0.0, 1.0, (p, q))
    mu0 = random_marginal(rng, m, conc)
    nu0 = random_marginal(rng, n, conc)
    kern = poly_kernel()
    C0 = kernel_cost(U, V, A0, kern)
    pi0 = sinkhorn(C0, mu0, nu0, lam).plan
    return {
        "rng": rng, "U": ProfileSet(U), "V": ProfileSet(V), "A0": A0,
        "mu0": mu0, "nu0": nu0, "kern": kern, "C0": C0, "pi0": pi0,
        "C_u": CostMatrix(euclidean_cost(rng, m)),
        "C_v": CostMatrix(euclidean_cost(rng, n)),
    }


def noised(pi0, rng, sigma):
    p = pi0.entries if isinstance(pi0, CouplingMatrix) else pi0
    noisy = p + np.abs(rng.normal(0.0, sigma, p.shape))
    return CouplingMatrix(noisy / noisy.sum())


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
