"""Independent reference implementations used to check the package.

Everything here is deliberately written along a different route than the
code under test: a generic convex-modeling formulation for the steering
program, projected gradient for the SVM dual, exhaustive enumeration for
the max-min labels, and a second random-state sampler built on the legacy
RandomState generator.
"""

import itertools

import numpy as np

import cvxpy as cp
from steerml.sdp_steer import enumerate_strategies


def cvxpy_steering_value(asm, gauge=True):
    """Optimal witness value via a generic convex-modeling formulation.

    ``gauge`` pins the flat directions (adding the same matrix to both
    outcomes of one measurement while subtracting it elsewhere changes
    nothing); the constraint is optimality-preserving and lets the solver
    reach full accuracy.
    """
    m = asm.n_measurements
    table = enumerate_strategies(m, 2).table
    F = [[cp.Variable((2, 2), hermitian=True) for _ in range(2)] for _ in range(m)]
    objective = 0
    for A in range(m):
        for a in range(2):
            objective = objective + cp.real(cp.trace(F[A][a] @ asm.sigma[A, a]))
    constraints = []
    total = 0
    for lam in range(table.shape[0]):
        block = 0
        for A in range(m):
            block = block + F[A][table[lam, A]]
        constraints.append(block >> 0)
        total = total + cp.trace(block)
    constraints.append(cp.real(total) == 1)
    if gauge:
        for A in range(1, m):
            constraints.append(F[A][0] + F[A][1] == F[0][0] + F[0][1])
    problem = cp.Problem(cp.Minimize(objective), constraints)
    problem.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-11)
    return problem.value


def project_box_hyperplane(v, C, y):
    """Exact Euclidean projection onto {0 <= a <= C, y.a = 0}."""

    def residual(mu):
        return y @ np.clip(v - mu * y, 0, C)

    lo, hi = -1e8, 1e8
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if residual(mid) > 0:
            lo = mid
        else:
            hi = mid
    return np.clip(v - 0.5 * (lo + hi) * y, 0, C)


def qp_svm_dual(K, y, C, iters=300_000):
    """Projected-gradient solution of the SVM dual (min form).

    Returns (alpha, dual objective). The projection onto the intersection
    of the box and the equality hyperplane is computed exactly by
    bisection, so the iteration is a true projected gradient method.
    """
    y = np.asarray(y, dtype=float)
    C = np.asarray(C, dtype=float)
    n = y.shape[0]
    Q = (y[:, None] * y[None, :]) * K
    lip = float(np.linalg.eigvalsh(Q)[-1]) + 1e-9
    a = project_box_hyperplane(np.zeros(n), C, y)
    for _ in range(iters):
        grad = Q @ a - 1.0
        a_new = project_box_hyperplane(a - grad / lip, C, y)
        if np.max(np.abs(a_new - a)) < 1e-14:
            a = a_new
            break
        a = a_new
    return a, float(0.5 * a @ Q @ a - a.sum())


def svm_primal_optimum(K, y, C):
    """Optimal primal objective of the weighted soft-margin SVM.

    By strong duality it equals minus the dual minimum.
    """
    _, dual_min = qp_svm_dual(K, y, C)
    return -dual_min


def exhaustive_maxmin(pool_candidates, ysvm, lam):
    """Best achievable worst-case J over all 2^u integer label vectors."""
    from steerml.s4vm_core import gain_loss

    u = ysvm.size
    best = -np.inf
    for bits in itertools.product((-1, 1), repeat=u):
        y = np.array(bits)
        worst = min(
            g - lam * l
            for g, l in (gain_loss(y, yhat, ysvm) for yhat in pool_candidates)
        )
        best = max(best, worst)
    return best


def ginibre_sampler_legacy(seed, count):
    """Second, independent Hilbert-Schmidt sampler (legacy RandomState)."""
    rs = np.random.RandomState(seed)
    out = []
    for _ in range(count):
        g = rs.normal(size=(4, 4)) + 1j * rs.normal(size=(4, 4))
        rho = g @ g.conj().T
        out.append(rho / np.trace(rho).real)
    return out


def flip_schedule_reference(ysvm, decision_values, n_candidates, seed):
    """Straightforward reimplementation of the candidate flip schedule."""
    rates = (0.05, 0.1, 0.2, 0.3)
    rng = np.random.default_rng(seed)
    damp = 1.0 / (1.0 + np.abs(decision_values))
    dists = []
    for _ in range(n_candidates):
        rate = rates[rng.integers(len(rates))]
        flips = rng.random(ysvm.size) < rate * damp
        dists.append(int(np.sum(flips)))
    return np.array(dists)
