"""Steerability detection through a block-diagonal semidefinite program.

The witness program is

    min  tr sum_{a,A} F[a|A] sigma[a|A]
    s.t. sum_{a,A} F[a|A] D(a|A,lambda) >= 0   for every strategy lambda,
         tr(sum_{a,A,lambda} F[a|A] D(a|A,lambda)) = 1,

over Hermitian 2x2 matrices F[a|A]. A negative optimum certifies that the
assemblage admits no local hidden state model, i.e. the underlying state is
steerable for that measurement set.

The solver is a self-contained primal-dual interior-point method
(Nesterov-Todd scaling, Mehrotra predictor-corrector). Every cone block is
a 2x2 Hermitian matrix, so all per-block linear algebra (Cholesky,
eigenvalues, scaling factors) is done in closed form and vectorized over
the block axis; independent problem instances of the same shape are
additionally vectorized over a batch axis, which is what makes the
100-trial labeling rule cheap. Hermitian 2x2 matrices are mapped
isometrically to R^4 through the orthonormal basis {I, sx, sy, sz}/sqrt(2).
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SizeError
from .qstate import Assemblage, MeasurementSet, TwoQubitState, assemblage, random_measurement_set

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERATIONS = "max_iterations"

STRATEGY_LIMIT = 2**16

_SQRT2 = np.sqrt(2.0)

# Tiny static regularization for the Schur complement, relative to its
# largest diagonal entry. The strategy-table LMI has an exact null space
# (shifting both outcomes of one measurement and compensating on another
# leaves every block unchanged), so the Newton system needs a proximal
# term along those flat directions; it must stay near roundoff level or it
# leaks into the dual residual.
_SCHUR_REG = 1e-13

_STRATEGY_CACHE: dict = {}
_WEIGHTS_CACHE: dict = {}


@dataclass(frozen=True)
class StrategyTable:
    """All deterministic response functions lambda: measurement -> outcome.

    Row lambda, column A holds lambda(A); D(a|A,lambda) = 1 iff
    table[lambda, A] == a.
    """

    table: np.ndarray

    @property
    def n_strategies(self) -> int:
        return self.table.shape[0]


@dataclass(frozen=True)
class SdpSettings:
    """Solver knobs: duality-gap tolerance, iteration cap, decision cutoff."""

    tolerance: float = 1e-8
    max_iterations: int = 200
    steerable_threshold: float = -1e-6

    def __post_init__(self):
        if self.tolerance <= 0:
            raise DomainError("tolerance must be positive")
        if self.steerable_threshold >= 0:
            raise DomainError("steerable_threshold must be negative")
        if self.max_iterations < 1:
            raise DomainError("max_iterations must be >= 1")


@dataclass(frozen=True)
class SteeringWitness:
    """Dual witness matrices F[A, a] with the SDP optimum and solver status."""

    F: np.ndarray
    objective: float
    status: str


@dataclass(frozen=True)
class IpSolution:
    """Primal-dual output of :func:`ip_solve`."""

    matrices: np.ndarray
    objective: float
    dual_objective: float
    status: str
    iterations: int
    gap: float
    dual_blocks: np.ndarray
    dual_equality: float


def enumerate_strategies(m: int, q: int = 2) -> StrategyTable:
    """Enumerate all q^m deterministic strategies for m measurements."""
    if m < 1 or q < 1:
        raise DomainError("m and q must be >= 1")
    if q**m > STRATEGY_LIMIT:
        raise SizeError(f"strategy table would have {q**m} rows (limit {STRATEGY_LIMIT})")
    key = (m, q)
    if key not in _STRATEGY_CACHE:
        rows = np.array(list(itertools.product(range(q), repeat=m)), dtype=np.int64)
        rows = rows.reshape(q**m, m)
        rows.setflags(write=False)
        _STRATEGY_CACHE[key] = rows
    return StrategyTable(_STRATEGY_CACHE[key])


def _strategy_weights(m: int) -> np.ndarray:
    """Indicator matrix P of shape (2^m, 2m); P[l, 2A+a] = D(a|A,l)."""
    if m not in _WEIGHTS_CACHE:
        table = enumerate_strategies(m, 2).table
        L = table.shape[0]
        P = np.zeros((L, 2 * m))
        for A in range(m):
            for a in range(2):
                P[:, 2 * A + a] = table[:, A] == a
        P.setflags(write=False)
        _WEIGHTS_CACHE[m] = P
    return _WEIGHTS_CACHE[m]


# -- Hermitian 2x2 <-> R^4 isometry and batched closed-form linear algebra --


def _htov(H: np.ndarray) -> np.ndarray:
    """Coordinates of Hermitian 2x2 matrices in the orthonormal Pauli basis."""
    d0 = H[..., 0, 0].real
    d1 = H[..., 1, 1].real
    off = H[..., 0, 1]
    v = np.empty(H.shape[:-2] + (4,))
    v[..., 0] = (d0 + d1) / _SQRT2
    v[..., 1] = _SQRT2 * off.real
    v[..., 2] = -_SQRT2 * off.imag
    v[..., 3] = (d0 - d1) / _SQRT2
    return v


def _vtoh(v: np.ndarray) -> np.ndarray:
    """Inverse of :func:`_htov`."""
    H = np.empty(v.shape[:-1] + (2, 2), dtype=complex)
    H[..., 0, 0] = (v[..., 0] + v[..., 3]) / _SQRT2
    H[..., 1, 1] = (v[..., 0] - v[..., 3]) / _SQRT2
    H[..., 0, 1] = (v[..., 1] - 1j * v[..., 2]) / _SQRT2
    H[..., 1, 0] = np.conj(H[..., 0, 1])
    return H


_EBASIS = _vtoh(np.eye(4))
_J4 = np.diag([1.0, -1.0, -1.0, -1.0])


def _adj(M: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(M, -1, -2))


def _mm2(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Products of stacked 2x2 matrices, written out by components.

    numpy's matmul loops over the stack one tiny matrix at a time; at the
    batch sizes the solver uses, the elementwise form is an order of
    magnitude faster.
    """
    a00, a01 = A[..., 0, 0], A[..., 0, 1]
    a10, a11 = A[..., 1, 0], A[..., 1, 1]
    b00, b01 = B[..., 0, 0], B[..., 0, 1]
    b10, b11 = B[..., 1, 0], B[..., 1, 1]
    shape = np.broadcast_shapes(A.shape, B.shape)
    C = np.empty(shape, dtype=np.result_type(A, B))
    C[..., 0, 0] = a00 * b00 + a01 * b10
    C[..., 0, 1] = a00 * b01 + a01 * b11
    C[..., 1, 0] = a10 * b00 + a11 * b10
    C[..., 1, 1] = a10 * b01 + a11 * b11
    return C


def _mm3(A: np.ndarray, B: np.ndarray, C: np.ndarray) -> np.ndarray:
    return _mm2(_mm2(A, B), C)


def _chol2(M: np.ndarray):
    """Lower Cholesky factors of Hermitian 2x2 stacks plus a failure mask.

    Shapes: input (..., 2, 2); returns (L, bad) where ``bad`` flags the
    leading positions whose matrix was not numerically positive definite
    (their factors are filled with identities).
    """
    a = M[..., 0, 0].real
    c = M[..., 1, 1].real
    bad = a <= 0
    safe_a = np.where(bad, 1.0, a)
    l11 = np.sqrt(safe_a)
    l21 = M[..., 1, 0] / l11
    rest = c - np.abs(l21) ** 2
    bad = bad | (rest <= 0)
    L = np.zeros_like(M)
    L[..., 0, 0] = l11
    L[..., 1, 0] = np.where(bad, 0.0, l21)
    L[..., 1, 1] = np.where(bad, 1.0, np.sqrt(np.where(rest <= 0, 1.0, rest)))
    L[..., 0, 0] = np.where(bad, 1.0, l11)
    return L, bad


def _inv_lower2(L: np.ndarray) -> np.ndarray:
    """Inverse of a stack of lower-triangular 2x2 matrices."""
    inv = np.zeros_like(L)
    inv[..., 0, 0] = 1.0 / L[..., 0, 0]
    inv[..., 1, 1] = 1.0 / L[..., 1, 1]
    inv[..., 1, 0] = -L[..., 1, 0] * inv[..., 0, 0] * inv[..., 1, 1]
    return inv


def _eigh2(M: np.ndarray):
    """Eigenvalues (ascending) and eigenvectors of Hermitian 2x2 stacks.

    The low eigenvector solves (M - lo)v = 0 and has the two equivalent
    closed forms (b, lo - a) and (lo - c, conj(b)); whichever contains the
    large gap |a - c| is used, because the other cancels catastrophically
    for (near-)diagonal matrices and can normalize roundoff noise to the
    wrong axis.
    """
    a = M[..., 0, 0].real
    c = M[..., 1, 1].real
    b = M[..., 0, 1]
    mean = (a + c) / 2
    rad = np.sqrt(((a - c) / 2) ** 2 + np.abs(b) ** 2)
    lo, hi = mean - rad, mean + rad
    use_first = a > c  # then |lo - a| is of order |a - c|
    e1 = np.where(use_first, b, (lo - c).astype(complex))
    e2 = np.where(use_first, (lo - a).astype(complex), np.conj(b))
    norm = np.sqrt(np.abs(e1) ** 2 + np.abs(e2) ** 2)
    degenerate = norm < 1e-100
    safe = np.where(degenerate, 1.0, norm)
    e1 = np.where(degenerate, 1.0, e1 / safe)
    e2 = np.where(degenerate, 0.0, e2 / safe)
    vecs = np.empty(M.shape, dtype=complex)
    vecs[..., 0, 0] = e1
    vecs[..., 1, 0] = e2
    vecs[..., 0, 1] = -np.conj(e2)
    vecs[..., 1, 1] = np.conj(e1)
    vals = np.empty(M.shape[:-2] + (2,))
    vals[..., 0] = lo
    vals[..., 1] = hi
    return vals, vecs


def _min_eig2(M: np.ndarray) -> np.ndarray:
    a = M[..., 0, 0].real
    c = M[..., 1, 1].real
    b = M[..., 0, 1]
    return (a + c) / 2 - np.sqrt(((a - c) / 2) ** 2 + np.abs(b) ** 2)


def _max_step(Linv: np.ndarray, dM: np.ndarray) -> np.ndarray:
    """Largest alpha per instance with M + alpha dM >= 0, given M = L L^dag.

    ``Linv`` and ``dM`` have shape (B, L, 2, 2); returns shape (B,).
    """
    K = _mm3(Linv, dM, _adj(Linv))
    worst = np.min(_min_eig2(K), axis=-1)
    return np.where(worst >= -1e-14, np.inf, -1.0 / np.where(worst >= -1e-14, 1.0, worst))


_ST_OPTIMAL = 0
_ST_MAXITER = 1


class _BatchState:
    """Mutable iterate storage for a shrinking set of active instances."""

    def __init__(self, ids, X, Z, Y, nu):
        self.ids = ids
        self.X = X
        self.Z = Z
        self.Y = Y
        self.nu = nu

    def take(self, mask):
        """Remove the masked instances and return their (ids, X, gap, nu, Y)."""
        taken = (
            self.ids[mask],
            self.X[mask],
            self.Z[mask],
            self.Y[mask],
            self.nu[mask],
        )
        keep = ~mask
        self.ids = self.ids[keep]
        self.X = self.X[keep]
        self.Z = self.Z[keep]
        self.Y = self.Y[keep]
        self.nu = self.nu[keep]
        return taken


def _ip_solve_batch(P, cost, eq, eq_rhs, settings, x0=None):
    """Solve a batch of structured SDP instances sharing one block pattern.

    ``P`` is the (L, S) block weight matrix shared by the whole batch;
    ``cost`` has shape (B, S, 2, 2); ``eq`` (S, 2, 2) and ``eq_rhs`` (scalar)
    are shared. Returns arrays over the batch: matrices (B, S, 2, 2),
    objective, dual objective, status codes, iteration counts, gaps, dual
    blocks (B, L, 2, 2), dual equality multipliers.
    """
    L_blocks, S = P.shape
    B = cost.shape[0]
    n = 4 * S

    c = _htov((cost + _adj(cost)) / 2)  # (B, S, 4)
    aeq = _htov((eq + _adj(eq)) / 2)  # (S, 4)
    a_flat = aeq.reshape(-1)

    # P P^T structure reused by every Schur complement build.
    PP = (P[:, :, None] * P[:, None, :]).reshape(L_blocks, S * S)

    # Null space of the block map (slot combinations that cancel out of
    # every block). Iterates are projected onto its complement each step:
    # the flat directions carry no information and left free they inflate
    # the iterate norm. An objective with weight along them makes the
    # program unbounded, which we reject up front.
    null_basis = _null_space(P)
    if null_basis is not None:
        c_null = np.matmul(null_basis.T, c)
        if np.max(np.abs(c_null)) > 1e-6 * (1.0 + np.max(np.abs(c))):
            raise DomainError(
                "objective has weight along the null space of the block map; "
                "the program is unbounded below"
            )

    def drop_null(Xv):
        if null_basis is None:
            return Xv
        return Xv - np.matmul(null_basis, np.matmul(null_basis.T, Xv))

    data_scale = max(1.0, float(np.max(np.abs(c))))
    if x0 is None:
        x0 = _feasible_identity_start(P, aeq, eq_rhs)
    if x0 is not None:
        X = np.broadcast_to(_htov(np.asarray(x0, dtype=complex)), (B, S, 4)).copy()
        Z = _vtoh(np.matmul(P, X))
        if np.min(_min_eig2(Z)) <= 0:
            raise DomainError("x0_mats is not strictly feasible")
    else:
        X = np.zeros((B, S, 4))
        Z = np.broadcast_to(np.eye(2, dtype=complex), (B, L_blocks, 2, 2)).copy()
    Y = data_scale * np.broadcast_to(np.eye(2, dtype=complex), (B, L_blocks, 2, 2)).copy()
    nu = np.zeros(B)

    cone_dim = 2 * L_blocks
    tol = settings.tolerance
    feas_tol = max(tol, 1e-9)
    c_scale = 1.0 + np.max(np.abs(c), axis=(1, 2))  # (B,)
    rhs_scale = 1.0 + abs(eq_rhs)

    out_X = np.zeros((B, S, 4))
    out_Y = np.zeros((B, L_blocks, 2, 2), dtype=complex)
    out_nu = np.zeros(B)
    out_gap = np.full(B, np.nan)
    out_iter = np.zeros(B, dtype=int)
    out_status = np.full(B, _ST_MAXITER, dtype=int)

    state = _BatchState(np.arange(B), X, Z, Y, nu)

    def finalize(mask, code, it):
        ids, Xs, Zs, Ys, nus = state.take(mask)
        out_X[ids] = Xs
        out_Y[ids] = Ys
        out_nu[ids] = nus
        out_gap[ids] = np.sum(_htov(Zs) * _htov(Ys), axis=(1, 2))
        out_iter[ids] = it
        out_status[ids] = code

    diag_idx = np.arange(n)
    for it in range(1, settings.max_iterations + 1):
        if state.ids.size == 0:
            break
        X, Z, Y, nu = state.X, state.Z, state.Y, state.nu
        cb = c[state.ids]
        scale_b = c_scale[state.ids]

        zbar = _htov(Z)
        ybar = _htov(Y)
        gap = np.sum(zbar * ybar, axis=(1, 2))
        pobj = np.sum(cb * X, axis=(1, 2))
        dobj = nu * eq_rhs
        r_d = cb - nu[:, None, None] * aeq - np.matmul(P.T, ybar)
        r_gap = np.matmul(P, X) - zbar  # (B, L, 4)
        r_a = eq_rhs - X.reshape(X.shape[0], -1) @ a_flat
        z_scale = 1.0 + np.max(np.abs(zbar), axis=(1, 2))

        obj_scale = np.maximum(1.0, np.maximum(np.abs(pobj), np.abs(dobj)))
        # Certified error on the objective: duality gap plus the slip the
        # residuals can induce through the current iterates.
        err = (
            gap
            + np.sum(np.abs(r_d) * np.abs(X), axis=(1, 2))
            + np.sum(np.abs(r_gap) * np.abs(ybar), axis=(1, 2))
            + np.abs(nu) * np.abs(r_a)
        )
        converged = (
            (err <= tol * obj_scale)
            & (np.max(np.abs(r_d), axis=(1, 2)) <= feas_tol * scale_b)
            & (np.max(np.abs(r_gap), axis=(1, 2)) <= feas_tol * z_scale)
            & (np.abs(r_a) <= feas_tol * rhs_scale)
        )
        if np.any(converged):
            finalize(converged, _ST_OPTIMAL, it - 1)
            if state.ids.size == 0:
                break
            live = ~converged
            X, Z, Y, nu = state.X, state.Z, state.Y, state.nu
            cb, scale_b = cb[live], scale_b[live]
            zbar, ybar = zbar[live], ybar[live]
            gap, r_d, r_gap, r_a = gap[live], r_d[live], r_gap[live], r_a[live]

        with np.errstate(all="ignore"):
            L1, bad1 = _chol2(Z)
            L2, bad2 = _chol2(Y)
            bad = np.any(bad1, axis=-1) | np.any(bad2, axis=-1)
            L1inv = _inv_lower2(L1)
            L2inv = _inv_lower2(L2)
            # Nesterov-Todd scaling: Q = L1^dag Y L1 = V diag(lam^2) V^dag,
            # R = L1 V diag(lam^-1/2) gives R^-1 Z R^-dag = R^dag Y R = lam.
            Q = _mm3(_adj(L1), Y, L1)
            lam2, V = _eigh2(Q)
            bad = bad | np.any(lam2 <= 0, axis=(-2, -1))
            lam2 = np.where(lam2 <= 0, 1.0, lam2)
            lam = np.sqrt(lam2)
            R = _mm2(L1, V) * (lam**-0.5)[..., None, :]
            Rinv = (lam**0.5)[..., :, None] * _mm2(_adj(V), L1inv)
            Winv = _mm2(_adj(Rinv), Rinv)

            # 4x4 real representation T4 of U -> W^-1 U W^-1 per block. For
            # a Hermitian A with Pauli coordinates u, the map M -> A M A is
            # u u^T - det(A) J in those coordinates (the quadratic
            # representation of the Lorentz cone), so no matrix products
            # are needed. Contracting T4 with the strategy weights yields
            # the Schur complement.
            uw = _htov(Winv)  # (B, L, 4)
            detw = (
                uw[..., 0] ** 2 - uw[..., 1] ** 2 - uw[..., 2] ** 2 - uw[..., 3] ** 2
            ) / 2
            T4 = uw[..., :, None] * uw[..., None, :] - detw[..., None, None] * _J4
            H = np.matmul(T4.transpose(0, 2, 3, 1).reshape(-1, 16, L_blocks), PP)
            H = H.reshape(-1, 4, 4, S, S).transpose(0, 3, 1, 4, 2).reshape(-1, n, n)
            reg = _SCHUR_REG * (1.0 + np.max(np.abs(H[:, diag_idx, diag_idx]), axis=-1))
            H[:, diag_idx, diag_idx] += reg[:, None]

            if np.any(bad):
                finalize(bad, _ST_MAXITER, it)
                continue  # rare path; survivors retry next pass

            nb = X.shape[0]
            gap_term = np.matmul(P.T, np.sum(T4 * r_gap[..., None, :], axis=-1))

            def refined_solve(rhs):
                # One round of iterative refinement against the
                # unregularized matrix, so the proximal term never leaks
                # into the dual residual.
                sol, flag = _solve_or_flag(H, rhs)
                if sol is None:
                    return None, flag
                resid = rhs - np.matmul(H, sol) + reg[:, None, None] * sol
                corr, flag = _solve_or_flag(H, resid)
                if corr is None:
                    return None, flag
                return sol + corr, None

            def make_dirs(Hinv_q, Hinv_a, lifted):
                denom = Hinv_a @ a_flat
                dnu = (r_a - Hinv_q @ a_flat) / denom
                dX = (Hinv_q + dnu[:, None] * Hinv_a).reshape(nb, S, 4)
                dZv = np.matmul(P, dX) + r_gap
                dZ = _vtoh(dZv)
                dY = lifted - _vtoh(np.sum(T4 * dZv[..., None, :], axis=-1))
                dY = (dY + _adj(dY)) / 2
                return dX, dnu, dZ, dY

            def rhs_for(lifted):
                return -r_d + np.matmul(P.T, _htov(lifted)) - gap_term

            mu = gap / cone_dim
            # Predictor: aim straight at the boundary (sigma = 0).
            E_aff = np.zeros_like(Z)
            E_aff[:, :, 0, 0] = -lam[:, :, 0]
            E_aff[:, :, 1, 1] = -lam[:, :, 1]
            lifted_aff = _mm3(_adj(Rinv), E_aff, Rinv)
            rhs = np.empty((nb, n, 2))
            rhs[:, :, 0] = rhs_for(lifted_aff).reshape(nb, n)
            rhs[:, :, 1] = a_flat
            sol, solve_bad = refined_solve(rhs)
            if solve_bad is not None:
                finalize(solve_bad, _ST_MAXITER, it)
                continue
            Hinv_a = sol[..., 1]
            dX_a, dnu_a, dZ_a, dY_a = make_dirs(sol[..., 0], Hinv_a, lifted_aff)
            ap_aff = np.minimum(1.0, _max_step(L1inv, dZ_a))[:, None, None, None]
            ad_aff = np.minimum(1.0, _max_step(L2inv, dY_a))[:, None, None, None]
            gap_aff = np.sum(
                _htov(Z + ap_aff * dZ_a) * _htov(Y + ad_aff * dY_a), axis=(1, 2)
            )
            sigma = np.clip(gap_aff / gap, 0.0, 1.0) ** 3

            # Corrector with the Mehrotra second-order term, formed in the
            # scaled space where both variables equal diag(lam).
            dZ_hat = _mm3(Rinv, dZ_a, _adj(Rinv))
            dY_hat = _mm3(_adj(R), dY_a, R)
            corr = (_mm2(dZ_hat, dY_hat) + _mm2(dY_hat, dZ_hat)) / 2
            target = -corr
            smu = sigma * mu
            target[:, :, 0, 0] += smu[:, None] - lam2[:, :, 0]
            target[:, :, 1, 1] += smu[:, None] - lam2[:, :, 1]
            lam_sum = lam[:, :, :, None] + lam[:, :, None, :]
            Ec = 2.0 * target / lam_sum
            Ec = (Ec + _adj(Ec)) / 2
            lifted = _mm3(_adj(Rinv), Ec, Rinv)
            sol2, solve_bad = refined_solve(rhs_for(lifted).reshape(nb, n, 1))
            if solve_bad is not None:
                finalize(solve_bad, _ST_MAXITER, it)
                continue
            dX, dnu, dZ, dY = make_dirs(sol2[..., 0], Hinv_a, lifted)

            alpha_p = np.minimum(1.0, 0.99 * _max_step(L1inv, dZ))
            alpha_d = np.minimum(1.0, 0.99 * _max_step(L2inv, dY))

            state.X = drop_null(X + alpha_p[:, None, None] * dX)
            Znew = Z + alpha_p[:, None, None, None] * dZ
            state.Z = (Znew + _adj(Znew)) / 2
            state.nu = nu + alpha_d * dnu
            Ynew = Y + alpha_d[:, None, None, None] * dY
            state.Y = (Ynew + _adj(Ynew)) / 2

            broken = ~(
                np.all(np.isfinite(state.X.reshape(nb, -1)), axis=-1)
                & np.all(np.isfinite(state.Y.reshape(nb, -1).real), axis=-1)
                & np.all(np.isfinite(state.Y.reshape(nb, -1).imag), axis=-1)
            )
            if np.any(broken):
                finalize(broken, _ST_MAXITER, it)

    if state.ids.size:
        finalize(np.ones(state.ids.size, dtype=bool), _ST_MAXITER, settings.max_iterations)

    objective = np.sum(c * out_X, axis=(1, 2))
    return (
        _vtoh(out_X),
        objective,
        out_nu * eq_rhs,
        out_status,
        out_iter,
        out_gap,
        out_Y,
        out_nu,
    )


def _feasible_identity_start(P: np.ndarray, aeq: np.ndarray, eq_rhs: float):
    """Strictly feasible start t * (I, ..., I) when the weights allow it.

    Works whenever every block has a positive weight sum and the equality
    functional does not vanish on the identity stack (true for the
    steering program and for most well-posed instances); returns None
    otherwise, in which case the solver falls back to an infeasible start.
    """
    row_sums = P.sum(axis=1)
    if np.min(row_sums) <= 0:
        return None
    a_on_identity = float(np.sum(aeq[:, 0])) * _SQRT2  # sum of tr(A_s)
    if abs(a_on_identity) < 1e-12:
        return None
    t = eq_rhs / a_on_identity
    if t <= 0:
        return None
    S = P.shape[1]
    return np.broadcast_to(t * np.eye(2, dtype=complex), (S, 2, 2))


def _null_space(P: np.ndarray):
    """Orthonormal basis of ker(P) over the slot axis, or None if trivial."""
    _, svals, vt = np.linalg.svd(P, full_matrices=True)
    rank = int(np.sum(svals > 1e-12 * max(1.0, svals[0] if svals.size else 0.0)))
    if rank == P.shape[1]:
        return None
    return vt[rank:].T.copy()


def _solve_or_flag(H, rhs):
    """Batched linear solve; on failure flag the singular instances.

    Returns (solution, None) normally, or (None, bad_mask) when at least
    one instance in the batch has a singular Newton system.
    """
    try:
        return np.linalg.solve(H, rhs), None
    except np.linalg.LinAlgError:
        pass
    bad = np.zeros(H.shape[0], dtype=bool)
    for i in range(H.shape[0]):
        try:
            np.linalg.solve(H[i], rhs[i])
        except np.linalg.LinAlgError:
            bad[i] = True
    if not np.any(bad):
        bad[:] = True  # batch failed for an unidentified reason; give up on it
    return None, bad


def ip_solve(
    weights: np.ndarray,
    cost_mats: np.ndarray,
    eq_mats: np.ndarray,
    eq_rhs: float = 1.0,
    settings: SdpSettings | None = None,
    x0_mats: np.ndarray | None = None,
) -> IpSolution:
    """Solve a small structured SDP over Hermitian 2x2 matrix variables.

    The problem has S matrix variables F_s and L linear matrix inequality
    blocks, each block a weighted sum of the variables:

        min  sum_s tr(cost_mats[s] F_s)
        s.t. sum_s weights[l, s] F_s >= 0   for l = 0..L-1,
             sum_s tr(eq_mats[s] F_s) = eq_rhs.

    ``weights`` has shape (L, S); ``cost_mats`` and ``eq_mats`` have shape
    (S, 2, 2) and must be Hermitian. Pass ``x0_mats`` to warm start from a
    strictly feasible point (the steering program has an obvious one).

    Returns an :class:`IpSolution`; ``status`` is ``"optimal"`` when the
    duality gap fell below ``settings.tolerance`` with small residuals, and
    ``"max_iterations"`` if the iteration cap was reached first (callers
    should treat that as inconclusive).
    """
    settings = settings or SdpSettings()
    P = np.asarray(weights, dtype=float)
    if P.ndim != 2:
        raise DomainError("weights must be a 2-d (blocks x slots) array")
    L_blocks, S = P.shape
    if L_blocks > STRATEGY_LIMIT:
        raise SizeError(f"{L_blocks} blocks exceeds the {STRATEGY_LIMIT} guard")
    cost_mats = np.asarray(cost_mats, dtype=complex)
    eq_mats = np.asarray(eq_mats, dtype=complex)
    if cost_mats.shape != (S, 2, 2) or eq_mats.shape != (S, 2, 2):
        raise DomainError("cost and equality matrices must have shape (S, 2, 2)")
    if np.linalg.norm(_htov(eq_mats)) == 0:
        if eq_rhs != 0:
            return IpSolution(
                matrices=np.zeros((S, 2, 2), dtype=complex),
                objective=np.nan,
                dual_objective=np.nan,
                status=INFEASIBLE,
                iterations=0,
                gap=np.nan,
                dual_blocks=np.zeros((L_blocks, 2, 2), dtype=complex),
                dual_equality=0.0,
            )
        raise DomainError("equality constraint is identically zero")

    mats, obj, dobj, status, iters, gap, dual, dual_eq = _ip_solve_batch(
        P, cost_mats[None], eq_mats, eq_rhs, settings, x0=x0_mats
    )
    status_str = OPTIMAL if status[0] == _ST_OPTIMAL else MAX_ITERATIONS
    return IpSolution(
        matrices=mats[0],
        objective=float(obj[0]),
        dual_objective=float(dobj[0]),
        status=status_str,
        iterations=int(iters[0]),
        gap=float(gap[0]),
        dual_blocks=dual[0],
        dual_equality=float(dual_eq[0]),
    )


def _steering_problem(m: int):
    """Shared weights, equality matrices and interior point for m settings."""
    P = _strategy_weights(m)
    S = 2 * m
    eq = np.broadcast_to(2 ** (m - 1) * np.eye(2, dtype=complex), (S, 2, 2))
    x0 = np.broadcast_to(np.eye(2, dtype=complex) / (m * 2 ** (m + 1)), (S, 2, 2))
    return P, eq, x0


def solve_steering_sdp(asm: Assemblage, settings: SdpSettings | None = None) -> SteeringWitness:
    """Optimal steering witness for an assemblage with two-outcome measurements.

    Returns the witness matrices F indexed [A, a] together with the SDP
    optimum. ``objective < 0`` (in practice: below
    ``settings.steerable_threshold``) certifies steerability for this
    measurement set; a non-negative optimum means a local hidden state
    model exists for it.
    """
    return solve_steering_sdp_many([asm], settings)[0]


# Upper bound on (batch size x blocks) per solver call, to keep peak
# memory flat when many instances are pooled.
_MAX_BATCH_BLOCKS = 100_000


def solve_steering_sdp_many(
    assemblages, settings: SdpSettings | None = None
) -> list[SteeringWitness]:
    """Solve the witness SDP for several same-size assemblages in batches."""
    settings = settings or SdpSettings()
    if not assemblages:
        return []
    m = assemblages[0].n_measurements
    if any(a.n_measurements != m for a in assemblages):
        raise DomainError("all assemblages in a batch must share the measurement count")
    P, eq, x0 = _steering_problem(m)
    max_batch = max(1, _MAX_BATCH_BLOCKS // P.shape[0])
    out = []
    for start in range(0, len(assemblages), max_batch):
        group = assemblages[start : start + max_batch]
        cost = np.stack([a.sigma.reshape(2 * m, 2, 2) for a in group])
        mats, obj, _, status, _, _, _, _ = _ip_solve_batch(P, cost, eq, 1.0, settings, x0=x0)
        for i in range(len(group)):
            st = OPTIMAL if status[i] == _ST_OPTIMAL else MAX_ITERATIONS
            out.append(
                SteeringWitness(F=mats[i].reshape(m, 2, 2, 2), objective=float(obj[i]), status=st)
            )
    return out


# Trials are solved in a small first batch (which usually already exposes
# clearly steerable states) followed by one large batch for the rest.
_FIRST_CHUNK = 25


def _trial_chunks(trials: int):
    first = min(_FIRST_CHUNK, trials)
    yield 0, first
    if trials > first:
        yield first, trials


def label_states(
    states,
    m: int,
    trials: int = 100,
    settings: SdpSettings | None = None,
    rng_seeds=None,
) -> list[int]:
    """Label several states at once, pooling all their SDP trials.

    Produces exactly the labels :func:`label_state` would assign state by
    state with the matching seeds; pooling the trials into large solver
    batches just amortizes the per-iteration overhead.
    """
    if rng_seeds is None:
        rng_seeds = list(range(len(states)))
    if len(rng_seeds) != len(states):
        raise DomainError("need one seed per state")
    if m < 1:
        raise DomainError(f"measurement count must be >= 1, got {m}")
    if trials < 1:
        raise DomainError(f"trial count must be >= 1, got {trials}")
    settings = settings or SdpSettings()
    seed_children = []
    for seed in rng_seeds:
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        seed_children.append(ss.spawn(trials))

    labels = [0] * len(states)
    pending = list(range(len(states)))
    for start, stop in _trial_chunks(trials):
        if not pending:
            break
        asms = []
        owners = []
        for idx in pending:
            for child in seed_children[idx][start:stop]:
                asms.append(assemblage(states[idx], random_measurement_set(m, child)))
                owners.append(idx)
        witnesses = solve_steering_sdp_many(asms, settings)
        negative = set()
        for owner, witness in zip(owners, witnesses):
            if witness.status == OPTIMAL and witness.objective < settings.steerable_threshold:
                negative.add(owner)
        for idx in negative:
            labels[idx] = -1
        pending = [idx for idx in pending if idx not in negative]
    for idx in pending:
        labels[idx] = +1
    return labels


def label_state(
    state: TwoQubitState,
    m: int,
    trials: int = 100,
    settings: SdpSettings | None = None,
    rng_seed: int = 0,
) -> int:
    """Label a state -1 (steerable) or +1 by running the SDP on random
    measurement sets.

    Up to ``trials`` independent measurement sets of size ``m`` are drawn;
    the state is labeled -1 as soon as one witness objective falls below
    ``settings.steerable_threshold`` and +1 if none does. Inconclusive
    solves (iteration cap) count as non-negative. Deterministic per seed;
    trials are solved in chunks so the batched solver can amortize work,
    which leaves the resulting label unchanged.
    """
    if m < 1:
        raise DomainError(f"measurement count must be >= 1, got {m}")
    if trials < 1:
        raise DomainError(f"trial count must be >= 1, got {trials}")
    settings = settings or SdpSettings()
    if not isinstance(rng_seed, np.random.SeedSequence):
        rng_seed = np.random.SeedSequence(rng_seed)
    children = rng_seed.spawn(trials)
    for start, stop in _trial_chunks(trials):
        asms = [
            assemblage(state, random_measurement_set(m, child))
            for child in children[start:stop]
        ]
        for witness in solve_steering_sdp_many(asms, settings):
            if witness.status == OPTIMAL and witness.objective < settings.steerable_threshold:
                return -1
    return +1


def witness_to_dict(
    witness: SteeringWitness,
    ms: MeasurementSet | None = None,
    seed: int | None = None,
) -> dict:
    """JSON-ready dump of a witness: per-(a, A) matrices, objective, status."""
    out = {
        "objective": float(witness.objective),
        "status": witness.status,
        "F_re": witness.F.real.tolist(),
        "F_im": witness.F.imag.tolist(),
        "bloch_vectors": ms.bloch_vectors().tolist() if ms is not None else None,
        "seed": seed,
    }
    return out


def save_witness(witness: SteeringWitness, path, ms=None, seed=None):
    with open(path, "w") as fh:
        json.dump(witness_to_dict(witness, ms=ms, seed=seed), fh)
