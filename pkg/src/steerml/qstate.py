"""Two-qubit states, measurements, assemblages and feature vectors.

Conventions: qubit A is the first tensor factor, Pauli indices run 1..3
as (x, y, z), and all density matrices are plain 4x4 complex ndarrays
wrapped in :class:`TwoQubitState`. Every operation is a pure function of
its inputs; randomness always enters through an explicit seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

HERMITICITY_TOL = 1e-12
TRACE_TOL = 1e-12
PSD_TOL = 1e-10

I2 = np.eye(2, dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.stack([SIGMA_X, SIGMA_Y, SIGMA_Z])


def _rng(seed) -> np.random.Generator:
    """Accept an int seed, a SeedSequence or an existing Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class TwoQubitState:
    """A 4x4 Hermitian, unit-trace, positive semidefinite density matrix."""

    rho: np.ndarray

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        if rho.shape != (4, 4):
            raise DomainError(f"density matrix must be 4x4, got {rho.shape}")
        if np.max(np.abs(rho - rho.conj().T)) > HERMITICITY_TOL:
            raise DomainError("density matrix is not Hermitian")
        if abs(np.trace(rho).real - 1.0) > TRACE_TOL or abs(np.trace(rho).imag) > TRACE_TOL:
            raise DomainError("density matrix trace differs from 1")
        if np.min(np.linalg.eigvalsh(rho)) < -PSD_TOL:
            raise DomainError("density matrix has a negative eigenvalue")
        object.__setattr__(self, "rho", rho)


@dataclass(frozen=True)
class PauliDecomposition:
    """Bloch vectors of both parties plus the 3x3 correlation matrix."""

    r: np.ndarray
    s: np.ndarray
    t: np.ndarray


@dataclass(frozen=True)
class Measurement:
    """A projective qubit measurement along a unit Bloch vector.

    The binary effects are M0 = (I + n.sigma)/2 and M1 = (I - n.sigma)/2.
    """

    bloch: np.ndarray
    effects: np.ndarray = field(init=False)

    def __post_init__(self):
        n = np.asarray(self.bloch, dtype=float)
        if n.shape != (3,):
            raise DomainError("Bloch vector must have 3 components")
        if abs(np.linalg.norm(n) - 1.0) > 1e-10:
            raise DomainError("Bloch vector must have unit norm")
        ns = np.einsum("i,ijk->jk", n, PAULIS)
        object.__setattr__(self, "bloch", n)
        object.__setattr__(self, "effects", np.stack([(I2 + ns) / 2, (I2 - ns) / 2]))


@dataclass(frozen=True)
class MeasurementSet:
    """An ordered collection of projective measurements for Alice."""

    measurements: tuple

    def __post_init__(self):
        if len(self.measurements) < 1:
            raise DomainError("a measurement set needs at least one measurement")
        object.__setattr__(self, "measurements", tuple(self.measurements))

    def __len__(self):
        return len(self.measurements)

    def bloch_vectors(self) -> np.ndarray:
        return np.stack([m.bloch for m in self.measurements])


@dataclass(frozen=True)
class Assemblage:
    """Bob's sub-normalized conditional states sigma[a|A], shape (m, 2, 2, 2).

    Index order is (measurement A, outcome a, row, col). The no-signaling
    sum over outcomes equals Bob's reduced state for every A.
    """

    sigma: np.ndarray

    def __post_init__(self):
        sig = np.asarray(self.sigma, dtype=complex)
        if sig.ndim != 4 or sig.shape[1:] != (2, 2, 2):
            raise DomainError(f"assemblage must have shape (m, 2, 2, 2), got {sig.shape}")
        if np.max(np.abs(sig - sig.conj().transpose(0, 1, 3, 2))) > PSD_TOL:
            raise DomainError("assemblage members are not Hermitian")
        eigs = np.linalg.eigvalsh(sig.reshape(-1, 2, 2))
        if np.min(eigs) < -PSD_TOL:
            raise DomainError("assemblage member has a negative eigenvalue")
        totals = sig.sum(axis=1)
        if np.max(np.abs(totals - totals[0])) > PSD_TOL:
            raise DomainError("assemblage violates no-signaling")
        if abs(np.trace(totals[0]).real - 1.0) > PSD_TOL:
            raise DomainError("assemblage outcome sums are not unit trace")
        object.__setattr__(self, "sigma", sig)

    @property
    def n_measurements(self) -> int:
        return self.sigma.shape[0]

    def reduced_state(self) -> np.ndarray:
        """Bob's marginal, the common value of sum_a sigma[a|A]."""
        return self.sigma.sum(axis=1)[0]


@dataclass(frozen=True)
class FeatureVector9:
    """The nine correlation features [tau_11, tau_12, ..., tau_33]."""

    tau: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        if tau.shape != (9,):
            raise DomainError("feature vector must have 9 entries")
        if np.max(np.abs(tau)) > 1 + 1e-10:
            raise DomainError("feature entries must lie in [-1, 1]")
        object.__setattr__(self, "tau", tau)


@dataclass(frozen=True)
class WernerParams:
    """Mixing weight p in [0, 1] and entanglement angle xi in radians."""

    p: float
    xi: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise DomainError(f"Werner weight p must be in [0, 1], got {self.p}")


def random_density_matrix(rng_seed) -> TwoQubitState:
    """Draw a state from the Ginibre (Hilbert-Schmidt) ensemble.

    rho = G G^dag / tr(G G^dag) with G a 4x4 matrix of i.i.d. standard
    complex Gaussians. Full rank with probability one, deterministic per
    seed.
    """
    rng = _rng(rng_seed)
    g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    rho = g @ g.conj().T
    rho /= np.trace(rho).real
    rho = (rho + rho.conj().T) / 2
    return TwoQubitState(rho)


def pauli_decompose(state: TwoQubitState) -> PauliDecomposition:
    """Extract r_i = tr(rho sigma_i x I), s_i = tr(rho I x sigma_i), t_ij."""
    rho = state.rho
    r = np.array([np.trace(rho @ np.kron(p, I2)).real for p in PAULIS])
    s = np.array([np.trace(rho @ np.kron(I2, p)).real for p in PAULIS])
    t = np.array([[np.trace(rho @ np.kron(pi, pj)).real for pj in PAULIS] for pi in PAULIS])
    return PauliDecomposition(r=r, s=s, t=t)


def pauli_reconstruct(decomp: PauliDecomposition) -> TwoQubitState:
    """Rebuild the density matrix from its Pauli coefficients."""
    rho = np.eye(4, dtype=complex)
    for i in range(3):
        rho += decomp.r[i] * np.kron(PAULIS[i], I2)
        rho += decomp.s[i] * np.kron(I2, PAULIS[i])
        for j in range(3):
            rho += decomp.t[i, j] * np.kron(PAULIS[i], PAULIS[j])
    return TwoQubitState(rho / 4)


def partial_trace_alice(state: TwoQubitState) -> np.ndarray:
    """Bob's reduced density matrix rho_B = tr_A(rho_AB)."""
    return np.einsum("jajb->ab", state.rho.reshape(2, 2, 2, 2))


def psd_sqrt(mat: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian PSD matrix, clamping eigenvalues at 0."""
    vals, vecs = np.linalg.eigh(mat)
    vals = np.sqrt(np.maximum(vals, 0.0))
    return (vecs * vals) @ vecs.conj().T


def feature_vector(state: TwoQubitState) -> FeatureVector9:
    """Correlation features of rho_0 = (I x sqrt(rho_B)) rho (I x sqrt(rho_B)).

    Returns tau_kl = tr(rho_0 (sigma_k x sigma_l)) flattened row-major as
    [tau_11, ..., tau_33]. tr(rho_0) equals tr(rho_B^2), so the features
    of weakly-correlated states shrink with the purity of Bob's marginal.
    """
    root_b = np.kron(I2, psd_sqrt(partial_trace_alice(state)))
    rho0 = root_b @ state.rho @ root_b
    tau = np.array(
        [np.trace(rho0 @ np.kron(pk, pl)).real for pk in PAULIS for pl in PAULIS]
    )
    return FeatureVector9(tau)


def werner_state(params: WernerParams) -> TwoQubitState:
    """Generalized Werner state p |psi><psi| + (1-p) rho_A x I/2.

    |psi> = cos(xi)|00> + sin(xi)|11> and rho_A is Alice's marginal of
    |psi><psi|.
    """
    c, s = np.cos(params.xi), np.sin(params.xi)
    psi = np.array([c, 0, 0, s], dtype=complex)
    proj = np.outer(psi, psi.conj())
    rho_a = np.diag([c**2, s**2]).astype(complex)
    rho = params.p * proj + (1 - params.p) * np.kron(rho_a, I2 / 2)
    return TwoQubitState(rho)


def werner_unsteerable_analytic(params: WernerParams) -> bool:
    """Closed-form criterion: unsteerable (A to B, projective measurements)
    iff cos^2(2 xi) >= (2p - 1) / ((2 - p) p^3). Product case p = 0 is
    trivially unsteerable.
    """
    p = params.p
    if p == 0.0:
        return True
    return np.cos(2 * params.xi) ** 2 >= (2 * p - 1) / ((2 - p) * p**3)


def random_measurement_set(m: int, rng_seed) -> MeasurementSet:
    """Draw m projective measurements with Bloch vectors uniform on the sphere.

    Each direction is a normalized 3-vector of i.i.d. Gaussians, which is
    exactly rotation invariant.
    """
    if m < 1:
        raise DomainError(f"measurement count must be >= 1, got {m}")
    rng = _rng(rng_seed)
    measurements = []
    while len(measurements) < m:
        v = rng.standard_normal(3)
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            continue
        measurements.append(Measurement(v / norm))
    return MeasurementSet(tuple(measurements))


def assemblage(state: TwoQubitState, ms: MeasurementSet) -> Assemblage:
    """Conditional states sigma[a|A] = tr_A((M_A^a x I) rho) for Bob."""
    rho4 = state.rho.reshape(2, 2, 2, 2)
    sigma = np.empty((len(ms), 2, 2, 2), dtype=complex)
    for ai, meas in enumerate(ms.measurements):
        for a in range(2):
            sigma[ai, a] = np.einsum("jl,lbjc->bc", meas.effects[a], rho4)
    return Assemblage(sigma)


def state_to_dict(state: TwoQubitState) -> dict:
    return {"rho_re": state.rho.real.tolist(), "rho_im": state.rho.imag.tolist()}


def state_from_dict(data: dict) -> TwoQubitState:
    rho = np.asarray(data["rho_re"], dtype=float) + 1j * np.asarray(data["rho_im"], dtype=float)
    return TwoQubitState(rho)


def save_state(state: TwoQubitState, path):
    with open(path, "w") as fh:
        json.dump(state_to_dict(state), fh)


def load_state(path) -> TwoQubitState:
    with open(path) as fh:
        return state_from_dict(json.load(fh))


def feature_csv_row(fv: FeatureVector9) -> str:
    """One feature vector as 9 comma-separated floats."""
    return ",".join(repr(float(x)) for x in fv.tau)
