import numpy as np
import pytest
from scipy.optimize import linprog

from steerml.errors import DomainError, SizeError
from steerml.qstate import (
    TwoQubitState,
    WernerParams,
    assemblage,
    random_density_matrix,
    random_measurement_set,
    werner_state,
)
from steerml.sdp_steer import (
    INFEASIBLE,
    MAX_ITERATIONS,
    OPTIMAL,
    SdpSettings,
    _steering_problem,
    enumerate_strategies,
    ip_solve,
    label_state,
    label_states,
    solve_steering_sdp,
    solve_steering_sdp_many,
    witness_to_dict,
)

from oracles import cvxpy_steering_value

I2 = np.eye(2, dtype=complex)


def random_product_state(rng):
    a = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    rho_a = a @ a.conj().T
    rho_a /= np.trace(rho_a).real
    b = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    rho_b = b @ b.conj().T
    rho_b /= np.trace(rho_b).real
    return TwoQubitState(np.kron(rho_a, rho_b))


class TestStrategyTable:
    def test_m1(self):
        table = enumerate_strategies(1, 2).table
        assert table.tolist() == [[0], [1]]

    def test_m2(self):
        table = enumerate_strategies(2, 2).table
        assert table.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]

    def test_m8_all_distinct(self):
        table = enumerate_strategies(8, 2).table
        assert table.shape == (256, 8)
        assert len({row.tobytes() for row in table}) == 256

    def test_overflow_guard(self):
        with pytest.raises(SizeError):
            enumerate_strategies(17, 2)

    def test_q3(self):
        table = enumerate_strategies(2, 3).table
        assert table.shape == (9, 2)
        assert len({row.tobytes() for row in table}) == 9


class TestIpSolve:
    def test_trivial_trace_problem(self):
        # min tr(F) s.t. F >= 0, tr(F) = 1: every feasible point scores 1.
        sol = ip_solve(np.array([[1.0]]), np.array([I2]), np.array([I2]), 1.0)
        assert sol.status == OPTIMAL
        assert sol.objective == pytest.approx(1.0, abs=1e-7)

    def test_diagonal_instance_matches_lp(self):
        # All data diagonal: a diagonal optimum exists, so the program
        # collapses to a linear program over the diagonal entries, solved
        # independently here with scipy's LP solver.
        rng = np.random.default_rng(5)
        for trial in range(10):
            S = 3
            L = 5
            weights = rng.integers(0, 2, size=(L, S)).astype(float)
            weights[np.sum(weights, axis=1) == 0, 0] = 1.0
            cost_diag = rng.standard_normal((S, 2))
            eq_diag = np.abs(rng.standard_normal((S, 2))) + 0.2
            cost = np.stack([np.diag(row).astype(complex) for row in cost_diag])
            eq = np.stack([np.diag(row).astype(complex) for row in eq_diag])

            # LP over f[s, d] >= coupling: block l, diag d: sum_s w[l,s] f[s,d] >= 0
            n = 2 * S
            A_ub = np.zeros((2 * L, n))
            for l in range(L):
                for d in range(2):
                    A_ub[2 * l + d, d::2] = -weights[l]
            c_lp = cost_diag.reshape(-1)
            a_lp = eq_diag.reshape(-1)
            res = linprog(
                c_lp,
                A_ub=A_ub,
                b_ub=np.zeros(2 * L),
                A_eq=a_lp[None, :],
                b_eq=[1.0],
                bounds=[(None, None)] * n,
                method="highs",
            )
            if not res.success:
                continue  # unbounded draw; not a valid comparison instance
            sol = ip_solve(weights, cost, eq, 1.0)
            assert sol.status == OPTIMAL
            assert sol.objective == pytest.approx(res.fun, abs=1e-8)

    def test_complementary_slackness_random_instance(self):
        rng = np.random.default_rng(8)
        for _ in range(10):
            state = random_density_matrix(rng)
            ms = random_measurement_set(3, rng)
            asm = assemblage(state, ms)
            P, eq, x0 = _steering_problem(3)
            cost = asm.sigma.reshape(6, 2, 2)
            sol = ip_solve(P, cost, eq, 1.0, x0_mats=x0)
            assert sol.status == OPTIMAL
            # <Z, Y> with Z the primal slack blocks and Y the duals.
            slack = np.einsum("ls,spq->lpq", P, sol.matrices)
            comp = sum(
                np.trace(slack[l] @ sol.dual_blocks[l]).real for l in range(P.shape[0])
            )
            assert abs(comp) <= 1e-6

    def test_unbounded_objective_rejected(self):
        # Objective with weight along the strategy-table null space.
        P, eq, x0 = _steering_problem(2)
        cost = np.stack([I2, I2, -I2, -I2])
        with pytest.raises(DomainError):
            ip_solve(P, cost, eq, 1.0)

    def test_zero_equality_infeasible(self):
        zero = np.zeros((1, 2, 2), dtype=complex)
        sol = ip_solve(np.array([[1.0]]), np.array([I2]), zero, 1.0)
        assert sol.status == INFEASIBLE


class TestSteeringSdp:
    def test_maximally_mixed_not_steerable(self, maximally_mixed):
        for m, seed in ((1, 0), (2, 1), (3, 2)):
            asm = assemblage(maximally_mixed, random_measurement_set(m, seed))
            witness = solve_steering_sdp(asm)
            assert witness.status == OPTIMAL
            assert witness.objective >= -1e-7

    def test_bell_zx_certifies_steering(self, bell_state, zx_measurements):
        asm = assemblage(bell_state, zx_measurements)
        witness = solve_steering_sdp(asm)
        assert witness.status == OPTIMAL
        assert witness.objective < -1e-3
        ref = cvxpy_steering_value(asm)
        assert witness.objective == pytest.approx(ref, abs=1e-6)

    def test_werner_below_two_measurement_threshold(self):
        # p = 0.6 < 1/sqrt(2): no pair of projective measurements detects
        # steering; sweep 1000 random pairs.
        state = werner_state(WernerParams(p=0.6, xi=np.pi / 4))
        rng = np.random.default_rng(31)
        asms = [
            assemblage(state, random_measurement_set(2, rng)) for _ in range(1000)
        ]
        witnesses = solve_steering_sdp_many(asms)
        objs = [w.objective for w in witnesses if w.status == OPTIMAL]
        assert len(objs) >= 990
        assert min(objs) >= -1e-6

    def test_matches_generic_formulation(self):
        rng = np.random.default_rng(77)
        for _ in range(12):
            m = int(rng.integers(1, 5))
            state = random_density_matrix(rng)
            asm = assemblage(state, random_measurement_set(m, rng))
            witness = solve_steering_sdp(asm)
            assert witness.status == OPTIMAL
            assert witness.objective == pytest.approx(
                cvxpy_steering_value(asm), abs=1e-6
            )

    def test_witness_feasibility_invariants(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            m = int(rng.integers(1, 5))
            state = random_density_matrix(rng)
            asm = assemblage(state, random_measurement_set(m, rng))
            witness = solve_steering_sdp(asm)
            assert witness.status == OPTIMAL
            table = enumerate_strategies(m, 2).table
            total = np.zeros((2, 2), dtype=complex)
            for lam_row in table:
                block = sum(witness.F[A, lam_row[A]] for A in range(m))
                assert np.min(np.linalg.eigvalsh(block)) >= -1e-7
                total += block
            assert abs(np.trace(total).real - 1) <= 1e-7
            # objective recomputes from the returned witness
            recomputed = sum(
                np.trace(witness.F[A, a] @ asm.sigma[A, a]).real
                for A in range(m)
                for a in range(2)
            )
            assert abs(recomputed - witness.objective) <= 1e-7

    def test_monotone_in_measurements(self):
        # Any superset of measurements certifies at least as strongly.
        rng = np.random.default_rng(19)
        for _ in range(50):
            state = random_density_matrix(rng)
            big = random_measurement_set(3, rng)
            small_ms = type(big)(big.measurements[:2])
            obj_small = solve_steering_sdp(assemblage(state, small_ms)).objective
            obj_big = solve_steering_sdp(assemblage(state, big)).objective
            assert obj_big <= obj_small + 1e-7

    def test_scale_covariance(self):
        # Doubling the assemblage doubles the optimum: the feasible set of
        # the witness program does not depend on the cost matrices.
        rng = np.random.default_rng(4)
        P, eq, x0 = _steering_problem(2)
        for _ in range(20):
            state = random_density_matrix(rng)
            asm = assemblage(state, random_measurement_set(2, rng))
            cost = asm.sigma.reshape(4, 2, 2)
            base = ip_solve(P, cost, eq, 1.0, x0_mats=x0)
            scaled = ip_solve(P, 2.0 * cost, eq, 1.0, x0_mats=x0)
            assert base.status == OPTIMAL and scaled.status == OPTIMAL
            assert scaled.objective == pytest.approx(2.0 * base.objective, abs=1e-6)


class TestLabeling:
    def test_maximally_mixed_positive(self, maximally_mixed):
        assert label_state(maximally_mixed, 2, trials=100, rng_seed=0) == +1

    def test_bell_negative(self, bell_state):
        for seed in range(5):
            assert label_state(bell_state, 2, trials=100, rng_seed=seed) == -1

    def test_weak_werner_positive_even_many_measurements(self):
        state = werner_state(WernerParams(p=0.3, xi=np.pi / 4))
        assert label_state(state, 8, trials=100, rng_seed=1) == +1

    def test_deterministic(self):
        state = random_density_matrix(55)
        a = label_state(state, 3, trials=60, rng_seed=9)
        b = label_state(state, 3, trials=60, rng_seed=9)
        assert a == b

    def test_product_states_sound(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            state = random_product_state(rng)
            for m in (2, 3):
                assert label_state(state, m, trials=50, rng_seed=int(rng.integers(1 << 30))) == +1

    def test_batch_matches_single(self):
        states = [random_density_matrix(k) for k in range(12)]
        seeds = list(range(300, 312))
        batch = label_states(states, 2, trials=50, rng_seeds=seeds)
        singles = [label_state(s, 2, trials=50, rng_seed=sd) for s, sd in zip(states, seeds)]
        assert batch == singles

    def test_invalid_counts(self):
        state = random_density_matrix(1)
        with pytest.raises(DomainError):
            label_state(state, 0)
        with pytest.raises(DomainError):
            label_state(state, 2, trials=0)


class TestWitnessDump:
    def test_dump_round_trips_via_json(self, bell_state, zx_measurements, tmp_path):
        import json

        asm = assemblage(bell_state, zx_measurements)
        witness = solve_steering_sdp(asm)
        payload = witness_to_dict(witness, ms=zx_measurements, seed=7)
        text = json.dumps(payload)
        back = json.loads(text)
        assert back["status"] == OPTIMAL
        assert back["seed"] == 7
        F = np.asarray(back["F_re"]) + 1j * np.asarray(back["F_im"])
        assert np.allclose(F, witness.F, atol=1e-15)
        assert np.asarray(back["bloch_vectors"]).shape == (2, 3)


class TestSettings:
    def test_validation(self):
        with pytest.raises(DomainError):
            SdpSettings(tolerance=0.0)
        with pytest.raises(DomainError):
            SdpSettings(steerable_threshold=1e-6)
        with pytest.raises(DomainError):
            SdpSettings(max_iterations=0)

    def test_max_iterations_inconclusive(self, bell_state, zx_measurements):
        asm = assemblage(bell_state, zx_measurements)
        witness = solve_steering_sdp(asm, SdpSettings(max_iterations=2))
        assert witness.status == MAX_ITERATIONS
