import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from abqaoa_sat.diagnostics import (
    annealing_entropy,
    bipartitions,
    diagnostic_rows,
    eigenspace_weights,
    entanglement_entropy_avg,
    entropy_bits,
    infidelity,
    max_average_entropy,
    participation_ratio,
    residual_energy,
    sat_probability,
    snapshot_iteration,
    success_probability,
    trajectory_diagnostics,
)
from abqaoa_sat.sat import Formula, brute_force_ground, generate_instance
from abqaoa_sat.statevector import build_cost_diagonal, build_step_unitary, prepare_initial_state
from abqaoa_sat.variational import OptimizerConfig, run

SINGLE = Formula(3, ((0, 1, 2),))


def random_state(n, rng):
    v = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    return v / np.linalg.norm(v)


def haar_unitary(d, rng):
    q, r = np.linalg.qr(rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d)))
    return q * (np.diag(r) / np.abs(np.diag(r)))


def entropy_oracle(psi, a, n):
    """Entropy of subsystem ``a`` from rho_A[i, j] = sum_rest psi[i, rest] psi[j, rest]^*, by loops."""
    rest = [q for q in range(n) if q not in a]

    def index(sub, other):
        z = 0
        for q, bit in zip(a, sub):
            z |= bit << q
        for q, bit in zip(rest, other):
            z |= bit << q
        return z

    subs = list(itertools.product((0, 1), repeat=len(a)))
    others = list(itertools.product((0, 1), repeat=len(rest)))
    rho = np.zeros((len(subs), len(subs)), dtype=complex)
    for i, si in enumerate(subs):
        for j, sj in enumerate(subs):
            rho[i, j] = sum(psi[index(si, o)] * np.conj(psi[index(sj, o)]) for o in others)
    return entropy_bits(np.clip(np.linalg.eigvalsh(rho), 0, None))


class TestScalars:
    def test_residual_energy(self):
        g = brute_force_ground(SINGLE)
        assert residual_energy(0.0, g) == 0
        uniform = np.full(8, 1 / np.sqrt(8))
        assert residual_energy((uniform**2) @ build_cost_diagonal(SINGLE), SINGLE) == pytest.approx(1.0)

    def test_infidelity(self):
        g = brute_force_ground(SINGLE)
        basis = np.zeros(8, dtype=complex)
        basis[1] = 1
        assert infidelity(basis, g) == 0
        uniform = np.full(8, 1 / np.sqrt(8), dtype=complex)
        assert infidelity(uniform, g) == pytest.approx(1 - 3 / 8)
        basis = np.zeros(8, dtype=complex)
        basis[0] = 1
        assert infidelity(basis, g) == 1
        assert infidelity(basis, [0]) == 0

    def test_participation_ratio(self):
        e = np.zeros(1024)
        e[5] = 1
        assert participation_ratio(e) == 1
        assert participation_ratio(np.full(1024, 1 / 32)) == pytest.approx(1024)
        two = np.zeros(8)
        two[[1, 6]] = 1 / np.sqrt(2)
        assert participation_ratio(two) == pytest.approx(2)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_participation_bounds(self, n, seed):
        pr = participation_ratio(random_state(n, np.random.default_rng(seed)))
        assert 1 - 1e-12 <= pr <= 2**n + 1e-9


class TestEntanglement:
    def test_bipartition_count(self):
        for n in range(2, 9):
            assert sum(1 for _ in bipartitions(n)) == 2 ** (n - 1) - 1

    def test_max_average_n10(self):
        assert max_average_entropy(10) == pytest.approx(1930 / 511, abs=1e-12)
        assert max_average_entropy(10) == pytest.approx(3.7769, abs=1e-4)

    def test_product_state_zero(self):
        psi = prepare_initial_state(np.random.default_rng(0).normal(size=6))
        assert entanglement_entropy_avg(psi).value == pytest.approx(0, abs=1e-10)

    @pytest.mark.parametrize("n", [2, 5, 8])
    def test_ghz(self, n):
        psi = np.zeros(2**n, dtype=complex)
        psi[0] = psi[-1] = 1 / np.sqrt(2)
        res = entanglement_entropy_avg(psi)
        assert res.value == pytest.approx(1.0, abs=1e-12)
        assert res.count == 2 ** (n - 1) - 1

    def test_matches_partial_trace_oracle(self):
        n = 5
        rng = np.random.default_rng(3)
        psi = random_state(n, rng)
        vals = [entropy_oracle(psi, a, n) for a in bipartitions(n)]
        assert entanglement_entropy_avg(psi).value == pytest.approx(np.mean(vals), abs=1e-10)

    def test_asymmetric_state_uses_right_qubits(self):
        # qubits 0 and 1 in a Bell pair, the rest in |0>
        n = 4
        psi = np.zeros(16, dtype=complex)
        psi[0] = psi[3] = 1 / np.sqrt(2)
        res = entanglement_entropy_avg(psi)
        expected = [float((0 in a) != (1 in a)) for a in bipartitions(n)]
        assert res.value == pytest.approx(np.mean(expected), abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(2, 7), st.integers(0, 2**32 - 1))
    def test_bounds(self, n, seed):
        v = entanglement_entropy_avg(random_state(n, np.random.default_rng(seed))).value
        assert -1e-12 <= v <= max_average_entropy(n) + 1e-9

    def test_size_limit(self):
        with pytest.raises(ValueError):
            entanglement_entropy_avg(np.ones(2**15) / 2**7.5)


class TestAnnealing:
    def test_eigenvector_zero(self):
        rng = np.random.default_rng(0)
        u = haar_unitary(8, rng)
        _, v = np.linalg.eig(u)
        assert annealing_entropy(v[:, 2], u) == pytest.approx(0, abs=1e-9)

    def test_two_eigenvectors_one_bit(self):
        rng = np.random.default_rng(1)
        u = haar_unitary(8, rng)
        _, v = np.linalg.eig(u)
        psi = (v[:, 0] + v[:, 5]) / np.sqrt(2)
        assert annealing_entropy(psi, u) == pytest.approx(1.0, abs=1e-9)

    def test_identity_zero(self):
        rng = np.random.default_rng(2)
        f = generate_instance(4, 1, rng)
        u = build_step_unitary(0.0, 0.0, rng.normal(size=4), build_cost_diagonal(f))
        assert annealing_entropy(random_state(4, rng), u) == pytest.approx(0, abs=1e-12)

    def test_degenerate_rebasis_invariant(self):
        rng = np.random.default_rng(3)
        d = 8
        v = haar_unitary(d, rng)
        phases = np.array([0.3, 0.3, 0.3, -1.0, -1.0, 2.0, np.pi, -np.pi + 1e-10])
        u = v @ np.diag(np.exp(1j * phases)) @ v.conj().T
        psi = random_state(3, rng)
        expected = [
            np.sum(np.abs(v[:, :3].conj().T @ psi) ** 2),
            np.sum(np.abs(v[:, 3:5].conj().T @ psi) ** 2),
            np.abs(np.vdot(v[:, 5], psi)) ** 2,
            np.sum(np.abs(v[:, 6:].conj().T @ psi) ** 2),  # pi and -pi are the same phase
        ]
        np.testing.assert_allclose(sorted(eigenspace_weights(psi, u)), sorted(expected), atol=1e-9)
        # rotate inside the degenerate block: same unitary, other eigenbasis
        w = v.copy()
        w[:, :3] = v[:, :3] @ haar_unitary(3, rng)
        u2 = w @ np.diag(np.exp(1j * phases)) @ w.conj().T
        np.testing.assert_allclose(u, u2, atol=1e-12)
        assert annealing_entropy(psi, u2) == pytest.approx(entropy_bits(expected), abs=1e-9)

    def test_bounds(self):
        rng = np.random.default_rng(4)
        u = haar_unitary(16, rng)
        s = annealing_entropy(random_state(4, rng), u)
        assert 0 <= s <= 4 + 1e-9


@pytest.fixture(scope="module")
def fixture_run():
    f = generate_instance(5, 2, np.random.default_rng(0))
    cfg = OptimizerConfig(gradient="exact", samples=2, max_iter=40)
    return f, run(f, 3, "ab_qaoa", "tqa", cfg, np.random.default_rng(1))


class TestTrajectory:

    def test_snapshot_iteration(self):
        assert snapshot_iteration(0.6, 5) == 3
        assert snapshot_iteration(1.0, 7) == 7
        assert snapshot_iteration(0.0, 7) == 1
        assert snapshot_iteration(0.2, 10) == 2

    def test_series(self, fixture_run):
        f, res = fixture_run
        metrics = ("entanglement", "participation", "annealing", "infidelity", "energy")
        series = trajectory_diagnostics(f, res.record, etas=(0.5, 1.0), metrics=metrics)
        assert len(series) == 10
        for s in series:
            assert len(s.values) == 4
        ent = [s for s in series if s.metric == "entanglement"]
        assert all(s.values[0] == pytest.approx(0, abs=1e-10) for s in ent)
        ann = [s for s in series if s.metric == "annealing"]
        assert all(math.isnan(s.values[0]) for s in ann)

    def test_final_layer_matches_run(self, fixture_run):
        f, res = fixture_run
        rec = res.record
        (inf,) = trajectory_diagnostics(f, rec, etas=(1.0,), metrics=("infidelity",))
        cost = build_cost_diagonal(f)
        last = rec.state(cost, rec.n_con - 1)
        assert inf.iteration == rec.n_con
        assert inf.values[-1] == pytest.approx(infidelity(last, brute_force_ground(f)), abs=1e-12)

    def test_rows(self, fixture_run):
        f, res = fixture_run
        series = trajectory_diagnostics(f, res.record, etas=(1.0,), metrics=("participation",))
        rows = diagnostic_rows("x", "ab_qaoa", 3, f.alpha, series)
        assert [r["k"] for r in rows] == [0, 1, 2, 3]
        assert rows[0]["alpha"] == "2"

    def test_unknown_metric(self, fixture_run):
        f, res = fixture_run
        with pytest.raises(ValueError):
            trajectory_diagnostics(f, res.record, metrics=("purity",))


class TestEnsemble:
    def test_success_probability(self):
        assert success_probability([True, False], [True, False]) == 1
        assert success_probability([False, True], [True, False]) == 0
        with pytest.raises(ValueError):
            success_probability([True], [True, False])
        with pytest.raises(ValueError):
            success_probability([], [])

    def test_sat_probability(self):
        assert sat_probability([True, True, False, False]) == 0.5
        with pytest.raises(ValueError):
            sat_probability([])
