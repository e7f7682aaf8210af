"""Divided differences, n-point functions, oracles, the bound chain, Taylor probes."""

import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qimlab.errors import (
    HoodViolationError,
    InputError,
    PreconditionError,
    ResourceLimitError,
)
from qimlab.gibbs import center, make_state, perturb, reg_mean, unshifted_free_energy
from qimlab.kubo import (
    delta_ladder,
    divdiff_exp,
    estimate_chain,
    frechet_check,
    free_energy_derivative,
    kubo_n_point,
    kubo_oracle,
    kubo_quadrature,
    taylor_probe,
)
from qimlab.epsnorms import eps_norm
from qimlab.speccalc import HermitianOperator

H12 = HermitianOperator.from_array(np.diag([1.0, 2.0]))
SIGMA_X = HermitianOperator.from_array([[0.0, 1.0], [1.0, 0.0]])
P = 1.0 / (1.0 + np.exp(-1.0))


def random_hermitian(rng, d):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return HermitianOperator.from_array((g + g.conj().T) / 2)


def centered_direction(state, rng, d, scale=0.1):
    v = center(state, random_hermitian(rng, d))
    return scale * v


class TestDivdiff:
    def test_single_node(self):
        assert divdiff_exp([0.0]) == 1.0

    def test_two_nodes(self):
        assert divdiff_exp([np.log(2), 0.0]) == pytest.approx(1.0 / np.log(2), rel=1e-13)
        assert divdiff_exp([np.log(2), 0.0]) == pytest.approx(1.442695, abs=1e-6)

    def test_confluent_two_nodes(self):
        assert divdiff_exp([-1.0, -1.0]) == pytest.approx(np.exp(-1.0), rel=1e-13)
        assert divdiff_exp([-1.0, -1.0]) == pytest.approx(0.367879, abs=1e-6)

    def test_triple_confluent(self):
        x = -0.7
        assert divdiff_exp([x, x, x]) == pytest.approx(np.exp(x) / 2.0, rel=1e-12)

    def test_matches_simplex_monte_carlo(self):
        rng = np.random.default_rng(42)
        nodes = rng.uniform(-5.0, 0.0, size=4)
        e = rng.standard_exponential((10_000_000, 4))
        alphas = e / e.sum(axis=1, keepdims=True)
        vals = np.exp(alphas @ nodes)
        # uniform-simplex mean = (n-1)! * integral
        mean = vals.mean() / math.factorial(3)
        stderr = vals.std(ddof=1) / np.sqrt(vals.size) / math.factorial(3)
        assert abs(divdiff_exp(nodes) - mean) <= 5 * stderr

    @given(st.permutations([-3.0, -1.5, -0.2, -2.2]))
    @settings(max_examples=24, deadline=None)
    def test_permutation_symmetry(self, perm):
        ref = divdiff_exp([-3.0, -1.5, -0.2, -2.2])
        assert divdiff_exp(perm) == pytest.approx(ref, rel=1e-12)

    def test_confluent_continuity(self):
        base = divdiff_exp([-1.0, -1.0, -2.0])
        for h in (1e-7, 1e-9, 1e-11):
            drift = abs(divdiff_exp([-1.0, -1.0 + h, -2.0]) - base)
            assert drift <= 10 * h  # no blow-up near confluence

    def test_empty_rejected(self):
        with pytest.raises(InputError):
            divdiff_exp([])

    def test_nonfinite_rejected(self):
        with pytest.raises(InputError):
            divdiff_exp([0.0, np.inf])


def brute_force_value(state, directions):
    """Independent oracle: explicit tuple sum with scipy-expm divided differences."""
    from scipy.linalg import expm

    n = len(directions)
    u = state.rho_decomp.eigenvectors
    logp = state.log_rho_eigenvalues
    d = logp.size
    vt = [u.conj().T @ v.entries @ u for v in directions]
    total = 0.0 + 0.0j
    for idx in itertools.product(range(d), repeat=n):
        w = 1.0 + 0.0j
        for k in range(n):
            w *= vt[k][idx[k], idx[(k + 1) % n]]
        if w == 0.0:
            continue
        nodes = np.array([logp[i] for i in idx])
        if n == 1:
            dd = np.exp(nodes[0])
        else:
            block = np.diag(nodes) + np.diag(np.ones(n - 1), 1)
            dd = expm(block)[0, n - 1]
        total += w * dd
    return total * math.factorial(n - 1)


class TestKuboNPoint:
    def test_n1_is_mean(self):
        rng = np.random.default_rng(0)
        s = make_state(random_hermitian(rng, 5), 0.5)
        v = random_hermitian(rng, 5)
        res = kubo_n_point(s, [v])
        assert res.value == pytest.approx(reg_mean(s, v).mean, abs=1e-11)
        assert abs(res.imag_part) <= 1e-12

    def test_sigma_x_closed_form(self):
        s = make_state(H12, 0.5)
        res = kubo_n_point(s, [SIGMA_X, SIGMA_X])
        assert res.value == pytest.approx(2 * (2 * P - 1), rel=1e-12)
        assert res.value == pytest.approx(0.924234, abs=1e-6)

    def test_commuting_n2_is_second_moment(self):
        s = make_state(H12, 0.5)
        v = HermitianOperator.from_array(np.diag([0.3, -0.8]))
        res = kubo_n_point(s, [v, v])
        expected = float(np.trace(s.rho() @ v.entries @ v.entries).real)
        assert res.value == pytest.approx(expected, rel=1e-12)

    @pytest.mark.parametrize("n", [2, 3, 4])
    def test_matches_brute_force(self, n):
        rng = np.random.default_rng(n)
        s = make_state(random_hermitian(rng, 4), 0.5)
        dirs = [random_hermitian(rng, 4) for _ in range(n)]
        res = kubo_n_point(s, dirs)
        ref = brute_force_value(s, dirs)
        assert res.value == pytest.approx(ref.real, rel=1e-10, abs=1e-12)
        assert res.imag_part == pytest.approx(ref.imag, rel=1e-10, abs=1e-12)

    def test_backends_agree(self):
        rng = np.random.default_rng(9)
        s = make_state(random_hermitian(rng, 5), 0.5)
        dirs = [random_hermitian(rng, 5) for _ in range(3)]
        a = kubo_n_point(s, dirs, backend="numba")
        b = kubo_n_point(s, dirs, backend="numpy")
        assert a.value == pytest.approx(b.value, rel=1e-12)

    def test_real_for_equal_directions(self):
        rng = np.random.default_rng(10)
        s = make_state(random_hermitian(rng, 6), 0.5)
        v = random_hermitian(rng, 6)
        res = kubo_n_point(s, [v, v, v])
        assert abs(res.imag_part) <= 1e-10 * (1.0 + abs(res.value))

    def test_cyclic_invariance(self):
        rng = np.random.default_rng(11)
        s = make_state(random_hermitian(rng, 4), 0.5)
        dirs = [random_hermitian(rng, 4) for _ in range(3)]
        vals = []
        for shift in range(3):
            rotated = dirs[shift:] + dirs[:shift]
            res = kubo_n_point(s, rotated)
            vals.append(complex(res.value, res.imag_part))
        for v in vals[1:]:
            assert abs(v - vals[0]) <= 1e-10 * (1.0 + abs(vals[0]))

    def test_enumeration_cap(self):
        rng = np.random.default_rng(12)
        s = make_state(random_hermitian(rng, 6), 0.5)
        with pytest.raises(ResourceLimitError, match="kubo_oracle"):
            kubo_n_point(s, [random_hermitian(rng, 6)] * 4, enum_cap=100)


class TestKuboOracle:
    def test_matches_closed_form_sigma_x(self):
        s = make_state(H12, 0.5)
        res = kubo_n_point(s, [SIGMA_X, SIGMA_X])
        est = kubo_oracle(s, [SIGMA_X, SIGMA_X], samples=100_000, seed=7)
        assert abs(res.value - est.value) <= 5 * est.stderr

    def test_diagonal_integrand_is_constant(self):
        # commuting directions make the chain alpha-independent: the estimate
        # is exactly Tr rho V^2 with zero variance
        s = make_state(H12, 0.5)
        v = HermitianOperator.from_array(np.diag([1.0, -0.4]))
        est = kubo_oracle(s, [v, v], samples=2_000, seed=1)
        expected = float(np.trace(s.rho() @ v.entries @ v.entries).real)
        assert est.value == pytest.approx(expected, rel=1e-12)
        assert est.stderr <= 1e-15

    def test_stderr_shrinks_with_samples(self):
        rng = np.random.default_rng(16)
        s = make_state(random_hermitian(rng, 4), 0.5)
        dirs = [random_hermitian(rng, 4) for _ in range(2)]
        small = kubo_oracle(s, dirs, samples=2_000, seed=1)
        large = kubo_oracle(s, dirs, samples=200_000, seed=1)
        assert large.stderr < small.stderr
        closed = kubo_n_point(s, dirs)
        assert abs(large.value - closed.value) <= 5 * large.stderr

    def test_seed_determinism(self):
        rng = np.random.default_rng(13)
        s = make_state(random_hermitian(rng, 4), 0.5)
        dirs = [random_hermitian(rng, 4) for _ in range(2)]
        a = kubo_oracle(s, dirs, samples=10_000, seed=99)
        b = kubo_oracle(s, dirs, samples=10_000, seed=99)
        assert a == b

    def test_needs_two_directions(self):
        s = make_state(H12, 0.5)
        with pytest.raises(PreconditionError):
            kubo_oracle(s, [SIGMA_X], samples=100, seed=0)

    def test_backends_agree(self):
        rng = np.random.default_rng(14)
        s = make_state(random_hermitian(rng, 4), 0.5)
        dirs = [random_hermitian(rng, 4) for _ in range(3)]
        a = kubo_oracle(s, dirs, samples=5_000, seed=3, backend="numba")
        b = kubo_oracle(s, dirs, samples=5_000, seed=3, backend="numpy")
        assert a.value == pytest.approx(b.value, rel=1e-10)

    def test_attached_oracle_invariant(self):
        rng = np.random.default_rng(15)
        s = make_state(random_hermitian(rng, 4), 0.5)
        dirs = [random_hermitian(rng, 4) for _ in range(2)]
        res = kubo_n_point(s, dirs)
        full = res.with_oracle(kubo_oracle(s, dirs, samples=50_000, seed=4))
        assert full.oracle_consistent
        assert abs(full.value - full.oracle_value) <= max(
            5 * full.oracle_stderr, 1e-6 * (1 + abs(full.value)))
        blob = full.to_json_dict()
        assert blob["oracle_stderr"] > 0


class TestQuadrature:
    def test_matches_closed_form(self):
        rng = np.random.default_rng(15)
        s = make_state(random_hermitian(rng, 5), 0.5)
        dirs = [random_hermitian(rng, 5) for _ in range(2)]
        res = kubo_n_point(s, dirs)
        assert kubo_quadrature(s, dirs) == pytest.approx(res.value, rel=1e-10)

    def test_rejects_other_orders(self):
        s = make_state(H12, 0.5)
        with pytest.raises(InputError):
            kubo_quadrature(s, [SIGMA_X] * 3)


class TestFrechet:
    def test_n1_centered_vanishes(self):
        s = make_state(H12, 0.5)
        v = center(s, HermitianOperator.from_array(np.diag([1.0, 0.0])))
        fc = frechet_check(s, v, 1)
        assert abs(fc.fd) <= 1e-9
        assert fc.residual <= 1e-9

    def test_n1_uncentered_slope(self):
        s = make_state(H12, 0.5)
        v = HermitianOperator.from_array(np.diag([1.0, 0.0]))
        fc = frechet_check(s, v, 1)
        assert fc.fd == pytest.approx(-P, abs=1e-9)
        assert fc.fd == pytest.approx(-0.731059, abs=1e-6)

    def test_n2_sigma_x(self):
        s = make_state(H12, 0.5)
        fc = frechet_check(s, SIGMA_X, 2)
        assert fc.sign == 1
        assert fc.fd == pytest.approx(0.924234, abs=1e-6)
        assert fc.residual <= 1e-6 * (1.0 + abs(fc.kubo))

    def test_gauge_direction_flat(self):
        # V = cI: the free energy is linear along it, all higher derivatives 0
        s = make_state(H12, 0.5)
        v = HermitianOperator.from_array(0.2 * np.eye(2))
        fd, _ = free_energy_derivative(s, v, 2)
        assert abs(fd) <= 1e-9

    def test_uncentered_rejected_for_n2(self):
        s = make_state(H12, 0.5)
        with pytest.raises(PreconditionError):
            frechet_check(s, HermitianOperator.from_array(0.2 * np.eye(2)), 2)

    @pytest.mark.parametrize("n", [1, 2, 3])
    def test_signed_identity_random(self, n):
        rng = np.random.default_rng(20 + n)
        s = make_state(random_hermitian(rng, 5), 0.5)
        v = centered_direction(s, rng, 5)
        fc = frechet_check(s, v, n, eps=0.25)
        assert fc.residual <= 1e-6 * (1.0 + abs(fc.kubo))

    def test_n4_disconnected_residual_reported(self):
        # moment-vs-cumulant gap: residual should be large and equal 3*K2^2
        s = make_state(H12, 0.5)
        fc = frechet_check(s, SIGMA_X, 4)
        k2 = kubo_n_point(s, [SIGMA_X] * 2).value
        assert fc.residual == pytest.approx(3 * k2**2, rel=1e-2)

    def test_stencil_hood_guard(self):
        s = make_state(H12, 0.5)
        v = center(s, HermitianOperator.from_array(np.diag([3.0, -3.0])))
        with pytest.raises(HoodViolationError):
            frechet_check(s, v, 2, h=10.0)


class TestDeltaLadder:
    def test_n2(self):
        np.testing.assert_allclose(delta_ladder(2, 0.25), [0.75, 0.5, 0.75], atol=1e-15)

    def test_n3(self):
        lad = delta_ladder(3, 0.25)
        np.testing.assert_allclose(lad, [0.75, 0.75 - 1 / 6, 0.75 - 1 / 3, 0.75], atol=1e-12)
        assert lad[2] == pytest.approx(0.5 - 0.25 + 2 * 0.25 / 3, abs=1e-15)

    def test_n1_degenerate(self):
        np.testing.assert_allclose(delta_ladder(1, 0.25), [0.75, 0.75], atol=1e-15)

    @pytest.mark.parametrize("n,eps", [(2, 0.1), (4, 0.25), (6, 0.4)])
    def test_range_and_monotonicity(self, n, eps):
        lad = delta_ladder(n, eps)
        assert np.all(lad >= 0.5 - eps - 1e-15)
        assert np.all(lad <= 0.5 + eps + 1e-15)
        assert np.all(np.diff(lad[:n]) < 0)

    def test_bad_eps(self):
        with pytest.raises(InputError):
            delta_ladder(2, 0.5)


class TestEstimateChain:
    def test_alpha_integral_arithmetic_n2(self):
        s = make_state(H12, 0.5)
        ledger = estimate_chain(s, [SIGMA_X, SIGMA_X], 0.25)
        rec = next(r for r in ledger.factor_margins if r.name == "alpha-integrals")
        assert rec.rhs == pytest.approx(32.0, abs=1e-12)  # n^2 n^n / (2 eps)^(n-1)
        assert rec.detail["interior_integral"] == pytest.approx(4.0, abs=1e-12)

    def test_n1_direct_domination(self):
        rng = np.random.default_rng(30)
        s = make_state(random_hermitian(rng, 5), 0.5)
        v = 0.05 * random_hermitian(rng, 5)
        ledger = estimate_chain(s, [v], 0.25)
        assert ledger.kubo_abs <= ledger.final_bound
        assert ledger.kubo_abs <= ledger.rederived_bound
        assert ledger.all_margins_ok

    def test_sigma_x_ledger_self_consistency(self):
        s = make_state(H12, 0.5)
        ledger = estimate_chain(s, [SIGMA_X, SIGMA_X], 0.25)
        assert ledger.kubo_abs <= ledger.rederived_bound
        assert ledger.rederived_bound <= ledger.final_bound * math.factorial(1)
        assert ledger.all_margins_ok
        assert ledger.dominated

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    @pytest.mark.parametrize("eps", [0.1, 0.25, 0.4])
    def test_random_margins(self, n, eps):
        rng = np.random.default_rng(100 * n + int(eps * 100))
        s = make_state(random_hermitian(rng, 4), 0.5)
        dirs = [0.3 * random_hermitian(rng, 4) for _ in range(n)]
        ledger = estimate_chain(s, dirs, eps)
        assert ledger.all_margins_ok, [r.name for r in ledger.factor_margins if not r.ok]
        assert ledger.dominated
        assert ledger.kubo_integral_abs <= ledger.final_bound

    def test_ladder_matches_gamma_telescope(self):
        s = make_state(H12, 0.5)
        ledger = estimate_chain(s, [SIGMA_X] * 3, 0.25)
        assert ledger.gamma.sum() == pytest.approx(3.0, abs=1e-12)

    def test_json_round_trip(self):
        import json

        s = make_state(H12, 0.5)
        ledger = estimate_chain(s, [SIGMA_X, SIGMA_X], 0.25)
        blob = json.dumps(ledger.to_json_dict())
        back = json.loads(blob)
        assert back["n"] == 2
        assert back["all_margins_ok"] is True


def taylor_coeff_oracle(state, v, max_order):
    """Independent coefficients: log of the exact perturbation series.

    The series Z(l)/Z0 = 1 + sum (-l)^k S_k / k (S_k the bare tuple sums)
    is enumerated exactly; the log recursion turns moments into the Taylor
    coefficients of the free energy without any finite differences.
    """
    z = np.zeros(max_order + 1)
    z[0] = 1.0
    for k in range(1, max_order + 1):
        s_k = kubo_n_point(state, [v] * k).value / math.factorial(k - 1)
        z[k] = (-1.0) ** k * s_k / k
    c = np.zeros(max_order + 1)
    c[0] = state.psi
    for k in range(1, max_order + 1):
        acc = z[k]
        for m in range(1, k):
            acc -= m / k * c[m] * z[k - m]
        c[k] = acc
    return c


class TestTaylorProbe:
    def test_zero_direction(self):
        s = make_state(H12, 0.5)
        z = HermitianOperator.from_array(np.zeros((2, 2)))
        probe = taylor_probe(s, z, np.array([0.1, 0.2]), max_order=4)
        assert np.all(probe.coeffs[1:] == 0.0)
        np.testing.assert_allclose(probe.partial_sums, s.psi, atol=1e-14)
        np.testing.assert_allclose(probe.direct, s.psi, atol=1e-14)
        assert probe.radius_bound == np.inf

    def test_small_sigma_x_example(self):
        s = make_state(H12, 0.5)
        v = 0.1 * SIGMA_X
        vnorm = eps_norm(v, s.h_decomp, 0.25)
        probe = taylor_probe(s, v, np.array([0.5]) * (0.25 / vnorm), max_order=6)
        assert probe.radius_bound == pytest.approx(2 * 0.25 * 0.5 / vnorm, rel=1e-12)
        err = probe.errors()[-1, -1]
        assert err <= 1e-6 * (1.0 + abs(probe.direct[-1]))

    def test_coeffs_match_log_series_oracle(self):
        rng = np.random.default_rng(31)
        s = make_state(random_hermitian(rng, 4), 0.5)
        v = centered_direction(s, rng, 4, scale=0.3)
        probe = taylor_probe(s, v, np.array([0.25]), max_order=6)
        oracle = taylor_coeff_oracle(s, v, 6)
        for k in range(7):
            assert probe.coeffs[k] == pytest.approx(oracle[k], rel=1e-5, abs=5e-8), k

    def test_coefficient_growth_within_bound_envelope(self):
        rng = np.random.default_rng(32)
        s = make_state(random_hermitian(rng, 4), 0.5)
        v = centered_direction(s, rng, 4, scale=0.2)
        probe = taylor_probe(s, v, np.array([0.25]), max_order=3)
        r = probe.radius_bound
        for k in (1, 2, 3):
            ledger = estimate_chain(s, [v] * k, 0.25)
            assert abs(probe.coeffs[k]) * r**k <= ledger.rederived_bound * r**k / math.factorial(k) * (1 + 1e-6)

    def test_converged_inside_radius(self):
        rng = np.random.default_rng(33)
        s = make_state(random_hermitian(rng, 5), 0.5)
        v = centered_direction(s, rng, 5, scale=0.15)
        grid = np.array([0.2, 0.5, 0.8]) * min(1.0, probe_radius(s, v))
        probe = taylor_probe(s, v, grid, max_order=6)
        assert probe.converged

    def test_grid_outside_hood_rejected(self):
        s = make_state(H12, 0.5)
        with pytest.raises(HoodViolationError):
            taylor_probe(s, SIGMA_X, np.array([5.0]), max_order=3)

    def test_csv_emission(self, tmp_path):
        from qimlab.kubo import taylor_to_csv

        s = make_state(H12, 0.5)
        probe = taylor_probe(s, 0.1 * SIGMA_X, np.array([0.3, 0.6]), max_order=3)
        path = tmp_path / "probe.csv"
        taylor_to_csv(probe, path)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "lambda,order,coefficient,partial_sum,direct"
        assert len(lines) == 1 + 2 * 4  # header + grid x orders 0..3
        assert "np.float" not in lines[1]  # plain numbers, not numpy reprs
        assert float(lines[1].split(",")[2]) == probe.coeffs[0]


def probe_radius(state, v, eps=0.25):
    return 2 * eps * (1 - state.beta) / eps_norm(v, state.h_decomp, eps)


class TestPartialSumsAgainstDirect:
    def test_direct_values_are_shift_corrected(self):
        s = make_state(H12, 0.5)
        v = HermitianOperator.from_array(np.diag([-0.45, 0.1]))
        probe = taylor_probe(s, v, np.array([1.0]), max_order=4)
        st = perturb(s, v, 0.25)
        assert probe.direct[0] == pytest.approx(unshifted_free_energy(st), abs=1e-12)
