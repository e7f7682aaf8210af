"""Spectral calculus: decomposition, lifted scalar maps, norms, exchange format."""

import json

import numpy as np
import pytest

from qimlab.errors import DomainError, InputError
from qimlab.speccalc import (
    HermitianOperator,
    apply_function,
    decompose,
    hermitian_from_json,
    matrix_from_json,
    matrix_to_json,
    norm,
    operator_norm_general,
)


def random_hermitian(rng, d):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return HermitianOperator.from_array((g + g.conj().T) / 2)


def random_psd(rng, d):
    g = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return HermitianOperator.from_array(g @ g.conj().T / d)


class TestDecompose:
    def test_diagonal(self):
        d = decompose(HermitianOperator.from_array(np.diag([2.0, 1.0])))
        np.testing.assert_allclose(d.eigenvalues, [1.0, 2.0])
        # permutation eigenvectors
        np.testing.assert_allclose(np.abs(d.eigenvectors), [[0, 1], [1, 0]], atol=1e-14)

    def test_identity(self):
        d = decompose(HermitianOperator.from_array(np.eye(3)))
        np.testing.assert_allclose(d.eigenvalues, np.ones(3))

    def test_reconstruction_residual(self):
        rng = np.random.default_rng(0)
        a = random_hermitian(rng, 6)
        d = decompose(a)
        scale = norm(a, "operator")
        assert operator_norm_general(d.reconstruct() - a.entries) <= 1e-11 * scale
        assert d.unitarity_residual() <= 1e-12

    def test_eigenvalues_ascending(self):
        rng = np.random.default_rng(1)
        d = decompose(random_hermitian(rng, 8))
        assert np.all(np.diff(d.eigenvalues) >= 0)

    def test_idempotent_under_reconstruction(self):
        rng = np.random.default_rng(2)
        a = random_hermitian(rng, 6)
        d1 = decompose(a)
        d2 = decompose(HermitianOperator.from_array(d1.reconstruct()))
        scale = max(np.abs(d1.eigenvalues).max(), 1.0)
        np.testing.assert_allclose(d1.eigenvalues, d2.eigenvalues, atol=1e-10 * scale)

    def test_non_finite_rejected(self):
        bad = np.eye(2)
        bad[0, 0] = np.nan
        with pytest.raises(InputError):
            HermitianOperator.from_array(bad)

    def test_non_square_rejected(self):
        with pytest.raises(InputError):
            HermitianOperator.from_array(np.ones((2, 3)))

    def test_gross_asymmetry_rejected(self):
        with pytest.raises(InputError):
            HermitianOperator.from_array([[0.0, 1.0], [0.0, 0.0]])

    def test_roundoff_asymmetry_symmetrized(self):
        a = np.array([[1.0, 0.5 + 1e-14], [0.5, 2.0]])
        op = HermitianOperator.from_array(a)
        assert op.sym_residual <= 1e-12
        np.testing.assert_allclose(op.entries, op.entries.conj().T)


class TestApplyFunction:
    def test_sqrt_diagonal(self):
        d = decompose(HermitianOperator.from_array(np.diag([1.0, 4.0])))
        out = apply_function(d, np.sqrt)
        np.testing.assert_allclose(out.entries, np.diag([1.0, 2.0]), atol=1e-14)

    def test_power_zero_is_identity(self):
        rng = np.random.default_rng(3)
        d = decompose(random_psd(rng, 5))
        out = apply_function(d, lambda x: x**0)
        np.testing.assert_allclose(out.entries, np.eye(5), atol=1e-13)

    def test_exponent_addition(self):
        rng = np.random.default_rng(4)
        a = random_psd(rng, 5)
        d = decompose(a)
        p3 = apply_function(d, lambda x: x**0.3)
        p7 = apply_function(d, lambda x: x**0.7)
        scale = norm(a, "operator")
        assert operator_norm_general(p3.entries @ p7.entries - a.entries) <= 1e-10 * scale

    def test_homomorphism(self):
        rng = np.random.default_rng(5)
        d = decompose(random_psd(rng, 6))
        f = lambda x: np.exp(-x)  # noqa: E731
        g = lambda x: x**0.5  # noqa: E731
        lhs = apply_function(d, f).entries @ apply_function(d, g).entries
        rhs = apply_function(d, lambda x: f(x) * g(x)).entries
        scale = max(operator_norm_general(rhs), 1.0)
        assert operator_norm_general(lhs - rhs) <= 1e-10 * scale

    def test_log_domain_error_names_eigenvalue(self):
        d = decompose(HermitianOperator.from_array(np.diag([-1.0, 2.0])))
        with pytest.raises(DomainError, match="-1"):
            apply_function(d, np.log)


class TestNorms:
    def test_operator(self):
        assert norm(HermitianOperator.from_array(np.diag([3.0, -4.0]))) == 4.0

    def test_schatten_half_closed_form(self):
        a = HermitianOperator.from_array(np.diag([0.5, 0.5]))
        assert norm(a, "schatten", p=0.5) == pytest.approx(2 * 0.5**0.5, abs=1e-12)

    def test_trace_equals_eigenvalue_sum(self):
        rng = np.random.default_rng(6)
        a = random_psd(rng, 6)
        w = decompose(a).eigenvalues
        assert norm(a, "trace") == pytest.approx(float(w.sum()), abs=1e-11)

    @pytest.mark.parametrize("seed", range(5))
    def test_operator_trace_sandwich(self, seed):
        rng = np.random.default_rng(seed)
        a = random_hermitian(rng, 6)
        op, tr = norm(a, "operator"), norm(a, "trace")
        assert op <= tr + 1e-12
        assert tr <= 6 * op + 1e-12

    def test_schatten_requires_psd(self):
        with pytest.raises(DomainError):
            norm(HermitianOperator.from_array(np.diag([1.0, -1.0])), "schatten", p=0.5)

    def test_schatten_requires_valid_p(self):
        a = HermitianOperator.from_array(np.eye(2))
        with pytest.raises(InputError):
            norm(a, "schatten", p=1.5)

    def test_unknown_kind(self):
        with pytest.raises(InputError):
            norm(HermitianOperator.from_array(np.eye(2)), "frobenius")


class TestExchangeFormat:
    def test_round_trip(self):
        rng = np.random.default_rng(7)
        a = random_hermitian(rng, 4)
        obj = matrix_to_json(a.entries)
        assert obj["dim"] == 4
        back = matrix_from_json(json.loads(json.dumps(obj)))
        np.testing.assert_allclose(back, a.entries)

    def test_hermitian_from_json(self):
        obj = {"dim": 2, "re": [[1.0, 0.0], [0.0, 2.0]], "im": [[0.0, 0.0], [0.0, 0.0]]}
        op = hermitian_from_json(obj)
        np.testing.assert_allclose(op.entries, np.diag([1.0, 2.0]))

    def test_shape_mismatch(self):
        with pytest.raises(InputError):
            matrix_from_json({"dim": 2, "re": [[1.0]], "im": [[0.0]]})
