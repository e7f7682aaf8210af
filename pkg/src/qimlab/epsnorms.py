"""The interpolating norm family on perturbations of a Hamiltonian H >= I.

For R = H^{-1} and eps in [0, 1/2]:

    eps-norm     ||X||_eps = || R^(1/2+eps) X R^(1/2-eps) ||
    omega-norm   ||X||_w   = || X R ||
    0-norm       ||X||_0   = || R^(1/2) X R^(1/2) ||   (= eps-norm at eps = 0)

The 0-norm doubles as the computable upper bound on the relative form bound
of X: |<psi, X psi>| <= ||X||_0 <psi, H psi> for every vector psi.  In finite
dimension the true infimum of relative bounds is 0 (any bounded X satisfies
X <= ||X|| I), so the surrogate is used wherever a relative bound enters a
formula; that keeps every inequality testable as stated.

The sandwiched products are generally non-Hermitian; all norms here are
largest singular values.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, PreconditionError
from .speccalc import (
    HermitianOperator,
    SpectralDecomposition,
    decompose,
    fractional_power,
    operator_norm_general,
)

MIN_EIGENVALUE_SLACK = 1e-12
MONOTONE_RTOL = 1e-10
DEFAULT_EPS_GRID = np.linspace(0.0, 0.5, 11)


def _as_decomp(h) -> SpectralDecomposition:
    if isinstance(h, SpectralDecomposition):
        return h
    if isinstance(h, HermitianOperator):
        return decompose(h)
    raise InputError(f"expected HermitianOperator or SpectralDecomposition, got {type(h)!r}")


def _require_bounded_below(d: SpectralDecomposition, who: str) -> None:
    lam = d.eigenvalues[0]
    if lam < 1.0 - MIN_EIGENVALUE_SLACK:
        raise PreconditionError(f"{who} must satisfy H >= I; min eigenvalue {lam!r}")


def _entries(x) -> np.ndarray:
    return x.entries if isinstance(x, HermitianOperator) else np.asarray(x, dtype=np.complex128)


def eps_norm(x, h, eps: float) -> float:
    """|| R^(1/2+eps) X R^(1/2-eps) || for R = H^{-1}."""
    if not (0.0 <= eps <= 0.5):
        raise InputError(f"eps must lie in [0, 1/2], got {eps!r}")
    d = _as_decomp(h)
    _require_bounded_below(d, "eps_norm")
    left = fractional_power(d, -(0.5 + eps))
    right = fractional_power(d, -(0.5 - eps))
    return operator_norm_general(left @ _entries(x) @ right)


def omega_norm(x, h) -> float:
    """|| X R ||, the operator-bounded end of the scale."""
    d = _as_decomp(h)
    _require_bounded_below(d, "omega_norm")
    return operator_norm_general(_entries(x) @ fractional_power(d, -1.0))


def form_bound_surrogate(x, h) -> float:
    """||X||_0 = ||R^(1/2) X R^(1/2)||, the computable relative-bound proxy."""
    return eps_norm(x, h, 0.0)


@dataclass(frozen=True)
class EpsNormReport:
    """Norm values along an eps grid, with the monotonicity check applied.

    ``monotone`` is False (never silently true) when some grid step decreases
    by more than MONOTONE_RTOL relative; ``max_violation`` is the worst
    relative decrease seen (0 when the scan is clean).
    """

    epsilon_grid: np.ndarray
    values: np.ndarray
    omega_norm: float
    form_bound_surrogate: float
    monotone: bool
    max_violation: float

    def to_json_dict(self) -> dict:
        return {
            "epsilon_grid": self.epsilon_grid.tolist(),
            "values": self.values.tolist(),
            "omega_norm": self.omega_norm,
            "form_bound_surrogate": self.form_bound_surrogate,
            "monotone": self.monotone,
            "max_violation": self.max_violation,
        }


def monotonicity_scan(x, h, grid=None) -> EpsNormReport:
    """Scan ||X||_eps over an ascending eps grid in [0, 1/2]."""
    if grid is None:
        grid = DEFAULT_EPS_GRID
    grid = np.asarray(grid, dtype=np.float64)
    if grid.size == 0:
        raise InputError("eps grid is empty")
    if np.any(np.diff(grid) < 0) or grid[0] < 0 or grid[-1] > 0.5:
        raise InputError("eps grid must be ascending within [0, 1/2]")
    d = _as_decomp(h)
    vals = np.array([eps_norm(x, d, e) for e in grid])
    worst = 0.0
    for lo, hi in zip(vals[:-1], vals[1:]):
        if lo > hi:
            scale = max(hi, np.finfo(float).tiny)
            worst = max(worst, (lo - hi) / scale)
    return EpsNormReport(
        epsilon_grid=grid,
        values=vals,
        omega_norm=omega_norm(x, d),
        form_bound_surrogate=float(vals[0]) if grid[0] == 0.0 else form_bound_surrogate(x, d),
        monotone=worst <= MONOTONE_RTOL,
        max_violation=worst,
    )


@dataclass(frozen=True)
class EquivalenceConstants:
    """m, M with m ||Y||_eps(0) <= ||Y||_eps(X) <= M ||Y||_eps(0) for all Y."""

    m: float
    M: float


def equivalence_constants(h0, hx, eps: float) -> EquivalenceConstants:
    """Norm-equivalence constants between the charts at H0 and HX.

    M  = ||R_X^(1/2+eps) H0^(1/2+eps)|| * ||H0^(1/2-eps) R_X^(1/2-eps)||
    1/m = same with the roles of H0 and HX swapped.
    """
    if not (0.0 <= eps <= 0.5):
        raise InputError(f"eps must lie in [0, 1/2], got {eps!r}")
    d0 = _as_decomp(h0)
    dx = _as_decomp(hx)
    _require_bounded_below(d0, "equivalence_constants(H0)")
    _require_bounded_below(dx, "equivalence_constants(HX)")
    up, dn = 0.5 + eps, 0.5 - eps
    big = operator_norm_general(fractional_power(dx, -up) @ fractional_power(d0, up)) * \
        operator_norm_general(fractional_power(d0, dn) @ fractional_power(dx, -dn))
    inv_m = operator_norm_general(fractional_power(d0, -up) @ fractional_power(dx, up)) * \
        operator_norm_general(fractional_power(dx, dn) @ fractional_power(d0, -dn))
    consts = EquivalenceConstants(m=1.0 / inv_m, M=big)
    if consts.m > consts.M:
        raise PreconditionError(f"inconsistent equivalence constants {consts!r}")
    return consts


@dataclass(frozen=True)
class ComparabilityReport:
    """The four mixed factor norms and the inverse identities between them.

    factor_norms keys: 'hx_r0_minus', 'h0_rx_minus', 'hx_r0_plus', 'h0_rx_plus'
    for ||HX^(1/2∓eps) R0^(1/2∓eps)|| and ||H0^(1/2±eps) RX^(1/2±eps)||.
    """

    products_are_identity: bool
    factor_norms: dict
    max_identity_residual: float
    contraction_premise_ok: bool
    contraction_norm: float

    def to_json_dict(self) -> dict:
        return {
            "products_are_identity": self.products_are_identity,
            "factor_norms": dict(self.factor_norms),
            "max_identity_residual": self.max_identity_residual,
            "contraction_premise_ok": self.contraction_premise_ok,
            "contraction_norm": self.contraction_norm,
        }


IDENTITY_RTOL = 1e-9


def comparability_check(h0, hx, eps: float) -> ComparabilityReport:
    """Verify that mixed powers of two comparable Hamiltonians invert each other.

    Checks, in both multiplication orders and for both exponents 1/2-eps and
    1/2+eps, that HX^t R0^t and H0^t RX^t are mutually inverse (products equal
    the identity within IDENTITY_RTOL).  Also reports whether the premise
    ||HX - H0||_eps(0) < 1 of the bounded-inverse argument holds; a failed
    identity is reported, never raised.
    """
    d0 = _as_decomp(h0)
    dx = _as_decomp(hx)
    _require_bounded_below(d0, "comparability_check(H0)")
    _require_bounded_below(dx, "comparability_check(HX)")
    diff = dx.reconstruct() - d0.reconstruct()
    contraction = eps_norm(diff, d0, eps)

    dim = d0.dim
    eye = np.eye(dim)
    norms = {}
    worst = 0.0
    for tag, t in (("minus", 0.5 - eps), ("plus", 0.5 + eps)):
        a = fractional_power(dx, t) @ fractional_power(d0, -t)   # HX^t R0^t
        b = fractional_power(d0, t) @ fractional_power(dx, -t)   # H0^t RX^t
        norms[f"hx_r0_{tag}"] = operator_norm_general(a)
        norms[f"h0_rx_{tag}"] = operator_norm_general(b)
        worst = max(
            worst,
            operator_norm_general(a @ b - eye),
            operator_norm_general(b @ a - eye),
        )
    return ComparabilityReport(
        products_are_identity=worst <= IDENTITY_RTOL,
        factor_norms=norms,
        max_identity_residual=worst,
        contraction_premise_ok=contraction < 1.0,
        contraction_norm=contraction,
    )
