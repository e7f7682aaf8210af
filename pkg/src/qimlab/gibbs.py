"""Gibbs states, free energy, regularized means, and chart-neighbourhood tests.

A state is built from a Hamiltonian shifted minimally so H >= I, with

    Psi = log Tr e^{-H},    rho = e^{-(H + Psi)}.

The Schatten tag beta in (0,1) is pure bookkeeping at finite dimension (every
trace is finite) but parameterizes the hood radius 1 - beta and the bound
chain, so it is carried and updated on perturbation via beta/(1 - a) with the
form-bound surrogate a.  The shift is recorded, never folded silently: the
reported Psi belongs to the shifted Hamiltonian, and cross-state comparisons
go through rho (shift-invariant) or through psi + shift_applied, which
restores the unshifted value log Tr e^{-(H_base + X)}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .epsnorms import eps_norm, form_bound_surrogate
from .errors import BetaOverflowError, HoodViolationError, InputError
from .speccalc import (
    HermitianOperator,
    SpectralDecomposition,
    matrix_to_json,
)

DEFAULT_LAMBDA_GRID = (0.1, 0.25, 0.5, 0.75, 0.9)
TRACE_ATOL = 1e-12


@dataclass(frozen=True)
class GibbsState:
    """Shifted Hamiltonian, free energy, and the shared eigenbasis of rho.

    ``h_decomp`` is the one eigendecomposition every downstream operation
    reuses.  rho has the same eigenvectors; its eigenvalues are
    exp(-(h_i + psi)), stored ascending in ``rho_decomp``.
    """

    H: HermitianOperator
    h_decomp: SpectralDecomposition
    psi: float
    beta: float
    shift_applied: float

    @property
    def dim(self) -> int:
        return self.H.dim

    @property
    def rho_decomp(self) -> SpectralDecomposition:
        w = self.h_decomp.eigenvalues
        p = np.exp(-(w + self.psi))
        # h ascending => p descending; flip to honour the ascending invariant
        return SpectralDecomposition(
            eigenvalues=p[::-1].copy(), eigenvectors=self.h_decomp.eigenvectors[:, ::-1].copy()
        )

    @property
    def rho_eigenvalues(self) -> np.ndarray:
        """Eigenvalues of rho, ascending."""
        w = self.h_decomp.eigenvalues
        return np.exp(-(w + self.psi))[::-1].copy()

    @property
    def log_rho_eigenvalues(self) -> np.ndarray:
        """log of the rho eigenvalues (= -(h + psi)), ascending in rho order."""
        w = self.h_decomp.eigenvalues
        return (-(w + self.psi))[::-1].copy()

    def rho(self) -> np.ndarray:
        d = self.rho_decomp
        return (d.eigenvectors * d.eigenvalues) @ d.eigenvectors.conj().T

    def rho_power(self, t: float) -> np.ndarray:
        d = self.rho_decomp
        return (d.eigenvectors * d.eigenvalues**t) @ d.eigenvectors.conj().T

    def partition_function(self) -> float:
        return float(np.exp(self.psi))

    def to_snapshot(self) -> dict:
        return {
            "H": matrix_to_json(self.H.entries),
            "psi": self.psi,
            "beta": self.beta,
            "shift_applied": self.shift_applied,
            "rho_eigenvalues": self.rho_eigenvalues.tolist(),
        }


def make_state(h_raw: HermitianOperator, beta: float = 0.5) -> GibbsState:
    """Build the state of h_raw + cI with the minimal shift c = max(0, 1 - lambda_min)."""
    if not (0.0 < beta < 1.0):
        raise InputError(f"beta must lie in (0,1), got {beta!r}")
    if not isinstance(h_raw, HermitianOperator):
        h_raw = HermitianOperator.from_array(h_raw)
    w, u = np.linalg.eigh(h_raw.entries)
    if not np.all(np.isfinite(w)):
        raise InputError("Hamiltonian spectrum is not finite")
    c = max(0.0, 1.0 - float(w[0]))
    w_shifted = w + c
    h = HermitianOperator.from_array(h_raw.entries + c * np.eye(h_raw.dim))
    psi = float(logsumexp(-w_shifted))
    return GibbsState(
        H=h,
        h_decomp=SpectralDecomposition(eigenvalues=w_shifted, eigenvectors=u),
        psi=psi,
        beta=beta,
        shift_applied=c,
    )


def beta_update(beta0: float, a: float) -> float:
    """Schatten tag after absorbing a perturbation of relative bound a: beta0/(1-a)."""
    if not (0.0 < beta0 < 1.0):
        raise InputError(f"beta0 must lie in (0,1), got {beta0!r}")
    if a < 0.0:
        raise InputError(f"relative bound must be nonnegative, got {a!r}")
    if a >= 1.0 - beta0:
        raise BetaOverflowError(
            f"relative bound {a:.6g} >= 1 - beta0 = {1.0 - beta0:.6g}; updated tag would reach 1"
        )
    return beta0 / (1.0 - a)


@dataclass(frozen=True)
class HoodReport:
    ok: bool
    margin: float


def in_hood(state: GibbsState, x, eps: float) -> HoodReport:
    """Membership of the perturbation in the chart ball: ||X||_eps < 1 - beta."""
    margin = (1.0 - state.beta) - eps_norm(x, state.h_decomp, eps)
    return HoodReport(ok=margin > 0.0, margin=margin)


def perturb(state: GibbsState, x: HermitianOperator, eps: float) -> GibbsState:
    """State of H + X, reshifted to >= I, with the Schatten tag updated.

    Requires hood membership; the form-bound surrogate of X feeds the
    beta update (the hood check already implies it stays below 1 - beta).
    """
    hood = in_hood(state, x, eps)
    if not hood.ok:
        raise HoodViolationError("perturbation leaves the hood", hood.margin)
    a = form_bound_surrogate(x, state.h_decomp)
    new_beta = beta_update(state.beta, a)
    new_raw = HermitianOperator.from_array(state.H.entries + x.entries)
    out = make_state(new_raw, beta=new_beta)
    return out


@dataclass(frozen=True)
class RegularizedMean:
    mean: float
    spread: float
    values: np.ndarray
    lambda_grid: np.ndarray


def reg_mean(state: GibbsState, x, lambda_grid=None) -> RegularizedMean:
    """Tr(rho^lambda X rho^(1-lambda)) over a lambda grid.

    Trace cyclicity makes the value lambda-independent; the products are
    formed honestly (full matrices, not the diagonal shortcut) so the spread
    is a real numerical check, not a tautology.  mean is the value at
    lambda = 1/2, spread the max-min over the grid.
    """
    if lambda_grid is None:
        lambda_grid = DEFAULT_LAMBDA_GRID
    grid = np.asarray(lambda_grid, dtype=np.float64)
    if grid.size == 0 or np.any(grid <= 0.0) or np.any(grid >= 1.0):
        raise InputError("lambda grid must be a nonempty subset of (0,1)")
    xm = x.entries if isinstance(x, HermitianOperator) else np.asarray(x, dtype=np.complex128)
    vals = np.array([_lambda_mean(state, xm, lam) for lam in grid])
    mean = _lambda_mean(state, xm, 0.5)
    return RegularizedMean(
        mean=mean,
        spread=float(vals.max() - vals.min()),
        values=vals,
        lambda_grid=grid,
    )


def _lambda_mean(state: GibbsState, xm: np.ndarray, lam: float) -> float:
    left = state.rho_power(lam)
    right = state.rho_power(1.0 - lam)
    return float(np.trace(left @ xm @ right).real)


def center(state: GibbsState, x) -> HermitianOperator:
    """Score coordinate: X - (rho . X) I, the zero-mean representative of X's line."""
    xm = x.entries if isinstance(x, HermitianOperator) else np.asarray(x, dtype=np.complex128)
    mu = _lambda_mean(state, xm, 0.5)
    return HermitianOperator.from_array(xm - mu * np.eye(xm.shape[0]))


def free_energy(state: GibbsState) -> float:
    return state.psi


def unshifted_free_energy(state: GibbsState) -> float:
    """log Tr e^{-H_raw} for the Hamiltonian the state was built from,
    i.e. psi with the recorded shift added back.  This is the smooth
    quantity to differentiate along perturbation rays."""
    return state.psi + state.shift_applied
