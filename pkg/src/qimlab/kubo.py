"""Simplex-ordered correlation functions of a Gibbs state and the bound
chain that proves the free energy is analytic along perturbation rays.

The n-point function is evaluated in the eigenbasis of rho.  Writing p_i for
the rho eigenvalues and V~ for a direction conjugated into that basis,

    E_{alpha ~ Unif(simplex)} Tr[rho^a1 V1 ... rho^an Vn]
        = (n-1)! * sum_tuples (V1)_{i1 i2} ... (Vn)_{in i1}
                     * exp[log p_{i1}, ..., log p_{in}]

by the divided-difference identity for the exponential.  The value carries
the (n-1)! uniform-measure normalization, which is what the derivatives of
the free energy see: d^n/dl^n log Tr e^{-(H + l V)} at 0 equals (-1)^n times
this value for n <= 3 and centered V (higher orders pick up disconnected
moment-vs-cumulant corrections, reported but never asserted).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import divdiff_exp, divdiff_table, kubo_enum, mc_chain
from .epsnorms import eps_norm
from .errors import HoodViolationError, InputError, PreconditionError, ResourceLimitError
from .gibbs import GibbsState, perturb, reg_mean
from .numdiff import derivative, max_stencil_offset
from .speccalc import (
    HermitianOperator,
    fractional_power,
    matrix_to_json,
    operator_norm_general,
)

__all__ = [
    "divdiff_exp",
    "KuboResult",
    "OracleEstimate",
    "kubo_n_point",
    "kubo_oracle",
    "kubo_quadrature",
    "FrechetCheck",
    "frechet_check",
    "free_energy_derivative",
    "delta_ladder",
    "FactorRecord",
    "BoundLedger",
    "estimate_chain",
    "TaylorProbe",
    "taylor_probe",
    "taylor_to_csv",
]

DEFAULT_ENUM_CAP = 10_000_000
REAL_RTOL = 1e-10
MARGIN_RTOL = 1e-9


def _directions_in_eigenbasis(state: GibbsState, directions) -> np.ndarray:
    d = state.dim
    u = state.rho_decomp.eigenvectors
    stack = np.empty((len(directions), d, d), dtype=np.complex128)
    for k, v in enumerate(directions):
        vm = v.entries if isinstance(v, HermitianOperator) else np.asarray(v, dtype=np.complex128)
        if vm.shape != (d, d):
            raise InputError(f"direction {k} has shape {vm.shape}, state dim is {d}")
        stack[k] = u.conj().T @ vm @ u
    return stack


@dataclass(frozen=True)
class KuboResult:
    """Closed-form n-point value (uniform-simplex normalization) plus, when a
    Monte-Carlo run is attached, the oracle estimate and its errors."""

    n: int
    value: float
    imag_part: float
    directions: list = field(repr=False)
    oracle_value: float | None = None
    oracle_stderr: float | None = None

    @property
    def modulus(self) -> float:
        return float(np.hypot(self.value, self.imag_part))

    def with_oracle(self, est: "OracleEstimate") -> "KuboResult":
        return replace(self, oracle_value=est.value, oracle_stderr=est.stderr)

    @property
    def oracle_consistent(self) -> bool:
        if self.oracle_value is None:
            return True
        tol = max(5.0 * (self.oracle_stderr or 0.0), 1e-6 * (1.0 + abs(self.value)))
        return abs(self.value - self.oracle_value) <= tol

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "value": self.value,
            "imag_part": self.imag_part,
            "oracle_value": self.oracle_value,
            "oracle_stderr": self.oracle_stderr,
            "directions": [
                matrix_to_json(v.entries if isinstance(v, HermitianOperator) else v)
                for v in self.directions
            ],
        }


def kubo_n_point(state: GibbsState, directions, enum_cap: int = DEFAULT_ENUM_CAP,
                 backend: str | None = None) -> KuboResult:
    """Closed-form n-point function by exact tuple enumeration.

    Cost is O(d^n); above enum_cap a ResourceLimitError points at the
    Monte-Carlo oracle instead.  The result is real (within REAL_RTOL) for
    n <= 2 or identical directions; the residual imaginary part is kept so
    bound checks can use the full modulus.
    """
    n = len(directions)
    if n < 1:
        raise InputError("need at least one direction")
    d = state.dim
    if d**n > enum_cap:
        raise ResourceLimitError(
            f"enumeration needs d^n = {d**n} terms (cap {enum_cap}); use kubo_oracle"
        )
    vt = _directions_in_eigenbasis(state, directions)
    logp = state.log_rho_eigenvalues
    table, binom = divdiff_table(logp, n)
    total = kubo_enum(vt, table, binom, backend=backend)
    total *= math.factorial(n - 1)
    return KuboResult(
        n=n,
        value=float(total.real),
        imag_part=float(total.imag),
        directions=list(directions),
    )


@dataclass(frozen=True)
class OracleEstimate:
    value: float
    stderr: float
    imag_value: float
    imag_stderr: float
    samples: int
    seed: int

    def to_json_dict(self) -> dict:
        return {
            "value": self.value,
            "stderr": self.stderr,
            "imag_value": self.imag_value,
            "imag_stderr": self.imag_stderr,
            "samples": self.samples,
            "seed": self.seed,
        }


def simplex_samples(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    """Uniform draws from the (n-1)-simplex via normalized exponential spacings."""
    e = rng.standard_exponential((count, n))
    return e / e.sum(axis=1, keepdims=True)


def kubo_oracle(state: GibbsState, directions, samples: int, seed: int,
                chunk: int = 1 << 15, backend: str | None = None) -> OracleEstimate:
    """Monte-Carlo estimate of the n-point function.

    alpha is drawn uniformly on the simplex (exponential spacings), the trace
    chain Tr[rho^a1 V1 ... rho^an Vn] is evaluated per draw in the rho
    eigenbasis, and the plain sample mean estimates the uniform-simplex
    average, i.e. exactly the kubo_n_point normalization.  Fixed seed gives a
    bit-identical rerun.
    """
    n = len(directions)
    if n < 2:
        raise PreconditionError("the Monte-Carlo oracle needs n >= 2")
    if samples < 2:
        raise InputError("need at least 2 samples")
    vt = _directions_in_eigenbasis(state, directions)
    p = state.rho_eigenvalues
    rng = np.random.default_rng(seed)
    count = 0
    s1 = 0.0 + 0.0j
    s2_re = 0.0
    s2_im = 0.0
    while count < samples:
        take = min(chunk, samples - count)
        alphas = simplex_samples(rng, take, n)
        vals = mc_chain(p, alphas, vt, backend=backend)
        s1 += vals.sum()
        s2_re += float(np.sum(vals.real**2))
        s2_im += float(np.sum(vals.imag**2))
        count += take
    mean = s1 / samples
    var_re = max(s2_re / samples - mean.real**2, 0.0) / (samples - 1)
    var_im = max(s2_im / samples - mean.imag**2, 0.0) / (samples - 1)
    return OracleEstimate(
        value=float(mean.real),
        stderr=float(np.sqrt(var_re)),
        imag_value=float(mean.imag),
        imag_stderr=float(np.sqrt(var_im)),
        samples=samples,
        seed=seed,
    )


def kubo_quadrature(state: GibbsState, directions, nodes: int = 96) -> float:
    """Deterministic Gauss-Legendre oracle for the 2-point function.

    The alpha integral is one-dimensional and the integrand analytic, so
    fixed-order Gauss-Legendre on [0,1] is exact to roundoff well before 96
    nodes.
    """
    if len(directions) != 2:
        raise InputError("the quadrature oracle covers n = 2 only")
    vt = _directions_in_eigenbasis(state, directions)
    p = state.rho_eigenvalues
    x, w = np.polynomial.legendre.leggauss(nodes)
    a = 0.5 * (x + 1.0)
    alphas = np.column_stack([a, 1.0 - a])
    vals = mc_chain(p, alphas, vt)
    return float(0.5 * np.sum(w * vals.real))


# -- free-energy derivatives ----------------------------------------------------


def psi_ray(state: GibbsState, v: HermitianOperator, eps: float):
    """lam -> log Tr e^{-(H + lam V)}, the smooth (shift-corrected) branch."""

    def f(lam: float) -> float:
        if lam == 0.0:
            return state.psi
        st = perturb(state, float(lam) * v, eps)
        return st.psi + st.shift_applied

    return f


def free_energy_derivative(state: GibbsState, v: HermitianOperator, n: int,
                           h: float | None = None, eps: float = 0.25,
                           cache: dict | None = None) -> tuple[float, float]:
    """n-th derivative of lam -> log Tr e^{-(H + lam V)} at 0, via Richardson-
    extrapolated central differences.  Returns (value, step used).

    The default step is 1e-2 of the guaranteed Taylor radius; every stencil
    point is checked to stay inside the hood."""
    if n < 1:
        raise InputError(f"derivative order must be >= 1, got {n}")
    vnorm = eps_norm(v, state.h_decomp, eps)
    radius = np.inf if vnorm == 0.0 else 2.0 * eps * (1.0 - state.beta) / vnorm
    if h is None:
        h = 0.1 if not np.isfinite(radius) else 1e-2 * radius
        if n >= 4:
            h *= 5.0  # higher orders divide by h^n; roundoff needs a wider stencil
    m = max_stencil_offset(n)
    reach = m * h * vnorm
    if reach >= (1.0 - state.beta):
        raise HoodViolationError(
            "finite-difference stencil leaves the hood",
            (1.0 - state.beta) - reach,
        )
    fd = derivative(psi_ray(state, v, eps), n, h, richardson=2, cache=cache)
    return fd, h


@dataclass(frozen=True)
class FrechetCheck:
    n: int
    kubo: float
    fd: float
    residual: float
    sign: int
    step: float


def frechet_check(state: GibbsState, v: HermitianOperator, n: int,
                  h: float | None = None, eps: float = 0.25) -> FrechetCheck:
    """Compare the n-th derivative of the free energy along v against
    (-1)^n times the n-point value.

    The identity is asserted by tests only for n <= 3 with centered v; n = 4
    is computed and reported without assertion (disconnected corrections).
    Directions must be centered for n >= 2 (for pure-gauge directions use
    free_energy_derivative directly, whose value is 0 beyond first order).
    """
    if not 1 <= n <= 4:
        raise InputError(f"derivative order must be in 1..4, got {n}")
    mean = reg_mean(state, v).mean
    if n >= 2 and abs(mean) > 1e-9 * (1.0 + operator_norm_general(v.entries)):
        raise PreconditionError(
            f"direction must be centered for n >= 2 (reg_mean = {mean:.3e})"
        )
    fd, h = free_energy_derivative(state, v, n, h=h, eps=eps)
    res = kubo_n_point(state, [v] * n)
    sign = -1 if n % 2 else 1
    return FrechetCheck(
        n=n,
        kubo=res.value,
        fd=fd,
        residual=abs(fd - sign * res.value),
        sign=sign,
        step=h,
    )


# -- the estimate chain -----------------------------------------------------------


def delta_ladder(n: int, eps: float) -> np.ndarray:
    """Exponent ladder delta_0..delta_n: endpoints 1/2+eps, interior strictly
    decreasing by 2 eps / n, all inside [1/2-eps, 1/2+eps]."""
    if n < 1:
        raise InputError(f"order must be >= 1, got {n}")
    if not (0.0 < eps < 0.5):
        raise InputError(f"eps must lie in (0, 1/2), got {eps!r}")
    ladder = np.empty(n + 1)
    ladder[0] = ladder[n] = 0.5 + eps
    for j in range(1, n):
        ladder[j] = 0.5 + eps - 2.0 * j * eps / n
    return ladder


@dataclass(frozen=True)
class FactorRecord:
    """One verified inequality: margin = rhs - lhs, nonnegative when it holds."""

    name: str
    lhs: float
    rhs: float
    margin: float
    detail: dict = field(default_factory=dict)

    def __post_init__(self):
        for attr in ("lhs", "rhs", "margin"):
            object.__setattr__(self, attr, float(getattr(self, attr)))

    @property
    def ok(self) -> bool:
        scale = max(abs(self.lhs), abs(self.rhs), 1.0)
        return bool(self.margin >= -MARGIN_RTOL * scale)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "margin": self.margin,
            "ok": self.ok,
            "detail": dict(self.detail),
        }


@dataclass(frozen=True)
class BoundLedger:
    """Per-factor margins of the bound chain plus the assembled bounds.

    final_bound is the closed form as printed; rederived_bound multiplies the
    verified factors back together (with the exact exponent products instead
    of their integer roundups) and carries the same (n-1)! normalization as
    kubo_abs, so kubo_abs <= rederived_bound is the gating comparison.  The
    bare simplex-integral modulus and its bound are kept alongside for the
    as-printed, non-gating record.
    """

    n: int
    eps: float
    delta: np.ndarray
    gamma: np.ndarray
    factor_margins: list
    final_bound: float
    kubo_abs: float
    kubo_integral_abs: float
    rederived_bound: float
    rederived_bound_integral: float

    @property
    def min_margin(self) -> float:
        return float(min(rec.margin for rec in self.factor_margins))

    @property
    def all_margins_ok(self) -> bool:
        return all(rec.ok for rec in self.factor_margins)

    @property
    def dominated(self) -> bool:
        return bool(self.kubo_abs <= self.rederived_bound * (1.0 + MARGIN_RTOL))

    def to_json_dict(self) -> dict:
        return {
            "n": self.n,
            "eps": float(self.eps),
            "delta": self.delta.tolist(),
            "gamma": self.gamma.tolist(),
            "factor_margins": [rec.to_json_dict() for rec in self.factor_margins],
            "final_bound": float(self.final_bound),
            "kubo_abs": float(self.kubo_abs),
            "kubo_integral_abs": float(self.kubo_integral_abs),
            "rederived_bound": float(self.rederived_bound),
            "rederived_bound_integral": float(self.rederived_bound_integral),
            "min_margin": self.min_margin,
            "all_margins_ok": self.all_margins_ok,
            "dominated": self.dominated,
        }


def estimate_chain(state: GibbsState, directions, eps: float,
                   alpha_samples: int = 64, seed: int = 0) -> BoundLedger:
    """Verify every factor of the n-point bound chain on sampled alphas.

    Factors, in derivation order: the trace-norm collection of the rho^{a b}
    pieces; the sandwiched directions against their eps-norms; the spectral
    sup of H^gamma rho^{(1-b)a} against its analytic envelope; the alpha
    integrals of the ladder (closed forms); the 4-headroom of the exponent
    products; and the pointwise assembled bound on |Tr[...]| itself.  Failed
    factors surface as negative margins, never exceptions.
    """
    n = len(directions)
    beta = state.beta
    ladder = delta_ladder(n, eps)
    gamma = np.array([1.0 - ladder[j - 1] + ladder[j] for j in range(1, n + 1)])
    p = state.rho_eigenvalues
    logp = state.log_rho_eigenvalues
    z = state.partition_function()
    rho_beta_trace = float(np.sum(p**beta))
    hd = state.h_decomp
    records: list[FactorRecord] = []

    rng = np.random.default_rng(seed)
    alphas = np.vstack([np.eye(n), rng.dirichlet(np.ones(n), size=alpha_samples)])

    # trace-norm collection of the commuting rho^{alpha_j beta} factors
    worst = -np.inf
    for a_row in alphas:
        prod = np.eye(state.dim, dtype=np.complex128)
        for aj in a_row:
            prod = prod @ state.rho_power(aj * beta)
        lhs = float(np.sum(np.linalg.svd(prod, compute_uv=False)))
        worst = max(worst, lhs)
    records.append(FactorRecord(
        name="trace-holder",
        lhs=worst,
        rhs=rho_beta_trace,
        margin=rho_beta_trace - worst,
    ))

    # sandwiched directions: || R^delta_j V_j R^(1-delta_j) || <= ||V_j||_eps
    sandwich_norms = []
    vnorms = []
    for j in range(1, n + 1):
        dlt = ladder[j]
        vj = directions[j - 1]
        vm = vj.entries if isinstance(vj, HermitianOperator) else np.asarray(vj)
        lhs = operator_norm_general(
            fractional_power(hd, -dlt) @ vm @ fractional_power(hd, -(1.0 - dlt))
        )
        rhs = eps_norm(vj, hd, eps)
        sandwich_norms.append(lhs)
        vnorms.append(rhs)
        records.append(FactorRecord(
            name=f"sandwich[{j}]", lhs=lhs, rhs=rhs, margin=rhs - lhs,
            detail={"delta": float(dlt)},
        ))

    # spectral sup factors: || H^gamma_j rho^{(1-beta) alpha_j} || per sampled alpha
    h_eigs = hd.eigenvalues
    for j in range(1, n + 1):
        g = gamma[j - 1]
        htop = fractional_power(hd, g)
        worst_lhs = worst_rhs = 0.0
        worst_margin = np.inf
        worst_detail: dict = {}
        for a_row in alphas:
            aj = float(a_row[j - 1])
            if aj <= 0.0:
                continue  # the envelope is infinite on the face; nothing to check
            lhs = operator_norm_general(htop @ state.rho_power((1.0 - beta) * aj))
            c = (1.0 - beta) * aj
            x_star = g / c
            x_clamp = max(x_star, 1.0)
            pref = z ** (-aj * (1.0 - beta))
            sup_clamped = pref * x_clamp**g * np.exp(-c * x_clamp)
            rhs = pref * x_star**g * np.exp(-g)  # unclamped stationary envelope
            spec_max = float(np.max(h_eigs**g * np.exp(-c * (h_eigs + state.psi))))
            if rhs - lhs < worst_margin:
                worst_margin = rhs - lhs
                worst_lhs, worst_rhs = lhs, rhs
                worst_detail = {
                    "alpha_j": aj,
                    "spectrum_max": spec_max,
                    "sup_clamped": float(sup_clamped),
                    "sup_minus_spectrum": float(sup_clamped - spec_max),
                }
        records.append(FactorRecord(
            name=f"power-weight[{j}]",
            lhs=worst_lhs,
            rhs=worst_rhs,
            margin=worst_margin,
            detail=worst_detail,
        ))

    # alpha integrals of the ladder: closed forms, no sampling needed
    interior_margin = np.inf
    claimed = n / (2.0 * eps)
    for j in range(1, n):
        closed = 1.0 / (1.0 - gamma[j - 1])
        interior_margin = min(interior_margin, claimed - closed)
    if n == 1:
        interior_margin = 0.0
    bounded_lhs = float(n ** gamma[n - 1])
    assembled_lhs = n * bounded_lhs * (n / (2.0 * eps)) ** (n - 1)
    assembled_rhs = n**2 * float(n**n) / (2.0 * eps) ** (n - 1)
    records.append(FactorRecord(
        name="alpha-integrals",
        lhs=assembled_lhs,
        rhs=assembled_rhs,
        margin=min(interior_margin, n**2 - bounded_lhs, assembled_rhs - assembled_lhs),
        detail={
            "interior_integral": claimed,
            "interior_margin": float(interior_margin),
            "bounded_factor": bounded_lhs,
            "bounded_factor_cap": float(n**2),
        },
    ))

    # headroom of the exponent product: prod gamma^gamma <= 4
    gg = float(np.prod(gamma**gamma))
    records.append(FactorRecord(name="headroom", lhs=gg, rhs=4.0, margin=4.0 - gg))

    # pointwise assembled bound on the integrand itself
    vt = _directions_in_eigenbasis(state, directions)
    chain_vals = mc_chain(p, alphas, vt)
    pw_lhs = pw_rhs = 0.0
    worst_pw = np.inf
    for row, tval in zip(alphas, chain_vals):
        bound = rho_beta_trace
        for j in range(1, n + 1):
            aj = float(row[j - 1])
            g = gamma[j - 1]
            spec_max = float(np.max(h_eigs**g * np.exp(-(1.0 - beta) * aj * (h_eigs + state.psi))))
            bound *= spec_max * sandwich_norms[j - 1]
        if bound - abs(tval) < worst_pw:
            worst_pw = bound - abs(tval)
            pw_lhs, pw_rhs = abs(tval), bound
    records.append(FactorRecord(
        name="pointwise", lhs=float(pw_lhs), rhs=float(pw_rhs), margin=float(worst_pw),
    ))

    # assembled bounds
    vprod = float(np.prod(vnorms))
    common = rho_beta_trace * z ** (-(1.0 - beta)) * np.exp(-n)
    final_bound = 4.0 * common * (2.0 * eps) * n**2 * float(n**n) * float(
        np.prod([vn / (2.0 * eps * (1.0 - beta)) for vn in vnorms])
    )
    rederived_integral = common * vprod * (1.0 - beta) ** (-n) * gg \
        * float(n ** (1.0 + gamma[n - 1])) * (n / (2.0 * eps)) ** (n - 1)

    result = kubo_n_point(state, directions)
    kubo_abs = result.modulus
    fact = math.factorial(n - 1)
    return BoundLedger(
        n=n,
        eps=eps,
        delta=ladder,
        gamma=gamma,
        factor_margins=records,
        final_bound=final_bound,
        kubo_abs=kubo_abs,
        kubo_integral_abs=kubo_abs / fact,
        rederived_bound=rederived_integral * fact,
        rederived_bound_integral=rederived_integral,
    )


# -- Taylor probes ----------------------------------------------------------------


@dataclass(frozen=True)
class TaylorProbe:
    """Taylor data of the free energy along a ray, with direct recomputation.

    coeffs[k] is the k-th Taylor coefficient (derivative / k!); orders 1..3
    come from the frechet_check stencil machinery, higher orders from wider
    Richardson-extrapolated central differences.  partial_sums[m, i] is the
    order-m sum at lambda_grid[i]; direct[i] the recomputed free energy.
    converged demands the partial-sum error halve per added order (or sit at
    the noise floor) for |lambda| <= 0.8 min(1, radius_bound).
    """

    coeffs: np.ndarray
    lambda_grid: np.ndarray
    partial_sums: np.ndarray
    direct: np.ndarray
    radius_bound: float
    converged: bool

    def errors(self) -> np.ndarray:
        return np.abs(self.partial_sums - self.direct[None, :])

    def terms(self) -> np.ndarray:
        """|c_k lambda^k| per order and grid point."""
        k = np.arange(self.coeffs.size)
        return np.abs(self.coeffs[:, None] * self.lambda_grid[None, :] ** k[:, None])

    def tail_envelope_rate(self, lam_index: int, start_order: int = 2,
                           floor: float = 1e-12) -> float:
        """Geometric decay rate of the tail terms at one grid point.

        Raw consecutive ratios are meaningless whenever a coefficient crosses
        zero, so the rate is the smallest r with
        |c_j lam^j| <= |c_k0 lam^k0| r^(j-k0) across the tail (anchored
        envelope); terms below floor*(1+|direct|) are treated as converged.
        """
        t = self.terms()[:, lam_index]
        lo = floor * (1.0 + abs(self.direct[lam_index]))
        return _envelope_rate(t[start_order:], lo)

    def to_json_dict(self) -> dict:
        return {
            "coeffs": self.coeffs.tolist(),
            "lambda_grid": self.lambda_grid.tolist(),
            "partial_sums": self.partial_sums.tolist(),
            "direct": self.direct.tolist(),
            "radius_bound": self.radius_bound,
            "converged": self.converged,
        }


def _envelope_rate(vals: np.ndarray, floor: float) -> float:
    """Smallest r with vals[j] <= max(vals[0], floor) * r^j; sub-floor entries
    are ignored.  Returns 0 when the whole tail sits below the floor."""
    anchor = max(float(vals[0]), floor)
    worst = 0.0
    for j in range(1, len(vals)):
        v = float(vals[j])
        if v <= floor:
            continue
        worst = max(worst, (v / anchor) ** (1.0 / j))
    return worst


def _endpoint_rate(vals: np.ndarray, floor: float) -> float:
    """Average per-order decay across the tail: (last/first)^(1/span), with
    both endpoints floored.  Intermediate entries are deliberately ignored;
    they fluctuate when successive series terms partially cancel."""
    if len(vals) < 2:
        return 0.0
    first = max(float(vals[0]), floor)
    last = max(float(vals[-1]), floor)
    return (last / first) ** (1.0 / (len(vals) - 1))


NOISE_FLOOR = 1e-10


def taylor_probe(state: GibbsState, v: HermitianOperator, lambda_grid,
                 max_order: int = 6, eps: float = 0.25,
                 noise_floor: float = NOISE_FLOOR) -> TaylorProbe:
    """Probe the Taylor series of the free energy along v.

    radius_bound = 2 eps (1 - beta) / ||V||_eps is the guaranteed convergence
    radius; the grid must stay inside the hood.  max_order <= 8 (stencil cost
    and conditioning grow quickly past that).
    """
    if max_order < 1 or max_order > 8:
        raise InputError(f"max_order must be in 1..8, got {max_order}")
    grid = np.asarray(lambda_grid, dtype=np.float64)
    if grid.size == 0:
        raise InputError("lambda grid is empty")
    vnorm = eps_norm(v, state.h_decomp, eps)
    hood_radius = (1.0 - state.beta) / vnorm if vnorm > 0 else np.inf
    if np.max(np.abs(grid)) >= hood_radius:
        raise HoodViolationError(
            "lambda grid leaves the hood",
            (1.0 - state.beta) - np.max(np.abs(grid)) * vnorm,
        )
    radius = 2.0 * eps * (1.0 - state.beta) / vnorm if vnorm > 0 else np.inf

    f = psi_ray(state, v, eps)
    cache: dict = {}
    coeffs = np.zeros(max_order + 1)
    coeffs[0] = state.psi
    if vnorm > 0.0:
        for k in range(1, max_order + 1):
            m = max_stencil_offset(k)
            h_cap = 0.9 * hood_radius / m
            if k <= 3:
                h = min(1e-2 * radius if np.isfinite(radius) else 0.1, h_cap)
            else:
                h = min(0.3, 0.35 * (radius if np.isfinite(radius) else 1.0), h_cap)
            fd, _ = free_energy_derivative(state, v, k, h=h, eps=eps, cache=cache)
            coeffs[k] = fd / math.factorial(k)

    powers = grid[None, :] ** np.arange(max_order + 1)[:, None]
    terms = coeffs[:, None] * powers
    partial = np.cumsum(terms, axis=0)
    direct = np.array([f(lam) for lam in grid])

    # convergence scope: |lambda| <= 0.8 min(1, guaranteed radius).  The error
    # tail must halve per added order on average (endpoint fit; stepwise
    # ratios break down when successive series terms partially cancel).
    scope = np.abs(grid) <= 0.8 * min(1.0, radius) + 1e-12
    converged = True
    errs = np.abs(partial - direct[None, :])
    for i in np.nonzero(scope)[0]:
        floor = noise_floor * (1.0 + abs(direct[i]))
        if _endpoint_rate(errs[2:, i], floor) > 0.5:
            converged = False
    return TaylorProbe(
        coeffs=coeffs,
        lambda_grid=grid,
        partial_sums=partial,
        direct=direct,
        radius_bound=radius,
        converged=converged,
    )


def taylor_to_csv(probe: TaylorProbe, path) -> None:
    """One row per (lambda, order): coefficient, partial sum, direct value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "order", "coefficient", "partial_sum", "direct"])
        for i, lam in enumerate(probe.lambda_grid):
            for k in range(probe.coeffs.size):
                writer.writerow([
                    repr(float(lam)), k, repr(float(probe.coeffs[k])),
                    repr(float(probe.partial_sums[k, i])), repr(float(probe.direct[i])),
                ])
