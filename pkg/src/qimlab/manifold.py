"""Charts, mixtures, parallel transport, and route independence.

Charts are represented extensionally: a base state plus a centered score.
Transitions between overlapping charts are computed on demand, and the
transport of a tangent representative is nothing but recentering its
{Z + a I} line onto the destination's zero-mean hyperplane, so affinity and
path independence hold to machine precision by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .epsnorms import EquivalenceConstants, eps_norm, equivalence_constants
from .errors import HoodViolationError, InputError
from .gibbs import GibbsState, center, in_hood, make_state, perturb
from .speccalc import HermitianOperator, operator_norm_general

DENSITY_ATOL = 1e-10


@dataclass(frozen=True)
class ChartPoint:
    """A state expressed in the chart of ``base``: the centered score plus
    the eps that fixes the hood geometry."""

    base: GibbsState
    score: HermitianOperator
    epsilon: float


def to_chart(base: GibbsState, x: HermitianOperator, eps: float) -> ChartPoint:
    """Chart coordinate of the perturbed state: the zero-mean representative
    of X's line.  Recovering the state from the score reproduces the same
    rho (the mean shift is pure gauge)."""
    hood = in_hood(base, x, eps)
    if not hood.ok:
        raise HoodViolationError("state is outside the chart hood", hood.margin)
    return ChartPoint(base=base, score=center(base, x), epsilon=eps)


def from_chart(point: ChartPoint) -> GibbsState:
    return perturb(point.base, point.score, point.epsilon)


def plus_mixture(base: GibbsState, x: HermitianOperator, y: HermitianOperator,
                 lam: float, eps: float) -> GibbsState:
    """Exponent-level convex mixture: the state of lam X + (1-lam) Y.

    Convexity of the norm ball makes the mixture's hood membership follow
    from the endpoints', but each endpoint must be checked."""
    if not (0.0 <= lam <= 1.0):
        raise InputError(f"mixture weight must lie in [0,1], got {lam!r}")
    for tag, op in (("X", x), ("Y", y)):
        hood = in_hood(base, op, eps)
        if not hood.ok:
            raise HoodViolationError(f"mixture endpoint {tag} is outside the hood", hood.margin)
    mix = HermitianOperator.from_array(lam * x.entries + (1.0 - lam) * y.entries)
    return perturb(base, mix, eps)


def _as_density(rho) -> np.ndarray:
    m = rho.entries if isinstance(rho, HermitianOperator) else np.asarray(rho, dtype=np.complex128)
    tr = float(np.trace(m).real)
    if abs(tr - 1.0) > DENSITY_ATOL:
        raise InputError(f"density matrix must have unit trace, got {tr!r}")
    w = np.linalg.eigvalsh((m + m.conj().T) / 2.0)
    if w[0] < -DENSITY_ATOL:
        raise InputError(f"density matrix must be PSD, min eigenvalue {w[0]!r}")
    return m


def minus_mixture(rho1, rho2, lam: float) -> np.ndarray:
    """Density-matrix-level convex mixture lam rho1 + (1-lam) rho2."""
    if not (0.0 <= lam <= 1.0):
        raise InputError(f"mixture weight must lie in [0,1], got {lam!r}")
    m1 = _as_density(rho1)
    m2 = _as_density(rho2)
    return lam * m1 + (1.0 - lam) * m2


def transport(z: HermitianOperator, src: GibbsState, dst: GibbsState) -> HermitianOperator:
    """Parallel transport of a tangent representative: recenter Z on dst.

    src fixes the tangent space the representative came from; the result only
    depends on dst because transport just moves the point of the line
    {Z + a I} onto dst's zero-mean hyperplane (flat, torsion-free)."""
    del src  # the connection is flat: the source hyperplane does not matter
    return center(dst, z)


@dataclass(frozen=True)
class ChartTransition:
    """A state seen in two overlapping charts, with the norm-ratio bracket."""

    coord_in_0: ChartPoint
    coord_in_x: ChartPoint
    norm_ratio: float
    constants: EquivalenceConstants
    rho_deviation: float

    @property
    def ratio_bracketed(self) -> bool:
        slack = 1e-9 * max(1.0, self.norm_ratio)
        return self.constants.m - slack <= self.norm_ratio <= self.constants.M + slack

    def to_json_dict(self) -> dict:
        return {
            "m": self.constants.m,
            "M": self.constants.M,
            "norm_ratio": self.norm_ratio,
            "ratio_bracketed": self.ratio_bracketed,
            "deviations": {"rho": self.rho_deviation},
        }


def chart_transition(base0: GibbsState, x: HermitianOperator, y: HermitianOperator,
                     eps: float) -> ChartTransition:
    """Express the state reached by X then Y in both the base chart and the
    chart centered at X, and verify the connecting coordinate's norm ratio
    lies inside the equivalence bracket [m, M]."""
    state_x = perturb(base0, x, eps)
    hood_y = in_hood(state_x, y, eps)
    if not hood_y.ok:
        raise HoodViolationError("Y leaves the hood of the X-chart", hood_y.margin)
    total = HermitianOperator.from_array(x.entries + y.entries)
    coord0 = to_chart(base0, total, eps)
    coordx = ChartPoint(base=state_x, score=center(state_x, y), epsilon=eps)

    norm_x = eps_norm(y, state_x.h_decomp, eps)
    norm_0 = eps_norm(y, base0.h_decomp, eps)
    ratio = norm_x / norm_0 if norm_0 > 0 else 1.0
    consts = equivalence_constants(base0.h_decomp, state_x.h_decomp, eps)

    via_x = perturb(state_x, coordx.score, eps)
    via_0 = from_chart(coord0)
    dev = operator_norm_general(via_x.rho() - via_0.rho())
    return ChartTransition(
        coord_in_0=coord0,
        coord_in_x=coordx,
        norm_ratio=ratio,
        constants=consts,
        rho_deviation=dev,
    )


@dataclass(frozen=True)
class RouteReport:
    max_rho_deviation: float
    steps: int
    final_beta: float


def route_independence(base: GibbsState, parts, eps: float) -> RouteReport:
    """Walk the parts sequentially (hood-checked at every step, with the
    updated tag) and compare the arrival rho against the single-shot state of
    the summed perturbation.  The shift bookkeeping cancels in rho."""
    current = base
    total = np.zeros((base.dim, base.dim), dtype=np.complex128)
    for k, part in enumerate(parts):
        try:
            current = perturb(current, part, eps)
        except HoodViolationError as err:
            raise HoodViolationError(f"route step {k} leaves the hood", err.margin) from err
        total = total + part.entries
    direct = make_state(
        HermitianOperator.from_array(base.H.entries + total), beta=base.beta
    )
    dev = operator_norm_general(current.rho() - direct.rho())
    return RouteReport(max_rho_deviation=dev, steps=len(parts), final_beta=current.beta)


def hood_convexity_probe(base: GibbsState, x: HermitianOperator, y: HermitianOperator,
                         eps: float, lams=(0.25, 0.5, 0.75)) -> dict:
    """Sampled check that the hood ball is convex, plus the (+1)/(-1) mixture
    disagreement at lambda = 1/2.  Global convexity of the full extended
    manifold is an open problem; this only reports, never asserts."""
    report = {"endpoint_margins": [in_hood(base, x, eps).margin, in_hood(base, y, eps).margin]}
    mix_margins = []
    for lam in lams:
        mix = HermitianOperator.from_array(lam * x.entries + (1.0 - lam) * y.entries)
        mix_margins.append(in_hood(base, mix, eps).margin)
    report["mixture_margins"] = mix_margins
    plus = plus_mixture(base, x, y, 0.5, eps).rho()
    minus = minus_mixture(perturb(base, x, eps).rho(), perturb(base, y, eps).rho(), 0.5)
    report["plus_minus_distance"] = operator_norm_general(plus - minus)
    return report
