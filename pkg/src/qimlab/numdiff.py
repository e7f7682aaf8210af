"""Central finite differences with Richardson extrapolation.

Derivatives of the free energy along perturbation rays are taken from
machine-precision evaluations of an analytic scalar function, so central
stencils on minimal symmetric supports plus extrapolation in the h^2 error
series converge fast; the step can stay large enough to dodge cancellation.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import InputError


def central_weights(order: int, halfwidth: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Stencil offsets and weights for the order-th derivative at 0.

    Offsets are -m..m with m = halfwidth (default: the minimal ceil(order/2)).
    Weights solve the moment system sum_j a_j j^p = p! delta_{p,order} for
    p = 0..2m, giving the classic O(h^2) central formulas; apply as
    sum_j a_j f(j h) / h^order.
    """
    if order < 1:
        raise InputError(f"derivative order must be >= 1, got {order}")
    m = halfwidth if halfwidth is not None else (order + 1) // 2
    if 2 * m < order:
        raise InputError(f"halfwidth {m} too small for order {order}")
    offsets = np.arange(-m, m + 1, dtype=np.float64)
    npts = offsets.size
    vander = np.vstack([offsets**p for p in range(npts)])
    rhs = np.zeros(npts)
    rhs[order] = float(math.factorial(order))
    weights = np.linalg.solve(vander, rhs)
    return offsets, weights


def derivative(f, order: int, h: float, halfwidth: int | None = None,
               richardson: int = 2, cache: dict | None = None) -> float:
    """order-th derivative of f at 0 from steps h, h/2, ..., h/2^richardson.

    Each step gives the O(h^2) central estimate; `richardson` levels of
    extrapolation in h^2 lift the accuracy to O(h^(2+2*richardson)).  A cache
    dict (lambda -> f(lambda)) may be supplied to share evaluations between
    calls; stencil nodes at different levels are exact binary fractions of h,
    so float keys collide exactly where they should.
    """
    if h <= 0.0:
        raise InputError(f"step must be positive, got {h!r}")
    offsets, weights = central_weights(order, halfwidth)
    if cache is None:
        cache = {}

    def feval(lam: float) -> float:
        if lam not in cache:
            cache[lam] = float(f(lam))
        return cache[lam]

    estimates = []
    for level in range(richardson + 1):
        step = h / (2.0**level)
        acc = 0.0
        for off, wgt in zip(offsets, weights):
            if wgt == 0.0:
                continue
            acc += wgt * feval(off * step)
        estimates.append(acc / step**order)

    # extrapolate the h^2 series
    table = list(estimates)
    factor = 4.0
    while len(table) > 1:
        table = [
            (factor * fine - coarse) / (factor - 1.0)
            for coarse, fine in zip(table[:-1], table[1:])
        ]
        factor *= 4.0
    return float(table[0])


def max_stencil_offset(order: int, halfwidth: int | None = None) -> int:
    """Largest |offset| the derivative() stencil touches at the base step."""
    m = halfwidth if halfwidth is not None else (order + 1) // 2
    return m
