"""Batch verification harness: configuration, seeded ensembles, suite
orchestration, and machine-readable reports.

Every suite turns one proved statement into per-instance check records with
a signed margin; a record passes iff margin >= -tolerance.  Fixed
(config, seed) reproduces the records exactly (runtime fields aside),
regardless of how instances are scheduled.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .backend import backend_name
from .epsnorms import (
    comparability_check,
    eps_norm,
    equivalence_constants,
    form_bound_surrogate,
    monotonicity_scan,
)
from .errors import ConfigError, HoodViolationError
from .gibbs import GibbsState, center, make_state, perturb, reg_mean
from .kubo import (
    estimate_chain,
    frechet_check,
    kubo_n_point,
    kubo_oracle,
    kubo_quadrature,
    taylor_probe,
)
from .manifold import chart_transition, route_independence, transport
from .speccalc import HermitianOperator, operator_norm_general

SUITE_NAMES = (
    "lemma2-monotonicity",
    "lemma1-formbound",
    "norm-equivalence",
    "comparability",
    "mean-lambda",
    "kubo-oracle",
    "frechet",
    "estimate-chain",
    "taylor-radius",
    "transport",
    "route-independence",
)

# suites that perturb states and therefore need the target norm inside the hood
HOOD_SUITES = frozenset(
    ("norm-equivalence", "comparability", "frechet", "estimate-chain",
     "taylor-radius", "transport", "route-independence")
)

CLAIMS = {
    "lemma2-monotonicity": "eps-norm nondecreasing in eps; 0-norm <= eps-norm <= omega-norm",
    "lemma1-formbound": "|<psi,X psi>| <= ||X||_0 <psi,H psi> on random vectors",
    "norm-equivalence": "chart norm ratios bracketed by the constants [m, M]",
    "comparability": "mixed-power factors are bounded with bounded inverses",
    "mean-lambda": "regularized mean independent of the splitting parameter",
    "kubo-oracle": "closed-form n-point value matches integral oracles",
    "frechet": "free-energy derivatives equal signed n-point values (n <= 3)",
    "estimate-chain": "every factor bound holds; |value| below the assembled bound",
    "taylor-radius": "partial sums converge inside the guaranteed radius",
    "transport": "parallel transport is affine, flat, and kills zero",
    "route-independence": "split perturbation routes land on the same state",
}


@dataclass
class RunConfig:
    dim: int = 6
    epsilon: float = 0.25
    beta0: float = 0.5
    spectrum: dict = field(default_factory=lambda: {"kind": "linear", "params": {}})
    perturbation: dict = field(
        default_factory=lambda: {"kind": "dense", "target_eps_norm": 0.3}
    )
    seeds: list = field(default_factory=lambda: list(range(10)))
    suites: list = field(default_factory=lambda: list(SUITE_NAMES))
    output_dir: str = "reports"

    def validate(self) -> None:
        if self.dim < 1:
            raise ConfigError(f"dim must be >= 1, got {self.dim}")
        if not (0.0 < self.epsilon < 0.5):
            raise ConfigError(f"epsilon must lie in (0, 1/2), got {self.epsilon}")
        if not (0.0 < self.beta0 < 1.0):
            raise ConfigError(f"beta0 must lie in (0,1), got {self.beta0}")
        if self.spectrum.get("kind") not in ("linear", "power"):
            raise ConfigError(f"spectrum kind must be linear|power, got {self.spectrum!r}")
        if self.perturbation.get("kind") not in ("diagonal", "dense", "offdiag"):
            raise ConfigError(
                f"perturbation kind must be diagonal|dense|offdiag, got {self.perturbation!r}"
            )
        target = float(self.perturbation.get("target_eps_norm", 0.3))
        if target <= 0.0:
            raise ConfigError(f"target_eps_norm must be positive, got {target}")
        if target >= 1.0 - self.beta0 and any(s in HOOD_SUITES for s in self.suites):
            raise ConfigError(
                f"target_eps_norm {target} >= 1 - beta0 = {1 - self.beta0}; "
                "hood-dependent suites would always fail their preconditions"
            )
        unknown = [s for s in self.suites if s not in SUITE_NAMES]
        if unknown:
            raise ConfigError(f"unknown suites {unknown}; valid: {list(SUITE_NAMES)}")

    def to_json_dict(self) -> dict:
        return {
            "dim": self.dim,
            "epsilon": self.epsilon,
            "beta0": self.beta0,
            "spectrum": self.spectrum,
            "perturbation": self.perturbation,
            "seeds": list(self.seeds),
            "suites": list(self.suites),
            "output_dir": self.output_dir,
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "RunConfig":
        cfg = RunConfig()
        for key in obj:
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config key {key!r}")
            setattr(cfg, key, obj[key])
        cfg.validate()
        return cfg

    @staticmethod
    def load(path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return RunConfig.from_json_dict(json.load(fh))

    def hash(self) -> str:
        canon = json.dumps(self.to_json_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Instance:
    label: int
    seed_key: tuple
    h0: HermitianOperator
    x: HermitianOperator
    vs: list

    def state(self, beta0: float) -> GibbsState:
        return make_state(self.h0, beta=beta0)


def _spectrum_values(config: RunConfig) -> np.ndarray:
    params = config.spectrum.get("params", {}) or {}
    c = float(params.get("c", 1.0))
    if config.spectrum["kind"] == "linear":
        s = 1.0
    else:
        s = float(params.get("s", 2.0))
    k = np.arange(config.dim, dtype=np.float64)
    return 1.0 + c * k**s


def _draw_hermitian(rng: np.random.Generator, dim: int, kind: str) -> HermitianOperator:
    if kind == "diagonal":
        return HermitianOperator.from_array(np.diag(rng.standard_normal(dim)))
    g = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    a = (g + g.conj().T) / 2.0
    if kind == "offdiag":
        np.fill_diagonal(a, 0.0)
    return HermitianOperator.from_array(a)


def _rescaled(op: HermitianOperator, h0, eps: float, target: float) -> HermitianOperator:
    current = eps_norm(op, h0, eps)
    if current == 0.0:
        raise ConfigError("drawn perturbation has zero eps-norm; cannot rescale")
    return HermitianOperator.from_array(op.entries * (target / current))


def gen_ensemble(config: RunConfig, seed: int = 0, n_directions: int = 4) -> list:
    """One instance per entry of config.seeds, deterministic in (seed, entry).

    H0 is diagonal from the spectrum law (min eigenvalue exactly 1); X and
    the direction list are Gaussian Hermitian draws of the configured kind,
    rescaled so their eps-norm against H0 hits target_eps_norm exactly.
    """
    config.validate()
    target = float(config.perturbation["target_eps_norm"])
    kind = config.perturbation["kind"]
    h0 = HermitianOperator.from_array(np.diag(_spectrum_values(config)))
    out = []
    for s in config.seeds:
        rng = np.random.default_rng(np.random.SeedSequence((int(seed), int(s))))
        x = _rescaled(_draw_hermitian(rng, config.dim, kind), h0, config.epsilon, target)
        vs = [
            _rescaled(_draw_hermitian(rng, config.dim, kind), h0, config.epsilon, target)
            for _ in range(n_directions)
        ]
        out.append(Instance(label=int(s), seed_key=(int(seed), int(s)), h0=h0, x=x, vs=vs))
    return out


# -- records and report -------------------------------------------------------------


@dataclass(frozen=True)
class CheckRecord:
    name: str
    claim: str
    passed: bool
    margin: float
    tolerance: float
    runtime: float
    detail: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "name": self.name,
            "claim": self.claim,
            "passed": self.passed,
            "margin": self.margin,
            "tolerance": self.tolerance,
            "runtime": self.runtime,
            "detail": dict(self.detail),
        }

    def comparison_key(self) -> tuple:
        detail = json.dumps(self.detail, sort_keys=True)
        return (self.name, self.claim, self.passed, self.margin, self.tolerance, detail)


def _record(suite: str, label, margin: float, tolerance: float, t0: float,
            detail: dict | None = None, subtag: str = "") -> CheckRecord:
    margin = float(margin)
    return CheckRecord(
        name=f"{suite}[{label}]{subtag}",
        claim=CLAIMS[suite],
        passed=bool(margin >= -tolerance),
        margin=margin,
        tolerance=float(tolerance),
        runtime=time.perf_counter() - t0,
        detail=detail or {},
    )


def _error_record(suite: str, label, err: Exception, t0: float) -> CheckRecord:
    subtag = ":in_hood" if isinstance(err, HoodViolationError) else ":error"
    return CheckRecord(
        name=f"{suite}[{label}]{subtag}",
        claim=CLAIMS[suite],
        passed=False,
        margin=float("-1e308"),
        tolerance=0.0,
        runtime=time.perf_counter() - t0,
        detail={"error": f"{type(err).__name__}: {err}"},
    )


@dataclass
class Report:
    records: list
    environment: dict
    warnings: list = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.records)

    def comparison_keys(self) -> list:
        return [r.comparison_key() for r in self.records]

    def to_json_dict(self) -> dict:
        return {
            "environment": self.environment,
            "warnings": list(self.warnings),
            "summary": {
                "records": len(self.records),
                "passed": sum(1 for r in self.records if r.passed),
                "failed": sum(1 for r in self.records if not r.passed),
            },
            "records": [r.to_json_dict() for r in self.records],
        }


# -- suites -------------------------------------------------------------------------


def _suite_rng(inst: Instance, salt: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(tuple(inst.seed_key) + (salt,)))


def _instance_seed(inst: Instance, salt: int = 0) -> int:
    a, b = inst.seed_key
    return (a * 1_000_003 + b * 101 + salt) % (2**31)


def _suite_lemma2(config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    scan = monotonicity_scan(inst.x, inst.h0)
    scale = max(scan.omega_norm, np.finfo(float).tiny)
    envelope = float(np.min(scan.omega_norm - scan.values)) / scale
    margin = min(-scan.max_violation, envelope)
    return [_record(
        "lemma2-monotonicity", inst.label, margin, 1e-10, t0,
        detail={"values": scan.values.tolist(), "omega_norm": scan.omega_norm},
    )]


def _suite_lemma1(config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    rng = _suite_rng(inst, 11)
    a = form_bound_surrogate(inst.x, inst.h0)
    h = inst.h0.entries
    xm = inst.x.entries
    worst = np.inf
    for _ in range(1000):
        v = rng.standard_normal(config.dim) + 1j * rng.standard_normal(config.dim)
        v /= np.linalg.norm(v)
        lhs = abs((v.conj() @ xm @ v).real)
        rhs = a * (v.conj() @ h @ v).real
        worst = min(worst, rhs + 1e-10 - lhs)
    return [_record("lemma1-formbound", inst.label, worst, 0.0, t0,
                    detail={"form_bound_surrogate": a})]


def _scaled_x(config: RunConfig, inst: Instance, fraction: float) -> HermitianOperator:
    target = fraction * (1.0 - config.beta0)
    return _rescaled(inst.x, inst.h0, config.epsilon, target)


def _suite_norm_equivalence(config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    eps = config.epsilon
    xs = _scaled_x(config, inst, 0.9)
    base = inst.state(config.beta0)
    state_x = perturb(base, xs, eps)
    consts = equivalence_constants(base.h_decomp, state_x.h_decomp, eps)
    rng = _suite_rng(inst, 23)
    worst = np.inf
    for _ in range(100):
        y = _draw_hermitian(rng, config.dim, "dense")
        ratio = eps_norm(y, state_x.h_decomp, eps) / eps_norm(y, base.h_decomp, eps)
        worst = min(worst, ratio - consts.m, consts.M - ratio)
    rec1 = _record("norm-equivalence", inst.label, worst, 1e-9, t0,
                   detail={"m": consts.m, "M": consts.M})
    t1 = time.perf_counter()
    comp = comparability_check(base.h_decomp, state_x.h_decomp, eps)
    rec2 = _record("norm-equivalence", inst.label, -comp.max_identity_residual, 1e-9,
                   t1, detail=comp.to_json_dict(), subtag=":inverses")
    return [rec1, rec2]


def _suite_comparability(config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    eps = config.epsilon
    xs = _scaled_x(config, inst, 0.9)
    base = inst.state(config.beta0)
    state_x = perturb(base, xs, eps)
    rep = comparability_check(base.h_decomp, state_x.h_decomp, eps)
    return [_record("comparability", inst.label, -rep.max_identity_residual, 1e-9, t0,
                    detail=rep.to_json_dict())]


def _suite_mean_lambda(config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    base = inst.state(config.beta0)
    grid = np.arange(0.1, 0.95, 0.1)
    rm = reg_mean(base, inst.x, grid)
    margin = 1e-10 * (1.0 + abs(rm.mean)) - rm.spread
    return [_record("mean-lambda", inst.label, margin, 0.0, t0,
                    detail={"mean": rm.mean, "spread": rm.spread})]


def _suite_kubo_oracle(config: RunConfig, inst: Instance) -> list:
    records = []
    base = inst.state(config.beta0)
    for n in (2, 3):
        t0 = time.perf_counter()
        dirs = inst.vs[:n]
        res = kubo_n_point(base, dirs)
        est = kubo_oracle(base, dirs, samples=200_000, seed=_instance_seed(inst, 5))
        margin = 5.0 * est.stderr - abs(res.value - est.value)
        margin = min(margin, 5.0 * est.imag_stderr - abs(res.imag_part - est.imag_value))
        records.append(_record(
            "kubo-oracle", inst.label, margin, 0.0, t0,
            detail={"n": n, "value": res.value, "oracle": est.value,
                    "stderr": est.stderr},
            subtag=f":mc-n{n}",
        ))
    t1 = time.perf_counter()
    dirs = inst.vs[:2]
    res2 = kubo_n_point(base, dirs)
    quad = kubo_quadrature(base, dirs)
    margin = 1e-6 * (1.0 + abs(res2.value)) - abs(res2.value - quad)
    records.append(_record("kubo-oracle", inst.label, margin, 0.0, t1,
                           detail={"value": res2.value, "quadrature": quad},
                           subtag=":quad-n2"))
    return records


def _centered_direction(base: GibbsState, v: HermitianOperator, h0,
                        eps: float, target: float) -> HermitianOperator:
    return _rescaled(center(base, v), h0, eps, target)


def _suite_frechet(config: RunConfig, inst: Instance) -> list:
    records = []
    base = inst.state(config.beta0)
    target = 0.5 * float(config.perturbation["target_eps_norm"])
    v = _centered_direction(base, inst.vs[0], inst.h0, config.epsilon, target)
    for n in (1, 2, 3):
        t0 = time.perf_counter()
        fc = frechet_check(base, v, n, eps=config.epsilon)
        margin = 1e-6 * (1.0 + abs(fc.kubo)) - fc.residual
        records.append(_record("frechet", inst.label, margin, 0.0, t0,
                               detail={"n": n, "fd": fc.fd, "kubo": fc.kubo},
                               subtag=f":n{n}"))
    return records


def _suite_estimate_chain(config: RunConfig, inst: Instance) -> list:
    records = []
    base = inst.state(config.beta0)
    for n in (1, 2, 3, 4):
        t0 = time.perf_counter()
        ledger = estimate_chain(base, inst.vs[:n], config.epsilon,
                                seed=_instance_seed(inst, 7))
        norm_margins = [
            rec.margin / max(abs(rec.lhs), abs(rec.rhs), 1.0)
            for rec in ledger.factor_margins
        ]
        dom = (ledger.rederived_bound - ledger.kubo_abs) / max(ledger.rederived_bound, 1.0)
        margin = min(min(norm_margins), dom)
        records.append(_record(
            "estimate-chain", inst.label, margin, 1e-9, t0,
            detail={
                "n": n,
                "kubo_abs": ledger.kubo_abs,
                "rederived_bound": ledger.rederived_bound,
                "final_bound_as_printed": ledger.final_bound,
                "printed_bound_holds": bool(
                    ledger.kubo_integral_abs <= ledger.final_bound
                ),
            },
            subtag=f":n{n}",
        ))
    return records


def _suite_taylor(config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    eps = config.epsilon
    base = inst.state(config.beta0)
    target = eps * (1.0 - config.beta0)  # half the guaranteed radius condition
    v = _rescaled(inst.vs[1], inst.h0, eps, target)
    probe_lambda = 0.5 * 2.0 * eps * (1.0 - config.beta0) / target  # = 1.0
    grid = np.array([0.25, 0.5, 1.0]) * probe_lambda
    probe = taylor_probe(base, v, grid, max_order=6, eps=eps)
    errs = probe.errors()
    direct = probe.direct[-1]
    margin1 = 1e-6 * (1.0 + abs(direct)) - errs[-1, -1]
    rate = probe.tail_envelope_rate(len(grid) - 1)
    margin2 = 0.9 - rate
    margin3 = 0.0 if probe.converged else -1.0
    return [_record(
        "taylor-radius", inst.label, min(margin1, margin2, margin3), 0.0, t0,
        detail={"radius_bound": probe.radius_bound,
                "order6_error": float(errs[-1, -1]),
                "tail_decay_rate": float(rate)},
    )]


def _suite_transport(config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    eps = config.epsilon
    base = inst.state(config.beta0)
    xs = _scaled_x(config, inst, 0.5)
    state_b = perturb(base, 0.8 * xs, eps)
    state_c = perturb(base, (-0.6) * xs, eps)
    z1, z2 = inst.vs[0], inst.vs[1]
    scale = max(operator_norm_general(z1.entries), operator_norm_general(z2.entries), 1.0)

    zero = transport(HermitianOperator.from_array(np.zeros((config.dim, config.dim))),
                     base, state_b)
    r_zero = operator_norm_general(zero.entries)

    two_leg = transport(transport(z1, base, state_b), state_b, state_c)
    direct = transport(z1, base, state_c)
    r_flat = operator_norm_general(two_leg.entries - direct.entries)

    lam = 0.375
    mixed = transport(HermitianOperator.from_array(
        lam * z1.entries + (1 - lam) * z2.entries), base, state_b)
    affine = lam * transport(z1, base, state_b).entries \
        + (1 - lam) * transport(z2, base, state_b).entries
    r_affine = operator_norm_general(mixed.entries - affine)

    margin = -max(r_zero, r_flat, r_affine) / scale
    rec1 = _record("transport", inst.label, margin, 1e-12, t0,
                   detail={"zero": r_zero, "flatness": r_flat, "affinity": r_affine})

    t1 = time.perf_counter()
    trans = chart_transition(base, 0.8 * xs, 0.15 * xs, eps)
    bracket = min(trans.norm_ratio - trans.constants.m,
                  trans.constants.M - trans.norm_ratio)
    rec2 = _record("transport", inst.label, bracket, 1e-9, t1,
                   detail=trans.to_json_dict(), subtag=":transition")
    return [rec1, rec2]


def _suite_route(config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    eps = config.epsilon
    base = inst.state(config.beta0)
    xs = _scaled_x(config, inst, 0.3)
    rng = _suite_rng(inst, 47)
    g1 = _rescaled(_draw_hermitian(rng, config.dim, "dense"), inst.h0, eps,
                   0.1 * (1.0 - config.beta0))
    g2 = _rescaled(_draw_hermitian(rng, config.dim, "dense"), inst.h0, eps,
                   0.1 * (1.0 - config.beta0))
    parts = [
        HermitianOperator.from_array(0.5 * xs.entries + g1.entries),
        HermitianOperator.from_array(0.3 * xs.entries - g1.entries + g2.entries),
        HermitianOperator.from_array(0.2 * xs.entries - g2.entries),
    ]
    rep = route_independence(base, parts, eps)
    margin = 1e-11 - rep.max_rho_deviation
    return [_record("route-independence", inst.label, margin, 0.0, t0,
                    detail={"deviation": rep.max_rho_deviation, "steps": rep.steps})]


SUITE_FUNCS = {
    "lemma2-monotonicity": _suite_lemma2,
    "lemma1-formbound": _suite_lemma1,
    "norm-equivalence": _suite_norm_equivalence,
    "comparability": _suite_comparability,
    "mean-lambda": _suite_mean_lambda,
    "kubo-oracle": _suite_kubo_oracle,
    "frechet": _suite_frechet,
    "estimate-chain": _suite_estimate_chain,
    "taylor-radius": _suite_taylor,
    "transport": _suite_transport,
    "route-independence": _suite_route,
}


def _run_one(suite: str, config: RunConfig, inst: Instance) -> list:
    t0 = time.perf_counter()
    try:
        return SUITE_FUNCS[suite](config, inst)
    except ConfigError:
        raise
    except Exception as err:  # noqa: BLE001 - failures become failed records
        return [_error_record(suite, inst.label, err, t0)]


def run_suite(config: RunConfig, seed: int = 0) -> Report:
    """Run the selected suites over the generated ensemble."""
    config.validate()
    instances = gen_ensemble(config, seed)
    threads = int(os.environ.get("QIMLAB_THREADS", "1"))
    records: list = []
    for suite in config.suites:
        if threads > 1 and len(instances) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                for recs in pool.map(lambda i: _run_one(suite, config, i), instances):
                    records.extend(recs)
        else:
            for inst in instances:
                records.extend(_run_one(suite, config, inst))
    warnings = []
    if not instances:
        warnings.append("empty ensemble: no seeds configured")
    report = Report(
        records=records,
        environment={
            "seed": int(seed),
            "config_hash": config.hash(),
            "version": __version__,
            "backend": backend_name(),
            "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        },
        warnings=warnings,
    )
    return report


# -- emission -------------------------------------------------------------------------


CSV_FIELDS = ("name", "claim", "passed", "margin", "tolerance", "runtime")


def emit_report(report: Report, out_dir, fmt: str = "json") -> list:
    """Write the report under out_dir; returns the written paths."""
    if fmt not in ("json", "csv"):
        raise ConfigError(f"format must be json|csv, got {fmt!r}")
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    path = os.path.join(out_dir, f"report.{fmt}")
    try:
        if fmt == "json":
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(report.to_json_dict(), fh, indent=2)
                fh.write("\n")
        else:
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(CSV_FIELDS)
                for rec in report.records:
                    row = rec.to_json_dict()
                    writer.writerow([row[k] for k in CSV_FIELDS])
    except OSError as err:
        raise OSError(f"cannot write report to {path}: {err}") from err
    paths.append(path)
    return paths
