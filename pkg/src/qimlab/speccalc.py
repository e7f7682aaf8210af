"""Hermitian spectral calculus.

Everything downstream (norms, states, correlation functions) runs on one
primitive: eigendecompose a Hermitian matrix once, then lift scalar maps
(fractional powers, exp, log) through the eigenbasis.  Matrices are small
(d up to a few hundred), so exactness and a single cached decomposition per
operator beat any scaling trick.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InputError

HERMITICITY_RTOL = 1e-12
RECONSTRUCTION_RTOL = 1e-11
PSD_RTOL = 1e-12


def _as_complex_matrix(entries) -> np.ndarray:
    a = np.asarray(entries, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise InputError(f"expected a square matrix, got shape {a.shape}")
    if a.shape[0] < 1:
        raise InputError("dimension must be >= 1")
    if not (np.all(np.isfinite(a.real)) and np.all(np.isfinite(a.imag))):
        raise InputError("matrix has non-finite entries")
    return a


@dataclass(frozen=True)
class HermitianOperator:
    """A d x d complex matrix, symmetrized to (A + A^dag)/2 at construction.

    The symmetrization residual ||A - A^dag||_op relative to ||A||_op is
    recorded; file-loaded matrices carry round-off and should not fail hard,
    but a residual above ``HERMITICITY_RTOL`` does.
    """

    entries: np.ndarray
    sym_residual: float = field(default=0.0, compare=False)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @staticmethod
    def from_array(entries, *, rtol: float = HERMITICITY_RTOL) -> "HermitianOperator":
        a = _as_complex_matrix(entries)
        sym = (a + a.conj().T) / 2.0
        scale = operator_norm_general(sym)
        resid = operator_norm_general(a - sym)  # = ||A - A^dag||/2
        rel = 2.0 * resid / scale if scale > 0 else 0.0
        if rel > rtol:
            raise InputError(
                f"matrix is not Hermitian: asymmetry {rel:.3e} exceeds {rtol:.1e}"
            )
        sym.setflags(write=False)
        return HermitianOperator(entries=sym, sym_residual=rel)

    def __post_init__(self):
        self.entries.setflags(write=False)

    # -- convenience arithmetic (results are re-symmetrized exactly) --------
    def __add__(self, other: "HermitianOperator") -> "HermitianOperator":
        return HermitianOperator.from_array(self.entries + other.entries)

    def __sub__(self, other: "HermitianOperator") -> "HermitianOperator":
        return HermitianOperator.from_array(self.entries - other.entries)

    def __mul__(self, c: float) -> "HermitianOperator":
        return HermitianOperator.from_array(self.entries * float(c))

    __rmul__ = __mul__

    def shifted(self, c: float) -> "HermitianOperator":
        """A + c*I."""
        return HermitianOperator.from_array(
            self.entries + float(c) * np.eye(self.dim)
        )

    def to_json_dict(self) -> dict:
        return matrix_to_json(self.entries)


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigenvalues (ascending) and orthonormal eigenvectors of a Hermitian matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def __post_init__(self):
        self.eigenvalues.setflags(write=False)
        self.eigenvectors.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.eigenvalues.shape[0]

    def reconstruct(self) -> np.ndarray:
        u = self.eigenvectors
        return (u * self.eigenvalues) @ u.conj().T

    def unitarity_residual(self) -> float:
        u = self.eigenvectors
        return operator_norm_general(u.conj().T @ u - np.eye(self.dim))


def decompose(a: HermitianOperator) -> SpectralDecomposition:
    """Eigendecompose; eigenvalues come back ascending (LAPACK heevd order)."""
    w, u = np.linalg.eigh(a.entries)
    return SpectralDecomposition(eigenvalues=w, eigenvectors=u)


def apply_function(d: SpectralDecomposition, f) -> HermitianOperator:
    """Lift the scalar map f through the eigenbasis: U diag(f(lambda)) U^dag.

    Raises DomainError naming the offending eigenvalue when f is undefined
    (non-finite) there.
    """
    with np.errstate(all="ignore"):
        fw = np.asarray(f(d.eigenvalues), dtype=np.float64)
    if fw.shape != d.eigenvalues.shape:
        raise InputError("scalar map must act elementwise on the spectrum")
    bad = ~np.isfinite(fw)
    if np.any(bad):
        lam = d.eigenvalues[bad][0]
        raise DomainError(f"scalar map undefined on eigenvalue {lam!r}")
    u = d.eigenvectors
    out = (u * fw) @ u.conj().T
    # exact functional calculus is Hermitian; round-off asymmetry only
    return HermitianOperator.from_array((out + out.conj().T) / 2.0)


def fractional_power(d: SpectralDecomposition, t: float) -> np.ndarray:
    """H^t as a raw array (the workhorse for sandwich products)."""
    w = d.eigenvalues
    if t < 0 and np.any(w <= 0):
        raise DomainError(f"negative power {t} of a spectrum reaching {w.min()!r}")
    with np.errstate(all="ignore"):
        fw = np.where(w == 0.0, 0.0 if t > 0 else np.inf, np.power(w, t))
    if not np.all(np.isfinite(fw)):
        raise DomainError(f"power {t} undefined on eigenvalue {w[~np.isfinite(fw)][0]!r}")
    u = d.eigenvectors
    return (u * fw) @ u.conj().T


def operator_norm_general(m: np.ndarray) -> float:
    """Largest singular value of a general (not necessarily Hermitian) matrix.

    Computed through the Hermitian eigendecomposition of the Gram matrix
    M^dag M, which keeps every norm in the package on the same primitive.
    """
    m = np.asarray(m, dtype=np.complex128)
    g = m.conj().T @ m
    w = np.linalg.eigvalsh((g + g.conj().T) / 2.0)
    return float(np.sqrt(max(w[-1], 0.0)))


def singular_values(m: np.ndarray) -> np.ndarray:
    return np.linalg.svd(np.asarray(m, dtype=np.complex128), compute_uv=False)


def norm(a: HermitianOperator, kind: str = "operator", p: float | None = None) -> float:
    """Operator, trace, or Schatten-p quasi-norm (p in (0,1], PSD input).

    operator   max |eigenvalue|
    trace      sum of singular values
    schatten   sum of eigenvalue^p; requires A >= 0
    """
    w = np.linalg.eigvalsh(a.entries)
    if kind == "operator":
        return float(np.max(np.abs(w)))
    if kind == "trace":
        return float(np.sum(np.abs(w)))
    if kind == "schatten":
        if p is None or not (0.0 < p <= 1.0):
            raise InputError(f"schatten norm needs p in (0,1], got {p!r}")
        scale = max(np.max(np.abs(w)), 1.0)
        if w[0] < -PSD_RTOL * scale:
            raise DomainError(
                f"schatten({p}) requires a PSD operator; min eigenvalue {w[0]!r}"
            )
        return float(np.sum(np.clip(w, 0.0, None) ** p))
    raise InputError(f"unknown norm kind {kind!r}")


# -- matrix exchange format ---------------------------------------------------
# {"dim": d, "re": [[...]], "im": [[...]]}, row-major


def matrix_to_json(m: np.ndarray) -> dict:
    m = np.asarray(m, dtype=np.complex128)
    return {
        "dim": int(m.shape[0]),
        "re": m.real.tolist(),
        "im": m.imag.tolist(),
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    d = int(obj["dim"])
    re = np.asarray(obj["re"], dtype=np.float64)
    im = np.asarray(obj["im"], dtype=np.float64)
    if re.shape != (d, d) or im.shape != (d, d):
        raise InputError(f"matrix blocks must be {d}x{d} row-major lists")
    return re + 1j * im


def hermitian_from_json(obj: dict) -> HermitianOperator:
    return HermitianOperator.from_array(matrix_from_json(obj))


def dump_matrix(m: np.ndarray, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(matrix_to_json(m), fh)


def load_hermitian(path) -> HermitianOperator:
    with open(path, "r", encoding="utf-8") as fh:
        return hermitian_from_json(json.load(fh))
