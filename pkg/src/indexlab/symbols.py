"""Matrix-valued polynomial symbols H_mu(x, p) and the normal-form models.

A symbol is stored as a map from monomials ``mu^a x^alpha p^beta`` to
Hermitian ``d x d`` coefficient matrices.  Since every monomial is real for
real arguments, Hermitian coefficients make every evaluation Hermitian.

Points in parameter space are flat arrays ordered ``(mu, x_1..x_n, p_1..p_n)``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import qmc, norm

Monomial = tuple[int, tuple[int, ...], tuple[int, ...]]


class SymbolError(ValueError):
    """Raised for malformed symbols or mismatched arguments."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=complex)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Symbol:
    """Polynomial symbol ``sum_k C_k mu^a x^alpha p^beta`` with ``C_k`` Hermitian.

    Use :meth:`from_terms` to build one; it merges duplicate monomials,
    Hermitizes coefficients and drops vanishing terms.
    """

    dof: int
    dim: int
    terms: Mapping[Monomial, np.ndarray]
    max_asymmetry: float = 0.0

    @classmethod
    def from_terms(cls, dof: int, dim: int, terms, hermitize: bool = True) -> "Symbol":
        if dof < 1:
            raise SymbolError(f"dof must be positive, got {dof}")
        if dim < 0:
            raise SymbolError(f"dim must be non-negative, got {dim}")
        items = terms.items() if isinstance(terms, Mapping) else terms
        merged: dict[Monomial, np.ndarray] = {}
        asym = 0.0
        for mono, coeff in items:
            a, xs, ps = mono
            xs, ps = tuple(int(v) for v in xs), tuple(int(v) for v in ps)
            if len(xs) != dof or len(ps) != dof:
                raise SymbolError(f"monomial {mono} does not match dof={dof}")
            if a < 0 or min(xs + ps, default=0) < 0:
                raise SymbolError(f"negative power in monomial {mono}")
            c = np.asarray(coeff, dtype=complex)
            if c.shape != (dim, dim):
                raise SymbolError(f"coefficient of {mono} has shape {c.shape}, expected {(dim, dim)}")
            key = (int(a), xs, ps)
            merged[key] = merged.get(key, 0) + c
        out = {}
        for key, c in sorted(merged.items()):
            scale = max(np.abs(c).max(initial=0.0), 1.0)
            asym = max(asym, np.abs(c - c.conj().T).max(initial=0.0) / scale)
            if hermitize:
                c = 0.5 * (c + c.conj().T)
            if np.any(c != 0):
                out[key] = _freeze(c)
        return cls(dof, dim, out, asym)

    @property
    def degree(self) -> int:
        """Total polynomial degree in (x, p)."""
        return max((sum(xs) + sum(ps) for _, xs, ps in self.terms), default=0)

    @property
    def mu_degree(self) -> int:
        return max((a for a, _, _ in self.terms), default=0)

    def at_mu(self, mu: float) -> "Symbol":
        """Substitute the classical parameter, leaving a polynomial in (x, p)."""
        terms: dict[Monomial, np.ndarray] = {}
        for (a, xs, ps), c in self.terms.items():
            key = (0, xs, ps)
            terms[key] = terms.get(key, 0) + (mu ** a) * c
        return Symbol.from_terms(self.dof, self.dim, terms)

    def __add__(self, other: "Symbol") -> "Symbol":
        if (self.dof, self.dim) != (other.dof, other.dim):
            raise SymbolError("cannot add symbols of different shape")
        return Symbol.from_terms(self.dof, self.dim,
                                 list(self.terms.items()) + list(other.terms.items()))

    def scaled(self, factor: float) -> "Symbol":
        return Symbol.from_terms(self.dof, self.dim,
                                 {k: factor * c for k, c in self.terms.items()})


@dataclass(frozen=True)
class GapSpec:
    rank: int
    gap_constant: float
    mu_range: tuple[float, float] = (-2.0, 2.0)

    def validate(self, sym: Symbol) -> None:
        if not 1 <= self.rank < sym.dim:
            raise SymbolError(f"rank {self.rank} outside 1..{sym.dim - 1}")
        if self.gap_constant <= 0:
            raise SymbolError("gap constant must be positive")


@dataclass(frozen=True)
class GapCertificate:
    """Sampled witness of the gap assumption.  Heuristic, not a proof."""

    min_lower_margin: float
    min_upper_margin: float
    sample_radii: tuple[float, ...]
    sample_count: int

    @property
    def passed(self) -> bool:
        return self.min_lower_margin > 0 and self.min_upper_margin > 0


# ---------------------------------------------------------------- evaluation

def split_point(sym: Symbol, point) -> np.ndarray:
    """Normalise ``point`` into a flat ``(mu, x.., p..)`` float array."""
    if isinstance(point, tuple) and len(point) == 3 and np.ndim(point[1]) == 1:
        mu, x, p = point
        x, p = np.atleast_1d(x), np.atleast_1d(p)
        if len(x) != sym.dof or len(p) != sym.dof:
            raise SymbolError(f"point has {len(x)} x and {len(p)} p components, dof={sym.dof}")
        return np.concatenate([[mu], x, p]).astype(float)
    arr = np.asarray(point, dtype=float)
    if arr.shape[-1] != 1 + 2 * sym.dof:
        raise SymbolError(f"point has {arr.shape[-1]} coordinates, expected {1 + 2 * sym.dof}")
    return arr


def evaluate_many(sym: Symbol, points: np.ndarray) -> np.ndarray:
    """Evaluate at a batch of points of shape ``(..., 1 + 2n)``."""
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != 1 + 2 * sym.dof:
        raise SymbolError(f"points have {pts.shape[-1]} coordinates, expected {1 + 2 * sym.dof}")
    batch = pts.shape[:-1]
    out = np.zeros(batch + (sym.dim, sym.dim), dtype=complex)
    for (a, xs, ps), c in sym.terms.items():
        mono = np.ones(batch)
        for k, power in enumerate((a,) + xs + ps):
            if power:
                mono = mono * pts[..., k] ** power
        out += mono[..., None, None] * c
    return out


def evaluate(sym: Symbol, point) -> np.ndarray:
    """Hermitian ``d x d`` value of the symbol at one point ``(mu, x, p)``."""
    return evaluate_many(sym, split_point(sym, point))


def sorted_eigenvalues(sym: Symbol, point) -> np.ndarray:
    """Ascending eigenvalues of the symbol at ``point`` (batched if 2-D)."""
    h = evaluate(sym, point)
    try:
        return np.linalg.eigvalsh(h)
    except np.linalg.LinAlgError as exc:
        raise SymbolError(f"eigensolver failed at {point}: {exc}") from exc


def sphere_samples(dim: int, count: int, seed: int = 0) -> np.ndarray:
    """Quasi-uniform points on the unit sphere in R^dim from a scrambled Sobol sequence."""
    sobol = qmc.Sobol(dim, scramble=True, seed=seed)
    u = sobol.random_base2(max(1, math.ceil(math.log2(count))))[:count]
    g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def check_gap(sym: Symbol, spec: GapSpec, radii: Sequence[float] = (1.0, 2.0, 4.0),
              samples_per_sphere: int = 1024, seed: int = 0) -> GapCertificate:
    """Sample spheres of the given radii and report the gap margins.

    Margins are ``min(-C - omega_r)`` and ``min(omega_{r+1} - C)`` over samples
    whose ``mu`` lies inside ``spec.mu_range``.
    """
    spec.validate(sym)
    if min(radii) < 1:
        raise SymbolError("gap sampling radii must be >= 1")
    base = sphere_samples(1 + 2 * sym.dof, samples_per_sphere, seed)
    lo_m, hi_m = math.inf, math.inf
    count = 0
    lo, hi = spec.mu_range
    for radius in radii:
        pts = radius * base
        pts = pts[(pts[:, 0] > lo) & (pts[:, 0] < hi)]
        if not len(pts):
            continue
        w = np.linalg.eigvalsh(evaluate_many(sym, pts))
        lo_m = min(lo_m, float(np.min(-spec.gap_constant - w[:, spec.rank - 1])))
        hi_m = min(hi_m, float(np.min(w[:, spec.rank] - spec.gap_constant)))
        count += len(pts)
    return GapCertificate(lo_m, hi_m, tuple(float(r) for r in radii), count)


# ------------------------------------------------------------ constructions

def constant(matrix, dof: int = 1) -> Symbol:
    m = np.atleast_2d(np.asarray(matrix, dtype=complex))
    zero = (0, (0,) * dof, (0,) * dof)
    return Symbol.from_terms(dof, m.shape[0], {zero: m})


def direct_sum(a: Symbol, b: Symbol) -> Symbol:
    """Block-diagonal symbol ``a (+) b``."""
    if a.dof != b.dof:
        raise SymbolError(f"dof mismatch in direct sum: {a.dof} vs {b.dof}")
    d = a.dim + b.dim
    terms: list[tuple[Monomial, np.ndarray]] = []
    for key, c in a.terms.items():
        big = np.zeros((d, d), dtype=complex)
        big[:a.dim, :a.dim] = c
        terms.append((key, big))
    for key, c in b.terms.items():
        big = np.zeros((d, d), dtype=complex)
        big[a.dim:, a.dim:] = c
        terms.append((key, big))
    return Symbol.from_terms(a.dof, d, terms)


def _unit(dof: int, kind: str, k: int) -> Monomial:
    pw = [0] * dof
    pw[k] = 1
    z = (0,) * dof
    return (0, tuple(pw), z) if kind == "x" else (0, z, tuple(pw))


def g_terms(n: int) -> dict[Monomial, np.ndarray]:
    """Coefficients of the linear matrix map ``g_n(z)`` with ``z_k = x_k + i p_k``.

    ``g_1(z) = z`` and ``g_n(z_1, z') = [[z_1, -g_{n-1}(z')^H], [g_{n-1}(z'), conj(z_1)]]``.
    The result is generally not Hermitian.
    """
    if n < 1:
        raise SymbolError("g_n needs n >= 1")
    if n == 1:
        return {_unit(1, "x", 0): np.array([[1.0 + 0j]]), _unit(1, "p", 0): np.array([[1j]])}
    inner = g_terms(n - 1)
    s = 2 ** (n - 2)
    eye = np.eye(s)
    out: dict[Monomial, np.ndarray] = {
        _unit(n, "x", 0): np.block([[eye, 0 * eye], [0 * eye, eye]]).astype(complex),
        _unit(n, "p", 0): np.block([[1j * eye, 0 * eye], [0 * eye, -1j * eye]]),
    }
    for (_, xs, ps), c in inner.items():
        key = (0, (0,) + xs, (0,) + ps)
        z = np.zeros_like(c)
        out[key] = np.block([[z, -c.conj().T], [c, z]])
    return out


def g_matrix(n: int, z) -> np.ndarray:
    """Evaluate ``g_n`` at a complex vector ``z`` of length ``n``."""
    z = np.asarray(z, dtype=complex)
    out = 0
    for (_, xs, ps), c in g_terms(n).items():
        k = xs.index(1) if 1 in xs else ps.index(1)
        out = out + (z[k].real if 1 in xs else z[k].imag) * c
    return out


def _normal_form_unit(n: int, sign: int) -> Symbol:
    s = 2 ** (n - 1)
    eye = np.eye(s)
    z = np.zeros((s, s))
    mu_key = (1, (0,) * n, (0,) * n)
    terms: dict[Monomial, np.ndarray] = {
        mu_key: np.block([[-sign * eye, z], [z, sign * eye]]).astype(complex)}
    for key, c in g_terms(n).items():
        zc = np.zeros_like(c)
        terms[key] = np.block([[zc, c], [c.conj().T, zc]])
    return Symbol.from_terms(n, 2 * s, terms)


def normal_form(n: int, chern: int, gap_constant: float = 1.0) -> tuple[Symbol, GapSpec]:
    """Normal-form model ``E^(n, chern)`` and its gap data.

    ``chern = 0`` gives the constant ``diag(-2C, +2C)`` of size ``2^n``.
    Otherwise ``|chern|`` copies of ``E^(n, +-1)`` are summed; the lower band
    is half the total dimension.
    """
    if n < 1:
        raise SymbolError(f"normal form needs n >= 1, got {n}")
    s = 2 ** (n - 1)
    if chern == 0:
        w0 = 2.0 * gap_constant
        sym = constant(np.diag([-w0] * s + [w0] * s), n)
        return sym, GapSpec(s, gap_constant)
    unit = _normal_form_unit(n, 1 if chern > 0 else -1)
    sym = unit
    for _ in range(abs(chern) - 1):
        sym = direct_sum(sym, unit)
    return sym, GapSpec(abs(chern) * s, gap_constant)


def random_hermitian(dim: int, rng: np.random.Generator, norm2: float = 1.0) -> np.ndarray:
    a = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = a + a.conj().T
    return norm2 * h / np.linalg.norm(h, 2)


def linear_noise(dof: int, dim: int, magnitude: float, rng: np.random.Generator) -> Symbol:
    """Degree <= 1 Hermitian noise in (mu, x, p); each coefficient has spectral norm ``magnitude``."""
    zero = (0,) * dof
    keys: list[Monomial] = [(0, zero, zero), (1, zero, zero)]
    keys += [_unit(dof, "x", k) for k in range(dof)] + [_unit(dof, "p", k) for k in range(dof)]
    return Symbol.from_terms(dof, dim, {k: random_hermitian(dim, rng, magnitude) for k in keys})


# ---------------------------------------------------------------- JSON I/O

def symbol_to_dict(sym: Symbol) -> dict:
    terms = []
    for (a, xs, ps), c in sym.terms.items():
        terms.append({"mu_pow": a, "x_pows": list(xs), "p_pows": list(ps),
                      "re": c.real.tolist(), "im": c.imag.tolist()})
    return {"dof": sym.dof, "dim": sym.dim, "terms": terms}


def symbol_from_dict(doc: dict) -> Symbol:
    """Inverse of :func:`symbol_to_dict`; re-Hermitizes and records the asymmetry."""
    try:
        dof, dim = int(doc["dof"]), int(doc["dim"])
        terms = []
        for t in doc["terms"]:
            coeff = np.asarray(t["re"], dtype=float) + 1j * np.asarray(t["im"], dtype=float)
            terms.append(((int(t.get("mu_pow", 0)), tuple(t["x_pows"]), tuple(t["p_pows"])),
                          coeff.reshape(dim, dim)))
    except (KeyError, TypeError, ValueError) as exc:
        raise SymbolError(f"malformed symbol document: {exc}") from exc
    return Symbol.from_terms(dof, dim, terms)


def save_symbol(sym: Symbol, path: str | Path) -> None:
    Path(path).write_text(json.dumps(symbol_to_dict(sym), indent=1) + "\n")


def load_symbol(path: str | Path) -> Symbol:
    return symbol_from_dict(json.loads(Path(path).read_text()))
