"""Weyl quantization of polynomial symbols in a truncated Hermite basis.

Each scalar monomial ``x^m p^s`` (one degree of freedom) is mapped to the
McCoy symmetrization ``2^-m sum_j binom(m, j) X^j P^s X^(m-j)``; monomials in
several degrees of freedom are tensor products of these.  Matrices are
assembled with ``n_max + 1 + buffer`` levels per dof and then cut back to
``n_max + 1``: the ladder matrices are banded, so the retained block is exact
once ``buffer`` is at least the polynomial degree.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache, reduce
from math import comb
from pathlib import Path
from typing import Mapping

import numpy as np

from .symbols import Monomial, Symbol


class QuantizationError(ValueError):
    pass


@dataclass(frozen=True)
class BasisSpec:
    dof: int
    n_max: int
    buffer: int | None = None
    epsilon: float = 1.0

    @property
    def levels(self) -> int:
        return self.n_max + 1

    def size(self, dim: int) -> int:
        return dim * self.levels ** self.dof

    def resolved_buffer(self, degree: int) -> int:
        buf = degree if self.buffer is None else self.buffer
        if buf < degree:
            raise QuantizationError(f"buffer {buf} is smaller than symbol degree {degree}")
        return max(buf, 1)


@dataclass(frozen=True, eq=False)
class QuantizedOperator:
    matrix: np.ndarray
    basis: BasisSpec
    dim: int
    buffer: int
    edge_weight_threshold: float = 0.1

    def edge_weights(self, vectors: np.ndarray) -> np.ndarray:
        """Largest weight of each column vector on the top ``buffer`` levels of any dof."""
        n, N = self.basis.dof, self.basis.levels
        if not vectors.shape[1]:
            return np.zeros(0)
        v = np.abs(vectors.reshape((self.dim,) + (N,) * n + (-1,))) ** 2
        cut = max(N - self.buffer, 0)
        out = np.zeros(vectors.shape[1])
        for k in range(n):
            edge = np.take(v, range(cut, N), axis=1 + k)
            out = np.maximum(out, edge.reshape(-1, vectors.shape[1]).sum(axis=0))
        return out


def ladder_matrices(levels: int, epsilon: float = 1.0):
    """Truncated ``(A, A^H, X, P)`` on Hermite levels ``0..levels-1``.

    ``A[n-1, n] = sqrt(n)``, ``X = sqrt(eps) (A + A^H) / sqrt 2`` and
    ``P = sqrt(eps) i (A^H - A) / sqrt 2`` so that ``[X, P] = i eps`` away from
    the top level.
    """
    if levels < 2:
        raise QuantizationError("need at least two levels")
    a = np.diag(np.sqrt(np.arange(1, levels, dtype=float)), 1).astype(complex)
    ad = a.conj().T
    s = np.sqrt(epsilon / 2.0)
    return a, ad, s * (a + ad), 1j * s * (ad - a)


@lru_cache(maxsize=256)
def _monomial_1d(m: int, s: int, levels: int, epsilon: float) -> np.ndarray:
    _, _, X, P = ladder_matrices(levels, epsilon)
    mp = np.linalg.matrix_power
    Ps = mp(P, s)
    out = sum(comb(m, j) * (mp(X, j) @ Ps @ mp(X, m - j)) for j in range(m + 1))
    out = out / 2 ** m
    out.setflags(write=False)
    return out


def weyl_monomial(m: int, s: int, basis: BasisSpec, buffer: int) -> np.ndarray:
    """Retained block of ``Op_eps(x^m p^s)`` for one degree of freedom."""
    N = basis.levels
    return _monomial_1d(m, s, N + buffer, float(basis.epsilon))[:N, :N]


def quantize_terms(terms: Mapping[Monomial, np.ndarray], dof: int, dim: int,
                   basis: BasisSpec, buffer: int | None = None) -> np.ndarray:
    """Assemble ``sum_k C_k (x) Op(mono_k)`` for arbitrary (not necessarily Hermitian) coefficients."""
    if basis.dof != dof:
        raise QuantizationError(f"basis dof {basis.dof} != symbol dof {dof}")
    if any(a for a, _, _ in terms):
        raise QuantizationError("substitute mu before quantizing")
    degree = max((sum(xs) + sum(ps) for _, xs, ps in terms), default=0)
    buf = basis.resolved_buffer(degree) if buffer is None else buffer
    if buf < degree:
        raise QuantizationError(f"buffer {buf} is smaller than symbol degree {degree}")
    out = np.zeros((basis.size(dim),) * 2, dtype=complex)
    for (_, xs, ps), c in terms.items():
        factors = [weyl_monomial(xs[k], ps[k], basis, buf) for k in range(dof)]
        out += np.kron(c, reduce(np.kron, factors))
    return out


def quantize(sym: Symbol, basis: BasisSpec, edge_weight_threshold: float = 0.1) -> QuantizedOperator:
    """Hermitian matrix of ``Op_eps(sym)``; ``sym`` must not depend on mu."""
    if sym.mu_degree:
        raise QuantizationError("substitute mu before quantizing (use Symbol.at_mu)")
    buf = basis.resolved_buffer(sym.degree)
    m = quantize_terms(sym.terms, sym.dof, sym.dim, basis, buf)
    m = 0.5 * (m + m.conj().T)
    return QuantizedOperator(m, basis, sym.dim, buf, edge_weight_threshold)


@dataclass(frozen=True, eq=False)
class Eigenpairs:
    values: np.ndarray
    vectors: np.ndarray
    reliable: np.ndarray


def eigenpairs(op: QuantizedOperator, window: tuple[float, float] | None = None) -> Eigenpairs:
    """Dense eigensolve, optionally restricted to the open interval ``window``."""
    try:
        if window is None:
            w, v = np.linalg.eigh(op.matrix)
        else:
            import scipy.linalg as sla
            w, v = sla.eigh(op.matrix, subset_by_value=window, driver="evr")
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise QuantizationError(f"eigensolver failed: {exc}") from exc
    if window is not None:
        keep = (w > window[0]) & (w < window[1])
        w, v = w[keep], v[:, keep]
    v = _separate_edge_states(op, w, v)
    rel = op.edge_weights(v) <= op.edge_weight_threshold
    return Eigenpairs(w, v, rel)


def degenerate_clusters(values: np.ndarray, tol: float = 1e-8) -> list[np.ndarray]:
    """Index groups of consecutive (sorted) eigenvalues closer than ``tol``."""
    if not len(values):
        return []
    breaks = np.flatnonzero(np.diff(values) > tol * max(1.0, float(np.abs(values).max()))) + 1
    return np.split(np.arange(len(values)), breaks)


def _separate_edge_states(op: QuantizedOperator, w: np.ndarray, v: np.ndarray) -> np.ndarray:
    # A degenerate eigenspace may mix physical states with truncation artefacts;
    # diagonalizing the edge-weight form inside it pulls them apart.
    n, N = op.basis.dof, op.basis.levels
    cut = max(N - op.buffer, 0)
    mask = np.zeros((N,) * n, dtype=bool)
    for k in range(n):
        idx = [slice(None)] * n
        idx[k] = slice(cut, N)
        mask[tuple(idx)] = True
    mask = np.broadcast_to(mask, (op.dim,) + mask.shape).reshape(-1)
    v = v.copy()
    for group in degenerate_clusters(w):
        if len(group) < 2:
            continue
        block = v[:, group]
        edge = block[mask]
        _, rot = np.linalg.eigh(edge.conj().T @ edge)
        v[:, group] = block @ rot
    return v


def reliable_eigenpairs(op: QuantizedOperator, window: tuple[float, float]) -> list[tuple[float, bool]]:
    """Eigenvalues inside ``window`` with their truncation reliability flag."""
    ep = eigenpairs(op, window)
    return [(float(w), bool(r)) for w, r in zip(ep.values, ep.reliable)]


# -------------------------------------------------------------- binary dump

_HEADER = struct.Struct("<qqqd")


def dump_matrix(op: QuantizedOperator, path: str | Path) -> None:
    """Little-endian header ``(dim, dof, n_max, epsilon)`` then row-major complex128."""
    m = np.ascontiguousarray(op.matrix, dtype="<c16")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(m.shape[0], op.basis.dof, op.basis.n_max, float(op.basis.epsilon)))
        fh.write(m.tobytes())


def load_matrix(path: str | Path) -> tuple[np.ndarray, dict]:
    raw = Path(path).read_bytes()
    dim, dof, n_max, eps = _HEADER.unpack_from(raw)
    m = np.frombuffer(raw, dtype="<c16", offset=_HEADER.size)
    if m.size != dim * dim:
        raise QuantizationError(f"matrix dump truncated: {m.size} entries for dim {dim}")
    return m.reshape(dim, dim).copy(), {"dim": dim, "dof": dof, "n_max": n_max, "epsilon": eps}
