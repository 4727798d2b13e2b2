"""Spectral flow of mu -> Op_eps(H_mu) across the gap, and the Fredholm index of g_n."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

from .quantize import BasisSpec, Eigenpairs, degenerate_clusters, eigenpairs, quantize, quantize_terms
from .symbols import Symbol, g_terms


class FlowError(RuntimeError):
    pass


Family = Union[Symbol, Callable[[float], Symbol]]


def max_workers() -> int:
    """Worker cap from ``LAB_THREADS`` (default: CPU count)."""
    try:
        return max(1, int(os.environ["LAB_THREADS"]))
    except (KeyError, ValueError):
        return os.cpu_count() or 1


def mu_grid(mu_end: float = 1.5, step: float = 0.02) -> np.ndarray:
    count = int(round(2 * mu_end / step))
    return np.linspace(-mu_end, mu_end, count + 1)


@dataclass(frozen=True)
class SweepConfig:
    mu_grid: np.ndarray
    window: tuple[float, float]
    basis: BasisSpec
    min_overlap: float = 0.5
    max_bisect: int = 6

    def __post_init__(self):
        g = np.asarray(self.mu_grid, dtype=float)
        if g.ndim != 1 or len(g) < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("mu grid must be strictly increasing with at least two points")
        lo, hi = self.window
        if not lo < 0 < hi:
            raise ValueError(f"window {self.window} must contain the reference level 0")
        object.__setattr__(self, "mu_grid", g)

    @classmethod
    def default(cls, basis: BasisSpec, gap_constant: float = 1.0,
                mu_end: float = 1.5, step: float = 0.02) -> "SweepConfig":
        if mu_end <= 1:
            raise ValueError("mu_end must exceed 1 so the sweep starts and ends with an open gap")
        half = gap_constant / 2
        return cls(mu_grid(mu_end, step), (-half, half), basis)


@dataclass
class Branch:
    mu: list[float] = field(default_factory=list)
    omega: list[float] = field(default_factory=list)
    entry: str = ""
    exit: str = ""


@dataclass(frozen=True, eq=False)
class SweepPoint:
    mu: float
    values: np.ndarray
    reliable: np.ndarray
    vectors: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class SpectrumSweep:
    points: list[SweepPoint]
    branches: list[Branch]
    window: tuple[float, float]

    def rows(self):
        """``(mu, eigenvalue, branch_id, reliable)`` for every in-window eigenvalue."""
        lo, hi = self.window
        seen = set()
        out = []
        for b_id, br in enumerate(self.branches):
            for m, w in zip(br.mu, br.omega):
                if lo < w < hi:
                    out.append((m, w, b_id, True))
                    seen.add((m, w))
        for pt in self.points:
            for w, r in zip(pt.values, pt.reliable):
                if not r and lo < w < hi:
                    out.append((pt.mu, float(w), -1, False))
        out.sort(key=lambda r: (r[0], r[1], r[2]))
        return out


@dataclass(frozen=True)
class FlowIndex:
    value: int
    crossing_count_up: int
    crossing_count_down: int


def _as_family(family: Family) -> Callable[[float], Symbol]:
    return family.at_mu if isinstance(family, Symbol) else family


def _solve(family, basis: BasisSpec, window, mu: float) -> SweepPoint:
    ep: Eigenpairs = eigenpairs(quantize(family(mu), basis), window)
    keep = ep.reliable
    return SweepPoint(float(mu), ep.values, ep.reliable, ep.vectors[:, keep])


def _align(prev: np.ndarray, cur: np.ndarray, values: np.ndarray) -> np.ndarray:
    # Inside each degenerate cluster choose the orthonormal basis closest to the
    # previous vectors (polar factor), so degenerate branches stay consistent.
    cur = cur.copy()
    for group in degenerate_clusters(values, 1e-7):
        if len(group) < 2 or not prev.shape[1]:
            continue
        q = cur[:, group].conj().T @ prev
        order = np.argsort(-np.linalg.norm(q, axis=0))[:len(group)]
        u, _, vh = np.linalg.svd(q[:, order])
        cur[:, group] = cur[:, group] @ (u @ vh)
    return cur


class _Linker:
    def __init__(self, family, cfg: SweepConfig, ext_window):
        self.family, self.cfg, self.ext = family, cfg, ext_window

    def match(self, a: SweepPoint, b: SweepPoint):
        wa, wb = a.values[a.reliable], b.values[b.reliable]
        vb = _align(a.vectors, b.vectors, wb)
        b = SweepPoint(b.mu, b.values, b.reliable, vb)
        ov = np.abs(a.vectors.conj().T @ vb) ** 2 if len(wa) and len(wb) else np.zeros((len(wa), len(wb)))
        pairs = {}
        used = set()
        for flat in np.argsort(-ov, axis=None):
            i, j = np.unravel_index(flat, ov.shape)
            if ov[i, j] < self.cfg.min_overlap:
                break
            if i in pairs or j in used:
                continue
            pairs[int(i)] = int(j)
            used.add(int(j))
        lo, hi = self.cfg.window
        ok = all(i in pairs for i in range(len(wa)) if lo < wa[i] < hi)
        ok = ok and all(j in used for j in range(len(wb)) if lo < wb[j] < hi)
        return b, pairs, ok

    def resolve(self, a: SweepPoint, b: SweepPoint, depth: int = 0):
        b2, pairs, ok = self.match(a, b)
        if ok:
            return [b2], [pairs]
        if depth >= self.cfg.max_bisect:
            raise FlowError(f"cannot link in-gap eigenvalues between mu={a.mu:.6g} and mu={b.mu:.6g}")
        mid = _solve(self.family, self.cfg.basis, self.ext, 0.5 * (a.mu + b.mu))
        p1, m1 = self.resolve(a, mid, depth + 1)
        p2, m2 = self.resolve(p1[-1], b, depth + 1)
        return p1 + p2, m1 + m2


def _edge(w: float, window, at_grid_end: bool, start: bool) -> str:
    lo, hi = window
    if w <= lo:
        return "below"
    if w >= hi:
        return "above"
    if at_grid_end:
        return "left" if start else "right"
    return "interior"


def sweep(family: Family, cfg: SweepConfig, workers: int | None = None) -> SpectrumSweep:
    """Quantize along the mu grid and link in-window eigenvalues into branches.

    Consecutive points are linked by greedy maximal eigenvector overlap; when an
    in-window eigenvector finds no partner with overlap >= ``min_overlap`` the
    mu step is bisected (up to ``max_bisect`` times).
    """
    fam = _as_family(family)
    lo, hi = cfg.window
    pad = 0.5 * (hi - lo)
    ext = (lo - pad, hi + pad)
    with ThreadPoolExecutor(max_workers=workers or max_workers()) as pool:
        pts = list(pool.map(lambda m: _solve(fam, cfg.basis, ext, m), cfg.mu_grid))
    linker = _Linker(fam, cfg, ext)
    chain = [pts[0]]
    links: list[dict[int, int]] = []
    for b in pts[1:]:
        new_pts, new_links = linker.resolve(chain[-1], b)
        chain += new_pts
        links += new_links

    branches: list[Branch] = []
    first = chain[0]
    current = {}
    for i, w in enumerate(first.values[first.reliable]):
        br = Branch([first.mu], [float(w)])
        branches.append(br)
        current[i] = br
    for pt, pairs in zip(chain[1:], links):
        wb = pt.values[pt.reliable]
        nxt = {}
        for i, j in pairs.items():
            nxt[j] = current[i]
        for j, w in enumerate(wb):
            if j not in nxt:
                nxt[j] = Branch()
                branches.append(nxt[j])
            nxt[j].mu.append(pt.mu)
            nxt[j].omega.append(float(w))
        current = nxt
    mu0, mu1 = chain[0].mu, chain[-1].mu
    for br in branches:
        br.entry = _edge(br.omega[0], cfg.window, br.mu[0] == mu0, True)
        br.exit = _edge(br.omega[-1], cfg.window, br.mu[-1] == mu1, False)
    points = [SweepPoint(p.mu, p.values, p.reliable) for p in chain]
    return SpectrumSweep(points, branches, cfg.window)


def spectral_index(sw: SpectrumSweep, tol: float = 1e-9) -> FlowIndex:
    """Signed count of branch crossings of the reference level 0.

    This equals the label difference ``n_in - n_out`` of the eigenvalue just
    below the gap at the two ends of the sweep.  Samples with ``|omega| <= tol``
    are skipped, so a branch passing exactly through 0 at a grid point is
    decided by its neighbours.
    """
    up = down = 0
    for br in sw.branches:
        w = np.asarray(br.omega)
        if len(w) and (abs(w[0]) <= tol or abs(w[-1]) <= tol) and np.any(np.abs(w) > tol):
            raise FlowError(f"branch starting at mu={br.mu[0]:.6g} touches 0 at its end; refine the grid")
        signs = np.sign(w[np.abs(w) > tol])
        steps = np.diff(signs)
        up += int(np.sum(steps > 0))
        down += int(np.sum(steps < 0))
    return FlowIndex(up - down, up, down)


# ----------------------------------------------------------------- Fredholm

@dataclass(frozen=True)
class FredholmResult:
    value: int
    kernel_dim: int
    cokernel_dim: int
    gap_ratio: float
    tail: tuple[float, ...]


def _small_singular(m: np.ndarray, rel_tau: float):
    s = np.linalg.svd(m, compute_uv=False)
    tau = rel_tau * s.max()
    small, big = s[s < tau], s[s >= tau]
    noise = max(small.max() if len(small) else tau, np.finfo(float).eps * s.max())
    return len(small), float(big.min() / noise), s


def fredholm_report(n: int, basis: BasisSpec, adjoint: bool = False, rel_tau: float = 1e-6) -> FredholmResult:
    """``dim ker - dim coker`` of the quantized ``g_n`` (or its adjoint).

    The operator is restricted to inputs supported below the top ``buffer``
    levels of every dof; on those inputs the truncated matrix is exact, so the
    rectangular blocks of ``G`` and ``G^H`` have the true kernels.
    """
    if basis.dof != n:
        raise ValueError(f"basis dof {basis.dof} != n {n}")
    terms = g_terms(n)
    if adjoint:
        terms = {k: c.conj().T for k, c in terms.items()}
    s = 2 ** (n - 1)
    b = basis if basis.epsilon == 1.0 else BasisSpec(n, basis.n_max, basis.buffer, 1.0)
    buf = b.resolved_buffer(1)
    g = quantize_terms(terms, n, s, b, buf)
    N = b.levels
    interior = np.zeros((N,) * n, dtype=bool)
    interior[(slice(0, N - buf),) * n] = True
    cols = np.broadcast_to(interior, (s,) + interior.shape).reshape(-1)
    k1, r1, s1 = _small_singular(g[:, cols], rel_tau)
    k2, r2, s2 = _small_singular(g.conj().T[:, cols], rel_tau)
    ratio = min(r1, r2)
    tail = tuple(float(v) for v in np.sort(np.concatenate([s1, s2]))[:6])
    if ratio <= 1e3:
        raise FlowError(f"no clear singular-value gap (ratio {ratio:.3g}); smallest values {tail}")
    return FredholmResult(k1 - k2, k1, k2, ratio, tail)


def fredholm_index(n: int, basis: BasisSpec, adjoint: bool = False) -> int:
    return fredholm_report(n, basis, adjoint).value
