"""Topological invariants of the lower-band eigenbundle over the parameter sphere.

The sphere S^m is represented by the surface of the cube [-1, 1]^(m+1), each
face gridded in its own coordinates and mapped radially onto the unit sphere.
Face coordinates are the remaining axes in increasing order; the face
``x_k = s`` carries orientation sign ``s (-1)^k`` relative to the outward normal.

Orientation convention: ambient coordinates are ordered ``(mu, x_1..x_n,
p_1..p_n)``.  Chern numbers carry a fixed global sign per sphere dimension
(``_S2_SIGN``, ``_S4_SIGN``) chosen so that the lower band of ``E^(n, +1)`` has
Chern number +1, matching the clutching-function computation for n = 1.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .symbols import Symbol, evaluate_many

ACCEPT_RESIDUAL = 0.1
_S2_SIGN = -1.0
_S4_SIGN = 1.0


class TopologyError(RuntimeError):
    pass


class UnsupportedDimension(TopologyError):
    pass


# ------------------------------------------------------------------- meshes

@dataclass(frozen=True)
class Face:
    axis: int
    side: int

    def orientation(self) -> int:
        return self.side * (-1) ** self.axis


@dataclass(frozen=True, eq=False)
class SphereMesh:
    """Cube-surface mesh of S^(ambient_dim - 1).

    ``kind="grid"`` places ``resolution`` uniform nodes per axis (endpoints
    included, used for plaquettes); ``kind="gauss"`` uses Gauss-Legendre nodes
    and weights (used for quadrature).
    """

    ambient_dim: int
    resolution: int
    kind: str = "grid"
    radius: float = 1.0
    oriented: bool = True

    def __post_init__(self):
        if self.ambient_dim < 2:
            raise ValueError("ambient dimension must be at least 2")
        if self.kind not in ("grid", "gauss"):
            raise ValueError(f"unknown mesh kind {self.kind!r}")
        if self.resolution < 2:
            raise ValueError("resolution must be at least 2")

    @property
    def faces(self) -> list[Face]:
        return [Face(k, s) for k in range(self.ambient_dim) for s in (-1, 1)]

    @property
    def face_dim(self) -> int:
        return self.ambient_dim - 1

    def nodes_1d(self) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "grid":
            u = np.linspace(-1.0, 1.0, self.resolution)
            return u, np.full_like(u, 2.0 / (self.resolution - 1))
        return np.polynomial.legendre.leggauss(self.resolution)

    def face_coords(self) -> np.ndarray:
        """Face-coordinate nodes, shape ``(res,)*face_dim + (face_dim,)``."""
        u, _ = self.nodes_1d()
        grids = np.meshgrid(*([u] * self.face_dim), indexing="ij")
        return np.stack(grids, axis=-1)

    def face_weights(self) -> np.ndarray:
        _, w = self.nodes_1d()
        out = np.ones((self.resolution,) * self.face_dim)
        for k in range(self.face_dim):
            shape = [1] * self.face_dim
            shape[k] = -1
            out = out * w.reshape(shape)
        return out

    def embed(self, face: Face, u: np.ndarray) -> np.ndarray:
        """Map face coordinates ``u`` (..., face_dim) onto the sphere of ``radius``."""
        pts = np.insert(u, face.axis, float(face.side), axis=-1)
        return self.radius * pts / np.linalg.norm(pts, axis=-1, keepdims=True)


# -------------------------------------------------------------- projectors

def _projectors(sym: Symbol, rank: int, pts: np.ndarray) -> np.ndarray:
    h = evaluate_many(sym, pts)
    w, v = np.linalg.eigh(h)
    gap = w[..., rank] - w[..., rank - 1]
    bad = gap <= 1e-8
    if np.any(bad):
        where = pts[bad][0]
        raise TopologyError(f"lower band not separated (gap {gap[bad].min():.3g}) at point {where.tolist()}")
    low = v[..., :rank]
    return low @ np.swapaxes(low.conj(), -1, -2)


def lower_band_projector(sym: Symbol, rank: int, point) -> np.ndarray:
    """Orthogonal projector onto the eigenvectors of the ``rank`` lowest eigenvalues."""
    pts = np.asarray(point, dtype=float)
    if pts.shape != (1 + 2 * sym.dof,):
        raise ValueError(f"point must have {1 + 2 * sym.dof} coordinates")
    return _projectors(sym, rank, pts[None])[0]


def upper_band(sym: Symbol, rank: int) -> tuple[Symbol, int]:
    """``(-sym, dim - rank)``: the upper band of ``sym`` as a lower band."""
    return sym.scaled(-1.0), sym.dim - rank


@dataclass(frozen=True, eq=False)
class ProjectorField:
    mesh: SphereMesh
    rank: int
    projectors: list[np.ndarray]
    derivatives: list[np.ndarray] | None = None

    @property
    def dim(self) -> int:
        return self.projectors[0].shape[-1]


def projector_field(sym: Symbol, rank: int, mesh: SphereMesh, derivatives: bool = False,
                    fd_step: float = 1e-4) -> ProjectorField:
    """Sample the lower-band projector at every mesh node.

    With ``derivatives=True`` also store central finite differences of P
    along each face coordinate (through the radial projection).
    """
    if mesh.ambient_dim != 1 + 2 * sym.dof:
        raise ValueError(f"mesh lives in R^{mesh.ambient_dim}, symbol needs R^{1 + 2 * sym.dof}")
    if not 1 <= rank < sym.dim:
        raise ValueError(f"rank {rank} outside 1..{sym.dim - 1}")
    u = mesh.face_coords()
    projs, ders = [], []
    for face in mesh.faces:
        projs.append(_projectors(sym, rank, mesh.embed(face, u)))
        if derivatives:
            d = []
            for k in range(mesh.face_dim):
                step = np.zeros(mesh.face_dim)
                step[k] = fd_step
                plus = _projectors(sym, rank, mesh.embed(face, u + step))
                minus = _projectors(sym, rank, mesh.embed(face, u - step))
                d.append((plus - minus) / (2 * fd_step))
            ders.append(np.stack(d))
    return ProjectorField(mesh, rank, projs, ders if derivatives else None)


def save_projector_field(field: ProjectorField, path: str | Path) -> None:
    """Write ``<path>.json`` metadata and ``<path>.bin`` (little-endian complex128, face-major)."""
    path = Path(path)
    meta = {
        "ambient_dim": field.mesh.ambient_dim, "resolution": field.mesh.resolution,
        "kind": field.mesh.kind, "radius": field.mesh.radius, "rank": field.rank,
        "dim": field.dim, "faces": [[f.axis, f.side] for f in field.mesh.faces],
        "face_shape": list(field.projectors[0].shape), "blob": path.with_suffix(".bin").name,
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=1) + "\n")
    with open(path.with_suffix(".bin"), "wb") as fh:
        for p in field.projectors:
            fh.write(np.ascontiguousarray(p, dtype="<c16").tobytes())


def load_projector_field(path: str | Path) -> ProjectorField:
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    mesh = SphereMesh(meta["ambient_dim"], meta["resolution"], meta["kind"], meta["radius"])
    raw = np.fromfile(path.with_name(meta["blob"]), dtype="<c16")
    shape = tuple(meta["face_shape"])
    projs = list(raw.reshape((len(meta["faces"]),) + shape))
    return ProjectorField(mesh, meta["rank"], projs)


# ----------------------------------------------------------- Chern numbers

@dataclass(frozen=True)
class ChernResult:
    value: int
    raw: float
    residual: float
    method: str = ""

    @property
    def converged(self) -> bool:
        return self.residual < ACCEPT_RESIDUAL

    @classmethod
    def from_raw(cls, raw: float, method: str) -> "ChernResult":
        value = int(round(raw))
        return cls(value, float(raw), abs(raw - value), method)


def field_frames(field: ProjectorField) -> list[np.ndarray]:
    """Orthonormal frames spanning each node's projector (column-pivoted QR)."""
    out = []
    for p in field.projectors:
        flat = p.reshape((-1,) + p.shape[-2:])
        frames = np.empty(flat.shape[:2] + (field.rank,), dtype=complex)
        for i, m in enumerate(flat):
            q, _, _ = sla.qr(m, pivoting=True)
            frames[i] = q[:, :field.rank]
        out.append(frames.reshape(p.shape[:-1] + (field.rank,)))
    return out


def fhs_from_frames(mesh: SphereMesh, frames: list[np.ndarray]) -> ChernResult:
    """Sum of plaquette Berry phases ``arg det(W01 W12 W23 W30)`` over the S^2 mesh."""
    if mesh.ambient_dim != 3 or mesh.kind != "grid":
        raise ValueError("FHS needs a uniform grid mesh of S^2")
    total = 0.0
    for face, fr in zip(mesh.faces, frames):
        def link(a, b):
            return np.linalg.det(np.swapaxes(a.conj(), -1, -2) @ b)
        c00, c10 = fr[:-1, :-1], fr[1:, :-1]
        c11, c01 = fr[1:, 1:], fr[:-1, 1:]
        loop = link(c00, c10) * link(c10, c11) * link(c11, c01) * link(c01, c00)
        if np.min(np.abs(loop)) < 1e-8:
            raise TopologyError("singular overlap on plaquette; refine the mesh")
        total += face.orientation() * float(np.sum(np.angle(loop)))
    return ChernResult.from_raw(_S2_SIGN * total / (2 * math.pi), "fhs")


def chern_s2_fhs(field: ProjectorField) -> ChernResult:
    """Gauge-invariant lattice Chern number of a projector field on S^2."""
    return fhs_from_frames(field.mesh, field_frames(field))


_PAIRINGS = ((0, 1, 2, 3, 1.0), (0, 2, 1, 3, -1.0), (0, 3, 1, 2, 1.0))


def chern_s4(field: ProjectorField) -> ChernResult:
    """Second Chern character ``-1/(8 pi^2) int tr(F ^ F)`` on S^4.

    ``F_ij = P [d_i P, d_j P] P`` from the stored face-coordinate derivatives;
    ``tr(F ^ F)`` density is ``2 (F01F23 - F02F13 + F03F12)`` traced.
    """
    mesh = field.mesh
    if mesh.ambient_dim != 5:
        raise ValueError("chern_s4 needs a mesh of S^4")
    if field.derivatives is None:
        raise ValueError("projector field has no derivatives; build it with derivatives=True")
    weights = mesh.face_weights()
    total = 0.0
    for face, P, dP in zip(mesh.faces, field.projectors, field.derivatives):
        F = {}
        for i, j in itertools.combinations(range(4), 2):
            comm = dP[i] @ dP[j] - dP[j] @ dP[i]
            F[i, j] = P @ comm @ P
        dens = 0
        for a, b, c, d, sgn in _PAIRINGS:
            dens = dens + sgn * np.einsum("...ij,...ji->...", F[a, b], F[c, d])
        total += face.orientation() * float(np.sum(weights * 2.0 * dens.real))
    return ChernResult.from_raw(_S4_SIGN * (-total / (8 * math.pi ** 2)), "ch2")


def chern_index(sym: Symbol, rank: int, n: int | None = None, resolution: int | None = None) -> ChernResult:
    """Chern number of the rank-``rank`` lower band of ``sym`` over S^(2n)."""
    n = sym.dof if n is None else n
    if n != sym.dof:
        raise ValueError(f"n={n} does not match symbol dof {sym.dof}")
    if n == 1:
        mesh = SphereMesh(3, resolution or 48, "grid")
        return chern_s2_fhs(projector_field(sym, rank, mesh))
    if n == 2:
        mesh = SphereMesh(5, resolution or 9, "gauss")
        return chern_s4(projector_field(sym, rank, mesh, derivatives=True))
    raise UnsupportedDimension(f"Chern index for n={n} (S^{2 * n}) is not supported; n must be 1 or 2")


# ------------------------------------------------------------ n = 1 extras

def _hemisphere_points(north: bool, n_lat: int = 24, n_lon: int = 64) -> np.ndarray:
    lat = np.linspace(0.0, math.pi / 2, n_lat + 1)
    lon = np.linspace(0.0, 2 * math.pi, n_lon, endpoint=False)
    la, lo = np.meshgrid(lat, lon, indexing="ij")
    mu = np.sin(la) * (1 if north else -1)
    return np.stack([mu, np.cos(la) * np.cos(lo), np.cos(la) * np.sin(lo)], axis=-1).reshape(-1, 3)


def _pick_reference(sym: Symbol, rank: int, north: bool, min_norm: float = 1e-6) -> tuple[int, ...]:
    """Coordinate index set ``I`` maximizing ``min |det P_II|`` over a hemisphere."""
    p = _projectors(sym, rank, _hemisphere_points(north))
    best, best_val = None, -1.0
    for idx in itertools.combinations(range(sym.dim), rank):
        sub = p[:, idx][:, :, idx]
        val = float(np.abs(np.linalg.det(sub)).min())
        if val > best_val:
            best, best_val = idx, val
    if best_val < min_norm ** 2:
        side = "northern" if north else "southern"
        raise TopologyError(f"no coordinate frame gives non-vanishing sections on the {side} hemisphere")
    return best


def clutching_function(sym: Symbol, thetas: np.ndarray, rank: int = 1) -> np.ndarray:
    """Equatorial transition ``f21`` with ``s2 = s1 f21``.

    ``s1 = P e_I`` trivializes the hemisphere ``mu >= 0`` and ``s2 = P e_J`` the
    hemisphere ``mu <= 0``; the equator is ``x + i p = e^{i theta}``.  Then
    ``f21 = P_II^{-1} P_IJ``, which for rank one is ``P_ij / P_ii``.  Returns
    shape ``(T,)`` for rank one and ``(T, rank, rank)`` otherwise.
    """
    if sym.dof != 1:
        raise ValueError("clutching function is implemented for n = 1")
    I = list(_pick_reference(sym, rank, north=True))
    J = list(_pick_reference(sym, rank, north=False))
    th = np.asarray(thetas, dtype=float)
    pts = np.stack([np.zeros_like(th), np.cos(th), np.sin(th)], axis=-1)
    p = _projectors(sym, rank, pts)
    f = np.linalg.solve(p[:, I][:, :, I], p[:, I][:, :, J])
    return f[:, 0, 0] if rank == 1 else f


def winding_number(values: np.ndarray) -> int:
    """Winding of a closed sampled loop in C \\ {0}: summed wrapped phase increments."""
    v = np.asarray(values)
    steps = np.angle(np.roll(v, -1) / v)
    return int(round(float(np.sum(steps)) / (2 * math.pi)))


def clutching_winding(sym: Symbol, rank: int = 1, n_theta: int = 256) -> int:
    """Winding number of ``det f21`` around the equator."""
    th = np.linspace(0.0, 2 * math.pi, n_theta, endpoint=False)
    f = clutching_function(sym, th, rank)
    return winding_number(f if rank == 1 else np.linalg.det(f))


# ------------------------------------------------------------------- degree

def _as_real(values: np.ndarray) -> np.ndarray:
    v = np.asarray(values)
    if np.iscomplexobj(v):
        return np.stack([v.real, v.imag], axis=-1).reshape(v.shape[:-1] + (-1,))
    return v.astype(float)


def degree_integral(f: Callable[[np.ndarray], np.ndarray], m: int, resolution: int = 16,
                    fd_step: float = 1e-5) -> float:
    """``1/Vol(S^m) int det(f, d_1 f, .., d_m f) / |f|^(m+1)`` over the cube mesh.

    ``f`` maps points of shape ``(..., m+1)`` on the unit sphere to ``R^(m+1)``
    (complex outputs are read as (re, im) pairs).
    """
    mesh = SphereMesh(m + 1, resolution, "gauss")
    u = mesh.face_coords()
    w = mesh.face_weights()
    total = 0.0
    for face in mesh.faces:
        val = _as_real(f(mesh.embed(face, u)))
        if val.shape[-1] != m + 1:
            raise ValueError(f"f must return {m + 1} real components")
        cols = [val]
        for k in range(m):
            step = np.zeros(m)
            step[k] = fd_step
            hi = _as_real(f(mesh.embed(face, u + step)))
            lo = _as_real(f(mesh.embed(face, u - step)))
            cols.append((hi - lo) / (2 * fd_step))
        jac = np.stack(cols, axis=-1)
        dens = np.linalg.det(jac) / np.linalg.norm(val, axis=-1) ** (m + 1)
        total += face.orientation() * float(np.sum(w * dens))
    vol = 2 * math.pi ** ((m + 1) / 2) / math.gamma((m + 1) / 2)
    return total / vol


def map_degree(f: Callable[[np.ndarray], np.ndarray], m: int, resolution: int = 16) -> int:
    """Degree of a smooth map S^m -> S^m; raises if the integral is not near an integer."""
    raw = degree_integral(f, m, resolution)
    value = int(round(raw))
    if abs(raw - value) > ACCEPT_RESIDUAL:
        raise TopologyError(f"degree integral {raw:.4f} is not converged; increase resolution")
    return value
