"""Plane linear elasticity on polygonal meshes.

Element stiffness matrices use Wachspress barycentric coordinates (mean
value coordinates for non-convex cells), integrated over a fan of
triangles about the element centroid with a 3-point rule per triangle.
Global stiffness is assembled with the SIMP multiplier
``eps + (1 - eps) * rho**p`` per element; supports are imposed by
eliminating constrained degrees of freedom.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .mesh import PolyMesh, polygon_area_centroid


class SingularSystemError(RuntimeError):
    def __init__(self, msg, pivot=None):
        super().__init__(msg if pivot is None else f"{msg} (pivot at dof {pivot})")
        self.pivot = pivot


@dataclass(frozen=True)
class Material:
    E0: float = 1.0
    nu: float = 0.3
    Emin: float = 1e-9
    plane: str = "stress"

    def __post_init__(self):
        if not self.E0 > 0:
            raise ValueError("E0 must be positive")
        if not 0.0 <= self.nu < 0.5:
            raise ValueError("Poisson ratio must lie in [0, 0.5)")
        if not 0.0 < self.Emin < self.E0:
            raise ValueError("need 0 < Emin < E0")
        if self.plane not in ("stress", "strain"):
            raise ValueError("plane must be 'stress' or 'strain'")

    @property
    def eps(self):
        return self.Emin / self.E0

    def elasticity_matrix(self):
        E, nu = self.E0, self.nu
        if self.plane == "stress":
            return E / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
        c = E / ((1 + nu) * (1 - 2 * nu))
        return c * np.array([[1 - nu, nu, 0], [nu, 1 - nu, 0], [0, 0, (1 - 2 * nu) / 2]])


@dataclass(frozen=True)
class SimpParams:
    penal: float = 3.0
    eps: float = 1e-9
    continuation: tuple = ()

    def __post_init__(self):
        if self.penal < 1:
            raise ValueError("SIMP penalty must be >= 1")
        if not 0 < self.eps < 1:
            raise ValueError("SIMP eps must lie in (0, 1)")

    def penal_at(self, iteration):
        p = self.penal
        for it, val in self.continuation:
            if iteration >= it:
                p = val
        return p

    def modulus(self, rho, penal=None):
        p = self.penal if penal is None else penal
        return self.eps + (1.0 - self.eps) * rho ** p

    def dmodulus(self, rho, penal=None):
        p = self.penal if penal is None else penal
        return p * (1.0 - self.eps) * rho ** (p - 1)


@dataclass
class BoundaryConditions:
    """Supports and loads referenced by mesh region name.

    ``fixed`` maps a region to the constrained components (``"x"``, ``"y"``).
    ``point_loads`` is a list of ``(region, (fx, fy))``; the force goes to
    every node of the region.  ``distributed`` maps a region to a function
    ``q(x, y) -> (qx, qy)`` giving load per unit length.
    """

    fixed: dict = field(default_factory=dict)
    point_loads: list = field(default_factory=list)
    distributed: dict = field(default_factory=dict)

    def fixed_dofs(self, mesh: PolyMesh) -> np.ndarray:
        dofs = []
        for region, comps in self.fixed.items():
            nodes = _region(mesh, region)
            for c in comps:
                dofs.append(2 * nodes + {"x": 0, "y": 1}[c])
        if not dofs:
            return np.empty(0, dtype=np.int64)
        return np.unique(np.concatenate(dofs))

    def load_vector(self, mesh: PolyMesh) -> np.ndarray:
        F = np.zeros(2 * mesh.n_nodes)
        for region, force in self.point_loads:
            nodes = _region(mesh, region)
            F[2 * nodes] += force[0]
            F[2 * nodes + 1] += force[1]
        for region, q in self.distributed.items():
            F += distributed_load(mesh, region, q)
        return F


def _region(mesh, region):
    if isinstance(region, (int, np.integer)):
        return np.array([region])
    try:
        return mesh.boundary[region]
    except KeyError:
        raise KeyError(f"unknown mesh region {region!r}") from None


def region_edges(mesh: PolyMesh, region: str) -> np.ndarray:
    """Boundary edges whose two end nodes both belong to ``region``."""
    nodes = _region(mesh, region)
    edges = mesh.boundary_edges()
    inside = np.isin(edges, nodes).all(axis=1)
    return edges[inside]


def distributed_load(mesh: PolyMesh, region: str, q: Callable) -> np.ndarray:
    """Nodal forces from load per length ``q`` by trapezoidal lumping."""
    F = np.zeros(2 * mesh.n_nodes)
    edges = region_edges(mesh, region)
    if edges.size == 0:
        raise ValueError(f"region {region!r} has no boundary edges")
    a, b = mesh.nodes[edges[:, 0]], mesh.nodes[edges[:, 1]]
    half = 0.5 * np.linalg.norm(b - a, axis=1)
    for end, xy in ((edges[:, 0], a), (edges[:, 1], b)):
        qx, qy = np.broadcast_arrays(*q(xy[:, 0], xy[:, 1]))
        np.add.at(F, 2 * end, half * qx)
        np.add.at(F, 2 * end + 1, half * qy)
    return F


# --------------------------------------------------------------------------
# Shape functions

def _tri_rule():
    bary = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    return bary, np.full(3, 1 / 3)


def quadrature_points(xy: np.ndarray):
    """Centroid-fan triangulation with a 3-point rule in each triangle.

    ``xy`` has shape ``(..., k, 2)``.  Returns points ``(..., 3k, 2)`` and
    weights ``(..., 3k)`` summing to the polygon area.
    """
    k = xy.shape[-2]
    x, y = xy[..., 0], xy[..., 1]
    xn, yn = np.roll(x, -1, axis=-1), np.roll(y, -1, axis=-1)
    cross = x * yn - xn * y
    area = 0.5 * cross.sum(-1)
    c = np.stack([((x + xn) * cross).sum(-1), ((y + yn) * cross).sum(-1)], -1) / (6 * area[..., None])
    a = np.broadcast_to(c[..., None, :], xy.shape)
    b, d = xy, np.roll(xy, -1, axis=-2)
    tri_area = 0.5 * ((b[..., 0] - a[..., 0]) * (d[..., 1] - a[..., 1])
                      - (b[..., 1] - a[..., 1]) * (d[..., 0] - a[..., 0]))
    bary, w = _tri_rule()
    pts = (bary[:, 0, None, None] * a[..., None, :, :] + bary[:, 1, None, None] * b[..., None, :, :]
           + bary[:, 2, None, None] * d[..., None, :, :])
    pts = pts.reshape(*xy.shape[:-2], 3 * k, 2)
    wts = (w[:, None] * tri_area[..., None, :]).reshape(*xy.shape[:-2], 3 * k)
    return pts, wts


def wachspress(xy: np.ndarray, pts: np.ndarray):
    """Wachspress coordinates and gradients of a convex CCW polygon.

    ``xy`` is ``(..., k, 2)``, ``pts`` is ``(..., q, 2)``.  Returns
    ``phi`` ``(..., q, k)`` and ``dphi`` ``(..., q, k, 2)``.
    """
    edge = np.roll(xy, -1, axis=-2) - xy
    normal = np.stack([edge[..., 1], -edge[..., 0]], -1)
    normal /= np.linalg.norm(normal, axis=-1, keepdims=True)
    # h[..., q, i]: distance from point q to edge i
    h = np.einsum("...ik,...ik->...i", xy, normal)[..., None, :] - np.einsum(
        "...qk,...ik->...qi", pts, normal)
    p = normal[..., None, :, :] / h[..., None]
    pm = np.roll(p, 1, axis=-2)
    w = pm[..., 0] * p[..., 1] - pm[..., 1] * p[..., 0]
    phi = w / w.sum(-1, keepdims=True)
    R = pm + p
    dphi = phi[..., None] * (R - np.einsum("...i,...ik->...k", phi, R)[..., None, :])
    return phi, dphi


def _mean_value_phi(xy, pt):
    d = xy - pt
    r = np.sqrt(d[:, 0] ** 2 + d[:, 1] ** 2)
    dn = np.roll(d, -1, axis=0)
    rn = np.roll(r, -1)
    cross = d[:, 0] * dn[:, 1] - d[:, 1] * dn[:, 0]
    dot = d[:, 0] * dn[:, 0] + d[:, 1] * dn[:, 1]
    t = (r * rn - dot) / cross
    w = (np.roll(t, 1) + t) / r
    return w / w.sum()


def mean_value(xy: np.ndarray, pts: np.ndarray):
    """Mean value coordinates of a star-shaped polygon; gradients by complex step."""
    h = 1e-30
    phi = np.empty((len(pts), len(xy)))
    dphi = np.empty((len(pts), len(xy), 2))
    for q, pt in enumerate(pts):
        phi[q] = _mean_value_phi(xy, pt)
        for k, step in enumerate((1.0, 1j)):
            shift = np.array([h, 0.0]) if k == 0 else np.array([0.0, h])
            dphi[q, :, k] = _mean_value_phi(xy.astype(complex), pt + 1j * shift).imag / h
    return phi, dphi


def is_convex(xy):
    a = xy - np.roll(xy, 1, axis=0)
    b = np.roll(xy, -1, axis=0) - xy
    return bool(np.all(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0] > 0))


def _strain_matrix(dphi):
    k = dphi.shape[-2]
    B = np.zeros((*dphi.shape[:-2], 3, 2 * k))
    B[..., 0, 0::2] = dphi[..., 0]
    B[..., 1, 1::2] = dphi[..., 1]
    B[..., 2, 0::2] = dphi[..., 1]
    B[..., 2, 1::2] = dphi[..., 0]
    return B


def element_stiffness(xy, material: Material) -> np.ndarray:
    """Solid-material stiffness matrix of one polygon, dofs ``(u0x, u0y, u1x, ...)``."""
    xy = np.asarray(xy, dtype=float)
    if len(xy) < 3:
        raise ValueError("element needs at least 3 nodes")
    area, _ = polygon_area_centroid(xy)
    scale = np.ptp(xy, axis=0).max() ** 2
    if area <= 1e-12 * scale:
        raise ValueError("degenerate polygon")
    return _stiffness_batch(xy[None], material)[0]


def _consistent_gradients(xy, wts, dphi):
    """Shift shape-function gradients by a per-element constant so that the
    quadrature reproduces the divergence theorem exactly.

    The fan rule integrates rational shape-function gradients only
    approximately, which breaks the patch test; after the shift
    ``sum_q w_q grad phi_i(x_q)`` equals the boundary integral of
    ``phi_i n``, which is exact because the coordinates are linear on edges.
    Linear precision and the rigid-body null space are preserved.
    """
    edge = np.roll(xy, -1, axis=-2) - xy
    nl = np.stack([edge[..., 1], -edge[..., 0]], -1)        # outward normal * length
    boundary = 0.5 * (nl + np.roll(nl, 1, axis=-2))
    area = wts.sum(-1)
    quad = np.einsum("eq,eqkd->ekd", wts, dphi)
    return dphi + ((boundary - quad) / area[:, None, None])[:, None]


def _stiffness_batch(xy, material):
    pts, wts = quadrature_points(xy)
    convex = np.array([is_convex(p) for p in xy])
    dphi = np.empty((*pts.shape[:-1], xy.shape[-2], 2))
    if convex.any():
        dphi[convex] = wachspress(xy[convex], pts[convex])[1]
    for i in np.flatnonzero(~convex):
        dphi[i] = mean_value(xy[i], pts[i])[1]
    dphi = _consistent_gradients(xy, wts, dphi)
    B = _strain_matrix(dphi)
    D = material.elasticity_matrix()
    return np.einsum("eq,eqai,ab,eqbj->eij", wts, B, D, B)


# --------------------------------------------------------------------------
# Global system

def element_dofs(e):
    return np.stack([2 * e, 2 * e + 1], axis=1).ravel()


class FEModel:
    """Cached element matrices and reduced sparsity pattern for one mesh.

    Elements are grouped by node count so stiffness and element energies
    are evaluated as batched array operations.
    """

    def __init__(self, mesh: PolyMesh, material: Material, fixed_dofs=()):
        self.mesh = mesh
        self.material = material
        self.n_dofs = 2 * mesh.n_nodes
        arity = np.array([len(e) for e in mesh.elements])
        self.groups = []
        for k in np.unique(arity):
            ids = np.flatnonzero(arity == k)
            conn = np.array([mesh.elements[i] for i in ids])
            dofs = np.stack([2 * conn, 2 * conn + 1], axis=2).reshape(len(ids), 2 * k)
            ke = _stiffness_batch(mesh.nodes[conn], material)
            self.groups.append((ids, dofs, ke))
        self.set_fixed(fixed_dofs)

    def set_fixed(self, fixed_dofs):
        fixed = np.unique(np.asarray(fixed_dofs, dtype=np.int64))
        free = np.setdiff1d(np.arange(self.n_dofs), fixed)
        self.fixed, self.free = fixed, free
        slot = -np.ones(self.n_dofs, dtype=np.int64)
        slot[free] = np.arange(len(free))
        rows, cols, src_e, src_v = [], [], [], []
        offset = 0
        self._ke_flat = []
        for ids, dofs, ke in self.groups:
            m = dofs.shape[1]
            r = np.repeat(dofs, m, axis=1)
            c = np.tile(dofs, (1, m))
            rows.append(r.ravel())
            cols.append(c.ravel())
            src_e.append(np.repeat(ids, m * m))
            self._ke_flat.append(ke.reshape(-1))
            offset += r.size
        rows, cols = np.concatenate(rows), np.concatenate(cols)
        self._entry_elem = np.concatenate(src_e)
        self._ke_all = np.concatenate(self._ke_flat)
        # full pattern
        self._full = self._pattern(rows, cols, self.n_dofs)
        rf, cf = slot[rows], slot[cols]
        keep = (rf >= 0) & (cf >= 0)
        self._keep = keep
        self._red = self._pattern(rf[keep], cf[keep], len(free))

    @staticmethod
    def _pattern(rows, cols, n):
        key = cols.astype(np.int64) * n + rows
        uniq, pos = np.unique(key, return_inverse=True)
        c, r = np.divmod(uniq, n)
        indptr = np.searchsorted(c, np.arange(n + 1))
        return pos, r, indptr, n

    def _build(self, pattern, values):
        pos, r, indptr, n = pattern
        data = np.bincount(pos, weights=values, minlength=len(r))
        return sp.csc_matrix((data, r, indptr), shape=(n, n))

    def stiffness(self, multipliers, reduced=True):
        vals = multipliers[self._entry_elem] * self._ke_all
        if reduced:
            return self._build(self._red, vals[self._keep])
        return self._build(self._full, vals)

    def expand(self, Uf):
        U = np.zeros((self.n_dofs,) + Uf.shape[1:])
        U[self.free] = Uf
        return U

    def element_energies(self, U):
        """``u_e^T k_e u_e`` for every element; ``U`` is ``(n_dofs,)`` or ``(n_dofs, m)``."""
        single = U.ndim == 1
        U2 = U[:, None] if single else U
        out = np.empty((self.mesh.n_elements, U2.shape[1]))
        for ids, dofs, ke in self.groups:
            ue = U2[dofs]  # (n, 2k, m)
            out[ids] = np.einsum("eim,eij,ejm->em", ue, ke, ue)
        return out[:, 0] if single else out


def assemble(mesh: PolyMesh, densities, material: Material, simp: SimpParams,
             model: FEModel | None = None):
    """Full (unconstrained) global stiffness ``sum_e simp(rho_e) k_e``."""
    model = model or FEModel(mesh, material)
    rho = np.asarray(densities, dtype=float)
    if rho.shape != (mesh.n_elements,):
        raise ValueError("one density per element required")
    return model.stiffness(simp.modulus(rho), reduced=False)


@dataclass
class LinearSystem:
    K: sp.csc_matrix
    F: np.ndarray
    free: np.ndarray
    n_dofs: int
    U: np.ndarray | None = None


def apply_bcs(K, F, bcs: BoundaryConditions | None = None, mesh: PolyMesh | None = None,
              fixed_dofs=None) -> LinearSystem:
    """Reduce ``K U = F`` by eliminating fixed dofs (homogeneous supports)."""
    if fixed_dofs is None:
        fixed_dofs = bcs.fixed_dofs(mesh)
    n = K.shape[0]
    free = np.setdiff1d(np.arange(n), np.asarray(fixed_dofs, dtype=np.int64))
    K = sp.csc_matrix(K)
    Kf = K[free][:, free].tocsc()
    return LinearSystem(Kf, np.asarray(F, dtype=float)[free], free, n)


class Factor:
    """Symmetric-ordered LU without pivoting; rejects non-positive pivots.

    For an SPD matrix the diagonal of U holds the pivots of an LDL^T
    factorization, so the check doubles as a positive-definiteness test.
    """

    def __init__(self, K, pivot_tol=1e-13):
        K = sp.csc_matrix(K)
        if K.shape[0] == 0:
            raise SingularSystemError("no free degrees of freedom")
        self.K = K
        try:
            self.lu = splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                           options=dict(SymmetricMode=True))
        except RuntimeError as exc:
            raise SingularSystemError(f"factorization failed: {exc}") from None
        d = self.lu.U.diagonal()
        dmax = np.abs(d).max()
        bad = np.flatnonzero(~(d > pivot_tol * dmax))
        if bad.size:
            col = int(self.lu.perm_c[bad[0]]) if bad[0] < len(self.lu.perm_c) else int(bad[0])
            kind = "singular" if abs(d[bad[0]]) <= pivot_tol * dmax else "not positive definite"
            raise SingularSystemError(f"stiffness matrix is {kind}", pivot=col)

    def solve(self, F):
        U = self.lu.solve(F)
        R = F - self.K @ U
        # one step of refinement keeps residuals small at high density contrast
        if np.linalg.norm(R) > 1e-12 * max(np.linalg.norm(F), 1e-300):
            U = U + self.lu.solve(R)
        return U


def solve(system: LinearSystem, factor: Factor | None = None) -> np.ndarray:
    """Solve the reduced system; returns the full displacement vector."""
    factor = factor or Factor(system.K)
    Uf = factor.solve(system.F)
    U = np.zeros((system.n_dofs,) + Uf.shape[1:])
    U[system.free] = Uf
    system.U = U
    return U


def compliance(F, U):
    return float(np.dot(F, U))


def compliance_sensitivity(model: FEModel, densities, U, simp: SimpParams, penal=None):
    """``dC/drho_e = -simp'(rho_e) u_e^T k_e u_e``, one column per load case."""
    e = model.element_energies(U)
    d = simp.dmodulus(np.asarray(densities), penal)
    return -(d[:, None] * e if e.ndim == 2 else d * e)
