"""Density-based topology optimization: filter, volume constraint, OC and MMA."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .fem import SimpParams  # noqa: F401  (re-exported)
from .mesh import PolyMesh

log = logging.getLogger(__name__)


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "MMA"
    move: float = 0.2
    max_iterations: int = 150
    tolerance: float = 0.01
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7

    def __post_init__(self):
        if self.kind not in ("OC", "MMA"):
            raise ValueError("optimizer kind must be 'OC' or 'MMA'")
        if not 0 < self.move <= 1:
            raise ValueError("move limit must lie in (0, 1]")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


def build_filter(mesh: PolyMesh, radius: float) -> sp.csr_matrix:
    """Linear hat density filter on element centroids; rows sum to one."""
    if radius < 0:
        raise ValueError("filter radius must be non-negative")
    n = mesh.n_elements
    if radius == 0:
        return sp.identity(n, format="csr")
    c = mesh.centroids
    tree = cKDTree(c)
    pairs = tree.query_pairs(radius, output_type="ndarray")
    d = np.linalg.norm(c[pairs[:, 0]] - c[pairs[:, 1]], axis=1)
    w = radius - d
    rows = np.r_[np.arange(n), pairs[:, 0], pairs[:, 1]]
    cols = np.r_[np.arange(n), pairs[:, 1], pairs[:, 0]]
    vals = np.r_[np.full(n, radius), w, w]
    H = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    H.sum_duplicates()
    s = np.asarray(H.sum(axis=1)).ravel()
    return sp.diags(1.0 / s) @ H


def volume(densities, mesh: PolyMesh) -> float:
    return float(np.dot(densities, mesh.areas))


def volume_sensitivity(mesh: PolyMesh, P=None) -> np.ndarray:
    """Gradient of the material volume with respect to the design variables."""
    a = mesh.areas
    return a.copy() if P is None else P.T @ a


def oc_update(rho, dC, dV, volume_target, move, volume_fn=None, rtol=1e-6):
    """Optimality-criteria step with bisection on the volume multiplier.

    ``volume_fn(rho)`` returns the volume of a candidate design; by default
    the volume is the linear form ``dV @ rho``.
    """
    rho = np.asarray(rho, dtype=float)
    dV = np.asarray(dV, dtype=float)
    if np.any(dV <= 0):
        raise OptimizerError("volume sensitivities must be positive")
    vol = volume_fn or (lambda r: float(dV @ r))
    lo = np.maximum(0.0, rho - move)
    hi = np.minimum(1.0, rho + move)
    if move == 0:
        return rho.copy()
    ratio = np.maximum(0.0, -np.asarray(dC, dtype=float)) / dV
    tol = rtol * abs(volume_target)

    def candidate(lam):
        return np.clip(rho * np.sqrt(ratio / lam), lo, hi)

    vmax, vmin = vol(hi), vol(lo)
    if abs(vmax - volume_target) <= tol:
        return hi
    if abs(vmin - volume_target) <= tol:
        return lo
    if not vmin < volume_target < vmax:
        raise OptimizerError("volume target is not bracketed by the move limits")
    if not np.any(ratio > 0):
        raise OptimizerError("no element has a stiffness benefit; bisection cannot bracket")
    l1, l2 = np.log(1e-300), np.log(1e300)
    for _ in range(2000):
        lm = 0.5 * (l1 + l2)
        x = candidate(np.exp(lm))
        v = vol(x)
        if abs(v - volume_target) <= tol:
            return x
        if v > volume_target:
            l1 = lm
        else:
            l2 = lm
        if l2 - l1 < 1e-14:
            break
    raise OptimizerError("OC bisection did not meet the volume target")


@dataclass
class MMAState:
    low: np.ndarray | None = None
    upp: np.ndarray | None = None
    xold1: np.ndarray | None = None
    xold2: np.ndarray | None = None
    iteration: int = 0


def mma_update(x, f0, df0, fval, dfdx, state: MMAState | None = None, xmin=0.0, xmax=1.0,
               move=0.2, asyinit=0.5, asyincr=1.2, asydecr=0.7, asymin=0.01,
               max_dual_iter=500):
    """One MMA step for ``min f0`` subject to a single constraint ``f <= 0``.

    The convex separable subproblem is solved through its one-dimensional
    dual by bisection on the constraint multiplier.
    """
    x = np.asarray(x, dtype=float)
    n = len(x)
    state = state or MMAState()
    xmin = np.broadcast_to(np.asarray(xmin, dtype=float), (n,))
    xmax = np.broadcast_to(np.asarray(xmax, dtype=float), (n,))
    span = np.maximum(xmax - xmin, 1e-5)
    it = state.iteration + 1

    if it <= 2 or state.xold2 is None:
        low = x - asyinit * span
        upp = x + asyinit * span
    else:
        osc = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.ones(n)
        factor[osc > 0] = asyincr
        factor[osc < 0] = asydecr
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        low = np.clip(low, x - 10 * span, x - asymin * span)
        upp = np.clip(upp, x + asymin * span, x + 10 * span)

    alpha = np.maximum.reduce([xmin, low + 0.1 * (x - low), x - move * span])
    beta = np.minimum.reduce([xmax, upp - 0.1 * (upp - x), x + move * span])

    raa0 = 1e-5
    ux, xl = upp - x, x - low

    def approx(g):
        gp, gm = np.maximum(g, 0.0), np.maximum(-g, 0.0)
        extra = 0.001 * (gp + gm) + raa0 / span
        return (gp + extra) * ux ** 2, (gm + extra) * xl ** 2

    p0, q0 = approx(np.asarray(df0, dtype=float))
    p1, q1 = approx(np.asarray(dfdx, dtype=float))
    b = float(np.sum(p1 / ux + q1 / xl) - fval)

    def primal(lam):
        P, Q = np.sqrt(p0 + lam * p1), np.sqrt(q0 + lam * q1)
        return np.clip((low * P + upp * Q) / (P + Q), alpha, beta)

    def gap(xx):
        return float(np.sum(p1 / (upp - xx) + q1 / (xx - low)) - b)

    xnew = primal(0.0)
    if gap(xnew) > 0:
        lo_l, hi_l = 0.0, 1.0
        while gap(primal(hi_l)) > 0:
            hi_l *= 10.0
            if hi_l > 1e14:
                # subproblem infeasible within the move limits: take the most feasible point
                xnew = primal(hi_l)
                break
        else:
            for _ in range(max_dual_iter):
                mid = 0.5 * (lo_l + hi_l)
                if gap(primal(mid)) > 0:
                    lo_l = mid
                else:
                    hi_l = mid
                if hi_l - lo_l <= 1e-14 * max(hi_l, 1e-300):
                    break
            else:
                raise OptimizerError("MMA dual bisection did not converge")
            xnew = primal(hi_l)

    new_state = MMAState(low=low, upp=upp, xold1=x.copy(),
                         xold2=None if state.xold1 is None else state.xold1.copy(),
                         iteration=it)
    return xnew, new_state


@dataclass
class OptimizationResult:
    design: np.ndarray
    physical: np.ndarray
    history: list = field(default_factory=list)
    converged: bool = False
    iterations: int = 0
    last: dict = field(default_factory=dict)


def optimize(evaluate, mesh: PolyMesh, P, volume_fraction, config: OptimizerConfig,
             passive=None, rho0=None, on_iteration=None) -> OptimizationResult:
    """Generic density-optimization loop.

    ``evaluate(rho_phys, iteration)`` returns ``(objective, gradient wrt
    physical densities, info dict)``.  Passive elements are held solid.
    History rows are ``(iteration, objective, volume fraction, change)``.
    The returned design is the last one evaluated (the final update, whose
    change fell below tolerance, is not analysed).
    """
    n = mesh.n_elements
    areas = mesh.areas
    total = areas.sum()
    passive = np.zeros(n, bool) if passive is None else np.asarray(passive, bool)
    active = ~passive
    x = np.full(n, volume_fraction) if rho0 is None else np.array(rho0, dtype=float)
    x[passive] = 1.0
    target = volume_fraction * total

    def physical(rho):
        r = P @ rho
        r[passive] = 1.0
        return r

    # volume as a linear form of the active variables
    a_masked = np.where(passive, 0.0, areas)
    dV_full = P.T @ a_masked
    const_vol = float(areas[passive].sum() + dV_full[passive].sum())
    dV = dV_full[active]

    state = MMAState()
    result = OptimizationResult(design=x, physical=physical(x))
    scale = None
    for it in range(1, config.max_iterations + 1):
        rho_phys = physical(x)
        f, g_phys, info = evaluate(rho_phys, it)
        g_phys = np.where(passive, 0.0, g_phys)
        g = (P.T @ g_phys)[active]
        vol = float(rho_phys @ areas)
        if config.kind == "OC":
            xa = oc_update(x[active], g, dV, target - const_vol, config.move)
        else:
            if scale is None:
                scale = abs(f) if f != 0 else 1.0
            fval = vol / target - 1.0
            xa, state = mma_update(x[active], f / scale, g / scale, fval, dV / target, state,
                                   move=config.move, asyinit=config.asyinit,
                                   asyincr=config.asyincr, asydecr=config.asydecr)
        change = float(np.max(np.abs(xa - x[active]))) if xa.size else 0.0
        result.history.append((it, float(f), vol / total, change))
        result.last = dict(info, objective=float(f))
        log.info("it %3d  obj %.6g  vol %.4f  change %.4f", it, f, vol / total, change)
        if on_iteration is not None:
            on_iteration(it, rho_phys, f, info)
        # the reported design is the last one analysed, so statistics match it
        result.design, result.physical = x, rho_phys
        result.iterations = it
        if change < config.tolerance:
            result.converged = True
            break
        x = x.copy()
        x[active] = xa
    return result


def deterministic_to(problem, rho0=None) -> OptimizationResult:
    """Compliance minimization at the problem's nominal loads (weight ignored)."""
    from .fem import Factor, compliance_sensitivity

    model = problem.fe_model()
    F = problem.nominal_load()
    Ff = F[model.free]
    simp = problem.simp

    def evaluate(rho, it):
        p = simp.penal_at(it)
        K = model.stiffness(simp.modulus(rho, p))
        U = model.expand(Factor(K).solve(Ff))
        C = float(F @ U)
        return C, compliance_sensitivity(model, rho, U, simp, p), {"mu": C, "sigma": 0.0}

    return optimize(evaluate, problem.mesh, problem.filter(), problem.volume_fraction,
                    problem.optimizer, passive=problem.passive_mask(), rho0=rho0)


def checkerboard_fraction(mesh: PolyMesh, rho, threshold=0.5):
    """Fraction of adjacent element pairs forming an isolated solid/void alternation.

    A pair counts when one element is solid, the other void, and at least one
    of them is an island (no neighbour shares its phase).  Requiring both to
    be islands never triggers on Voronoi meshes: adjacent cells always share
    a third neighbour.
    """
    adj = mesh.adjacency().tocoo()
    solid = np.asarray(rho) > threshold
    same = sp.csr_matrix((solid[adj.row] == solid[adj.col], (adj.row, adj.col)),
                         shape=adj.shape)
    isolated = np.asarray(same.sum(axis=1)).ravel() == 0
    upper = adj.row < adj.col
    i, j = adj.row[upper], adj.col[upper]
    bad = (solid[i] != solid[j]) & (isolated[i] | isolated[j])
    return float(bad.sum()) / max(len(i), 1)
