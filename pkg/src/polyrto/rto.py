"""Robust topology optimization under load uncertainty.

Per design iteration the stiffness matrix is assembled and factorized once;
every germ realization (collocation node or Monte Carlo sample) is then a
right-hand side against the shared factorization.  Compliances and their
element sensitivities are reduced on the fly into the mean/std estimators,
so memory does not grow with the number of realizations.
"""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

from . import stochastic as st
from .fem import Factor, FEModel, Material, SimpParams, distributed_load
from .mesh import Domain2D, PolyMesh
from .randfield import CorrelationModel, KlBasis, correlation_matrix, kl_decompose
from .topopt import OptimizationResult, OptimizerConfig, build_filter, deterministic_to, optimize

log = logging.getLogger(__name__)

CHUNK = 256


# --------------------------------------------------------------------------
# Load models

def _nodes(mesh: PolyMesh, region):
    try:
        return mesh.boundary[region]
    except KeyError:
        raise KeyError(f"load references unknown region {region!r}") from None


@dataclass(frozen=True)
class MagnitudeLoads:
    """Point loads ``magnitude * direction`` with random magnitudes."""

    regions: tuple
    directions: tuple
    specs: tuple
    kind = "random_magnitudes"

    def __post_init__(self):
        if not len(self.regions) == len(self.directions) == len(self.specs):
            raise ValueError("one direction and one distribution per load")

    @property
    def germ(self):
        return st.Germ(self.specs)

    def bind(self, mesh):
        n = 2 * mesh.n_nodes
        B = np.zeros((n, len(self.regions)))
        for k, (reg, d) in enumerate(zip(self.regions, self.directions)):
            nodes = _nodes(mesh, reg)
            B[2 * nodes, k] += d[0]
            B[2 * nodes + 1, k] += d[1]
        return lambda X: B @ np.asarray(X, dtype=float).T


@dataclass(frozen=True)
class AngleLoads:
    """Point loads of fixed magnitude whose angles (degrees) are random."""

    regions: tuple
    magnitudes: tuple
    specs: tuple
    kind = "random_angles"

    def __post_init__(self):
        if not len(self.regions) == len(self.magnitudes) == len(self.specs):
            raise ValueError("one magnitude and one distribution per load")

    @property
    def germ(self):
        return st.Germ(self.specs)

    def bind(self, mesh):
        n = 2 * mesh.n_nodes
        targets = [_nodes(mesh, r) for r in self.regions]

        def realize(X):
            X = np.atleast_2d(np.asarray(X, dtype=float))
            F = np.zeros((n, len(X)))
            for k, (nodes, mag) in enumerate(zip(targets, self.magnitudes)):
                # degree-exact trig keeps -90 deg loads exactly vertical
                fx, fy = mag * special.cosdg(X[:, k]), mag * special.sindg(X[:, k])
                F[2 * nodes] += fx
                F[2 * nodes + 1] += fy
            return F

        return realize


@dataclass(frozen=True)
class FieldLoads:
    """Gaussian load-per-length field along a straight horizontal boundary region.

    ``correlation`` is ``constant`` (fully correlated, one random variable) or
    ``exponential`` (KL-discretized with ``nu_kl`` modes).  ``std`` is the
    pointwise standard deviation under the default ``scale="variance"``
    reading, where the kernel prefactor is ``std**2``; ``scale="std"`` uses
    ``std`` itself as the prefactor.
    """

    region: str
    mean: float = 1.0
    std: float = 0.3
    correlation: str = "constant"
    l_corr: float | None = None
    nu_kl: int | None = None
    tau: float = 0.9
    n_grid: int = 200
    span: tuple = (0.0, 1.0)
    direction: tuple = (0.0, -1.0)
    scale: str = "variance"
    kind = "random_field"

    def __post_init__(self):
        if self.scale not in ("variance", "std"):
            raise ValueError("scale must be 'variance' or 'std'")
        if self.correlation not in ("constant", "exponential"):
            raise ValueError("correlation must be 'constant' or 'exponential'")

    @property
    def kernel_prefactor(self):
        return self.std ** 2 if self.scale == "variance" else self.std

    @property
    def pointwise_std(self):
        return float(np.sqrt(self.kernel_prefactor))

    def correlation_model(self):
        return CorrelationModel.on_segment(self.correlation, self.kernel_prefactor, self.span[0],
                                           self.span[1], self.n_grid, self.l_corr, self.mean)

    @cached_property
    def kl(self) -> KlBasis:
        return kl_decompose(correlation_matrix(self.correlation_model()), self.tau, self.nu_kl)

    @property
    def germ(self):
        if self.correlation == "constant":
            # the fully correlated field is a single Gaussian amplitude
            return st.Germ([st.RandomVariableSpec.normal(self.mean, self.pointwise_std, "load")])
        return st.Germ([st.RandomVariableSpec.normal(0.0, 1.0, f"kl{k + 1}")
                        for k in range(self.kl.nu_kl)])

    def _lumped(self, mesh, values_on_grid):
        grid = np.linspace(self.span[0], self.span[1], self.n_grid)
        dx, dy = self.direction

        def q(x, y):
            v = np.interp(x, grid, values_on_grid)
            return dx * v, dy * v
        return distributed_load(mesh, self.region, q)

    def bind(self, mesh):
        unit = self._lumped(mesh, np.ones(self.n_grid))
        if self.correlation == "constant":
            return lambda X: unit[:, None] * np.atleast_2d(np.asarray(X, dtype=float))[:, 0]
        kl = self.kl
        modes = kl.vectors * np.sqrt(kl.retained)
        B = np.stack([self._lumped(mesh, modes[:, k]) for k in range(kl.nu_kl)], axis=1)
        F0 = self.mean * unit
        return lambda X: F0[:, None] + B @ np.atleast_2d(np.asarray(X, dtype=float)).T


def realize_load_vector(model, mesh: PolyMesh, x_physical) -> np.ndarray:
    """Global load vector for one vector of physical parameters."""
    return model.bind(mesh)(np.atleast_2d(x_physical))[:, 0]


# --------------------------------------------------------------------------
# Problem

@dataclass
class RtoProblem:
    mesh: PolyMesh
    domain: Domain2D
    fixed: dict
    load_model: object
    material: Material = field(default_factory=Material)
    simp: SimpParams = field(default_factory=SimpParams)
    filter_radius: float = 1.5
    volume_fraction: float = 0.3
    weight: float = 1.0
    p_pc: int = 5
    nodes_per_dim: int | None = None
    mode: str = "gpc"
    n_mc: int = 10_000
    seed: int = 0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    passive_top_rows: int = 0
    threads: int = 1

    def __post_init__(self):
        if not 0 < self.volume_fraction <= 1:
            raise ValueError("volume fraction must lie in (0, 1]")
        if self.weight < 0:
            raise ValueError("weight must be non-negative")
        if self.mode not in ("gpc", "mc"):
            raise ValueError("mode must be 'gpc' or 'mc'")

    # duck-typed interface used by topopt.deterministic_to
    def fe_model(self) -> FEModel:
        return self._fe_model

    @cached_property
    def _fe_model(self):
        from .fem import BoundaryConditions
        fixed = BoundaryConditions(fixed=self.fixed).fixed_dofs(self.mesh)
        return FEModel(self.mesh, self.material, fixed)

    def filter(self):
        return self._filter

    @cached_property
    def _filter(self):
        return build_filter(self.mesh, self.filter_radius)

    def passive_mask(self):
        return self._passive

    @cached_property
    def _passive(self):
        n = self.mesh.n_elements
        if self.passive_top_rows <= 0:
            return np.zeros(n, bool)
        top = self.domain.bounds[3]
        h = np.sqrt(self.domain.area / n)
        return self.mesh.centroids[:, 1] > top - self.passive_top_rows * h

    @cached_property
    def germ(self) -> st.Germ:
        return self.load_model.germ

    @cached_property
    def loads(self):
        return self.load_model.bind(self.mesh)

    def nominal_load(self):
        return self.loads(self.germ.nominal()[None, :])[:, 0]

    @cached_property
    def expansion(self) -> st.PcExpansion:
        n = self.nodes_per_dim or self.p_pc + 1
        grid = st.gauss_grid(self.germ, n)
        return st.PcExpansion(st.multi_indices(self.germ.dim, self.p_pc), grid)

    @cached_property
    def mc_points(self):
        """Physical MC realizations; fixed across iterations (common random numbers)."""
        return self.germ.to_physical(st.sample_germ(self.germ, self.n_mc, self.seed))

    def physical(self, rho):
        r = self.filter() @ np.asarray(rho, dtype=float)
        r[self.passive_mask()] = 1.0
        return r


# --------------------------------------------------------------------------
# Statistics and gradients

@dataclass
class Statistics:
    mu: float
    sigma: float
    grad_mu: np.ndarray | None
    grad_sigma: np.ndarray | None
    compliances: np.ndarray
    solves: int
    coefficients: np.ndarray | None = None


def _point_source(problem: RtoProblem, mode):
    """(count, chunk iterator of (index, physical points), quadrature weights or None)."""
    if mode == "gpc":
        pe = problem.expansion
        grid = pe.grid

        def chunks():
            for idx, pts in grid.chunks(CHUNK):
                yield idx, problem.germ.to_physical(pts)
        return grid.count, chunks, pe.weights
    X = problem.mc_points

    def chunks():
        for start in range(0, len(X), CHUNK):
            idx = np.arange(start, min(start + CHUNK, len(X)))
            yield idx, X[idx]
    return len(X), chunks, None


def compliance_statistics(problem: RtoProblem, rho_phys, mode=None, penal=None,
                          gradients=True) -> Statistics:
    """Mean/std of compliance (and physical-density gradients) for a fixed design."""
    mode = mode or problem.mode
    model = problem.fe_model()
    simp = problem.simp
    p = simp.penal if penal is None else penal
    factor = Factor(model.stiffness(simp.modulus(rho_phys, p)))
    dmod = simp.dmodulus(rho_phys, p) if gradients else None
    free = model.free
    count, chunks, W = _point_source(problem, mode)

    def work(item):
        idx, X = item
        F = problem.loads(X)
        U = model.expand(factor.solve(F[free]))
        C = np.einsum("ij,ij->j", F, U)
        if not gradients:
            return idx, C, None, None
        G = -dmod[:, None] * model.element_energies(U)
        if W is None:
            return idx, C, G.sum(axis=1), G @ C
        w = W[idx]
        return idx, C, G @ w, G @ (w * C)

    if problem.threads > 1:
        with ThreadPoolExecutor(problem.threads) as ex:
            parts = list(ex.map(work, chunks()))
    else:
        parts = [work(item) for item in chunks()]

    C = np.empty(count)
    g1 = g2 = None
    for idx, c, a, b in parts:          # fixed reduction order
        C[idx] = c
        if gradients:
            g1 = a if g1 is None else g1 + a
            g2 = b if g2 is None else g2 + b

    coeffs = None
    if W is None:
        stats = st.mc_estimators(C)
        mu, sigma = stats.mean, stats.std
        if gradients:
            n = count
            g_mu = g1 / n
            g_sig = (g2 - n * mu * g_mu) / ((n - 1) * sigma) if sigma > 1e-12 * abs(mu) else 0 * g_mu
    else:
        mu = float(st.gpc_mean_quadrature(W, C))
        sigma = st.gpc_std_quadrature(W, C, mu)
        if problem.expansion.direct:
            coeffs = problem.expansion.fit(C)
        if gradients:
            g_mu = g1
            g_sig = (g2 - mu * g_mu) / sigma if sigma > 1e-12 * abs(mu) else 0 * g_mu
    if not gradients:
        g_mu = g_sig = None
    return Statistics(mu, sigma, g_mu, g_sig, C, count, coeffs)


def robust_objective_and_gradient(problem: RtoProblem, rho, penal=None):
    """``(C~, mu, sigma, dC~/drho)`` with the gradient taken w.r.t. design variables."""
    rho_phys = problem.physical(rho)
    s = compliance_statistics(problem, rho_phys, penal=penal)
    g_phys = s.grad_mu + problem.weight * s.grad_sigma
    g_phys = np.where(problem.passive_mask(), 0.0, g_phys)
    return s.mu + problem.weight * s.sigma, s.mu, s.sigma, problem.filter().T @ g_phys


# --------------------------------------------------------------------------
# Drivers

@dataclass
class RtoResult:
    densities: np.ndarray           # physical densities of the reported design
    design: np.ndarray
    mu: float
    sigma: float
    weight: float
    history: list                   # (iteration, objective, mu, sigma, volume, change)
    compliances: np.ndarray         # per-point compliances at the reported design
    iterations: int
    converged: bool
    fe_solves: int
    factorizations: int
    wall_seconds: float
    mode: str = "rto-gpc"


def _stats_hook(records):
    def hook(it, rho, f, info):
        records[it] = info
    return hook


def run_rto(problem: RtoProblem, rho0=None, on_iteration=None) -> RtoResult:
    """Minimize ``mu + w sigma`` of compliance subject to the volume bound."""
    t0 = time.perf_counter()
    counters = {"solves": 0, "factorizations": 0}
    last = {}

    def evaluate(rho_phys, it):
        s = compliance_statistics(problem, rho_phys, penal=problem.simp.penal_at(it))
        counters["solves"] += s.solves
        counters["factorizations"] += 1
        last["stats"] = s
        g = s.grad_mu + problem.weight * s.grad_sigma
        return s.mu + problem.weight * s.sigma, g, {"mu": s.mu, "sigma": s.sigma}

    mus = {}

    def hook(it, rho, f, info):
        mus[it] = (info["mu"], info["sigma"])
        if on_iteration is not None:
            on_iteration(it, rho, f, info)

    res = optimize(evaluate, problem.mesh, problem.filter(), problem.volume_fraction,
                   problem.optimizer, passive=problem.passive_mask(), rho0=rho0,
                   on_iteration=hook)
    s = last["stats"]
    history = [(it, f, *mus[it], vol, ch) for it, f, vol, ch in res.history]
    return RtoResult(res.physical, res.design, s.mu, s.sigma, problem.weight, history,
                     s.compliances, res.iterations, res.converged, counters["solves"],
                     counters["factorizations"], time.perf_counter() - t0,
                     "rto-gpc" if problem.mode == "gpc" else "rto-mc")


def run_deterministic(problem: RtoProblem, rho0=None) -> tuple[OptimizationResult, float]:
    t0 = time.perf_counter()
    res = deterministic_to(problem, rho0)
    return res, time.perf_counter() - t0


def run_nonrobust_then_propagate(problem: RtoProblem, n_mc=None, seed=None,
                                 rho0=None) -> RtoResult:
    """Deterministic optimization at nominal loads, then MC propagation on the result."""
    from dataclasses import replace
    t0 = time.perf_counter()
    det = deterministic_to(problem, rho0)
    mc = replace(problem, mode="mc", n_mc=n_mc or problem.n_mc,
                 seed=problem.seed if seed is None else seed)
    # the fresh copy drops cached state, so reuse the already-built operators
    for name in ("_fe_model", "_filter", "_passive", "germ", "loads"):
        mc.__dict__[name] = getattr(problem, name)
    s = compliance_statistics(mc, det.physical, gradients=False)
    history = [(it, f, f, 0.0, vol, ch) for it, f, vol, ch in det.history]
    return RtoResult(det.physical, det.design, s.mu, s.sigma, problem.weight, history,
                     s.compliances, det.iterations, det.converged,
                     det.iterations + s.solves, det.iterations + 1,
                     time.perf_counter() - t0, "nonrobust-propagate")
